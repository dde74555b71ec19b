"""Synthetic scenes, ground-truth relation triples, queries and region proposals.

Scenes are built so that localization genuinely requires relational context:
selected instances get same-class confusers placed such that no stored
relation holds for them, so class similarity alone cannot tell the target
apart from its confusers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import Box, iou
from .vocab import Vocabulary, EmbeddingProvider


class SceneGenerationError(RuntimeError):
    pass


class QuerySamplingError(RuntimeError):
    pass


def relation_holds(predicate: str, subject: Box, obj: Box) -> bool:
    """Analytic truth value of a spatial predicate between two boxes."""
    if predicate == "left_of":
        return subject.cx < obj.cx and abs(subject.cy - obj.cy) < (subject.h + obj.h) / 2.0
    if predicate == "right_of":
        return subject.cx > obj.cx and abs(subject.cy - obj.cy) < (subject.h + obj.h) / 2.0
    if predicate == "above":
        return subject.cy < obj.cy and abs(subject.cx - obj.cx) < (subject.w + obj.w) / 2.0
    if predicate == "below":
        return subject.cy > obj.cy and abs(subject.cx - obj.cx) < (subject.w + obj.w) / 2.0
    if predicate == "inside":
        sx1, sy1, sx2, sy2 = subject.corners()
        ox1, oy1, ox2, oy2 = obj.corners()
        return sx1 >= ox1 and sy1 >= oy1 and sx2 <= ox2 and sy2 <= oy2
    if predicate == "near":
        dist = np.hypot(subject.cx - obj.cx, subject.cy - obj.cy)
        return dist <= 0.5 * (max(subject.w, subject.h) + max(obj.w, obj.h))
    raise ValueError(f"unknown predicate {predicate!r}")


@dataclass(frozen=True)
class Instance:
    id: int
    cls: str
    box: Box


@dataclass
class Scene:
    scene_id: int
    instances: list
    triples: list  # (subject id, predicate, object id)

    def instance_by_id(self, iid: int) -> Instance:
        return self._index()[iid]

    def _index(self):
        return {inst.id: inst for inst in self.instances}

    def class_counts(self):
        counts = {}
        for inst in self.instances:
            counts[inst.cls] = counts.get(inst.cls, 0) + 1
        return counts


@dataclass
class Proposal:
    box: Box
    feature: np.ndarray  # class part (d) + geometry (cx, cy, w, h)
    objectness: float
    matched_instance: int | None


@dataclass
class QueryNode:
    node_id: int
    cls: str
    target: int  # designated instance id, kept through perturbation


@dataclass
class QueryGraph:
    nodes: list
    edges: list  # (source node id, predicate, target node id)

    def node_by_id(self, nid: int) -> QueryNode:
        for n in self.nodes:
            if n.node_id == nid:
                return n
        raise KeyError(nid)

    def predicates(self):
        """Distinct predicates in first-appearance order."""
        seen = []
        for _, pred, _ in self.edges:
            if pred not in seen:
                seen.append(pred)
        return seen

    def copy(self) -> "QueryGraph":
        return QueryGraph(
            nodes=[replace(n) for n in self.nodes],
            edges=[tuple(e) for e in self.edges],
        )


@dataclass
class DatasetConfig:
    n_scenes: int = 100
    n_test_scenes: int = 0
    classes_per_scene: int = 5
    distractors: int = 2          # confusers added per duplicated class
    duplicated_classes: int = 1   # how many relation-bearing instances get confusers
    proposals_per_scene: int = 64
    center_jitter: float = 0.15   # fraction of min(w, h)
    size_jitter: float = 0.15     # lognormal sigma on extents
    feature_noise: float = 0.1    # per-coordinate sigma on the class part
    queries_per_scene: int = 2
    max_query_edges: int = 4
    max_triples: int = 12
    held_out_classes: tuple = ()
    embed_dim: int = 64
    embed_seed: int = 17
    seed: int = 0

    def __post_init__(self):
        self.held_out_classes = tuple(self.held_out_classes)
        for name in ("n_scenes", "classes_per_scene", "proposals_per_scene",
                     "queries_per_scene", "max_query_edges", "max_triples",
                     "embed_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("n_test_scenes", "distractors", "duplicated_classes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("center_jitter", "size_jitter", "feature_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 1 <= self.max_query_edges <= 8:
            raise ValueError(f"max_query_edges must be in 1..8, got {self.max_query_edges}")
        n_instances = self.classes_per_scene + self.duplicated_classes * self.distractors
        if self.proposals_per_scene < n_instances + 2:
            raise ValueError(
                f"proposals_per_scene={self.proposals_per_scene} too small for "
                f"{n_instances} instances plus background"
            )
        if self.duplicated_classes > self.classes_per_scene:
            raise ValueError("duplicated_classes cannot exceed classes_per_scene")

    @property
    def feature_dim(self) -> int:
        return self.embed_dim + 4

    def provider(self) -> EmbeddingProvider:
        return EmbeddingProvider(dim=self.embed_dim, seed=self.embed_seed)


MAX_PLACEMENT_RETRIES = 100
_INSTANCE_OVERLAP_CAP = 0.25


def _sample_box(rng: np.random.Generator) -> Box:
    return Box(
        cx=float(rng.uniform(0.12, 0.88)),
        cy=float(rng.uniform(0.12, 0.88)),
        w=float(rng.uniform(0.10, 0.28)),
        h=float(rng.uniform(0.10, 0.28)),
    )


def _place_clear_of(rng, placed, reject=None):
    """Sample a box overlapping existing ones below the cap; optional extra veto."""
    for _ in range(MAX_PLACEMENT_RETRIES):
        box = _sample_box(rng)
        if any(iou(box, other) >= _INSTANCE_OVERLAP_CAP for other in placed):
            continue
        if reject is not None and reject(box):
            continue
        return box
    raise SceneGenerationError(f"placement failed after {MAX_PLACEMENT_RETRIES} retries")


def _enumerate_triples(instances, predicates):
    triples = []
    for s in instances:
        for o in instances:
            if s.id == o.id:
                continue
            for pred in predicates:
                if relation_holds(pred, s.box, o.box):
                    triples.append((s.id, pred, o.id))
    return triples


def generate_scene(cfg: DatasetConfig, vocab: Vocabulary, rng: np.random.Generator,
                   scene_id: int = 0, allow_held_out: bool = False) -> Scene:
    """One scene: core instances with relations, plus relation-free confusers.

    Every stored triple holds analytically for its boxes, confusers appear in
    no triple, and each confuser is placed so that none of its twin's stored
    relations hold with the confuser substituted in.
    """
    pool = [c for c in vocab.entity_classes
            if allow_held_out or c not in cfg.held_out_classes]
    if len(pool) < cfg.classes_per_scene:
        raise SceneGenerationError("not enough entity classes for classes_per_scene")

    for _ in range(MAX_PLACEMENT_RETRIES):
        classes = [pool[i] for i in rng.choice(len(pool), cfg.classes_per_scene, replace=False)]
        boxes = []
        try:
            for _ in classes:
                boxes.append(_place_clear_of(rng, boxes))
        except SceneGenerationError:
            continue
        core = [Instance(i, c, b) for i, (c, b) in enumerate(zip(classes, boxes))]
        candidates = _enumerate_triples(core, vocab.predicates)
        related_ids = sorted({t[0] for t in candidates} | {t[2] for t in candidates})
        if len(related_ids) < cfg.duplicated_classes or not candidates:
            continue

        dup_ids = [related_ids[i] for i in
                   rng.choice(len(related_ids), cfg.duplicated_classes, replace=False)]
        instances = list(core)
        ok = True
        for dup_id in dup_ids:
            twin = core[dup_id]
            as_subject = [(pred, core[o].box) for s, pred, o in candidates if s == dup_id]
            as_object = [(core[s].box, pred) for s, pred, o in candidates if o == dup_id]

            def confusable(box, as_subject=as_subject, as_object=as_object):
                return any(relation_holds(p, box, ob) for p, ob in as_subject) or any(
                    relation_holds(p, sb, box) for sb, p in as_object
                )

            try:
                for _ in range(cfg.distractors):
                    box = _place_clear_of(rng, [i.box for i in instances], reject=confusable)
                    instances.append(Instance(len(instances), twin.cls, box))
            except SceneGenerationError:
                ok = False
                break
        if not ok:
            continue

        if len(candidates) > cfg.max_triples:
            # keep one incident triple per duplicated instance, subsample the rest
            must = set()
            for dup_id in dup_ids:
                incident = [i for i, t in enumerate(candidates)
                            if t[0] == dup_id or t[2] == dup_id]
                must.add(int(incident[int(rng.integers(len(incident)))]))
            rest = [i for i in range(len(candidates)) if i not in must]
            extra = rng.choice(len(rest), cfg.max_triples - len(must), replace=False)
            keep = sorted(must | {rest[i] for i in extra})
            triples = [candidates[i] for i in keep]
        else:
            triples = candidates
        return Scene(scene_id=scene_id, instances=instances, triples=triples)

    raise SceneGenerationError(
        f"scene generation failed after {MAX_PLACEMENT_RETRIES} attempts"
    )


def _jittered_box(inst: Box, cfg: DatasetConfig, rng: np.random.Generator) -> Box:
    scale = min(inst.w, inst.h)
    for _ in range(1000):
        box = Box(
            cx=inst.cx + float(rng.normal(0.0, cfg.center_jitter)) * scale,
            cy=inst.cy + float(rng.normal(0.0, cfg.center_jitter)) * scale,
            w=inst.w * float(np.exp(rng.normal(0.0, cfg.size_jitter))),
            h=inst.h * float(np.exp(rng.normal(0.0, cfg.size_jitter))),
        )
        if iou(box, inst) >= 0.5:
            return box
    return Box(inst.cx, inst.cy, inst.w, inst.h)


def generate_proposals(scene: Scene, cfg: DatasetConfig, provider: EmbeddingProvider,
                       rng: np.random.Generator) -> list:
    """Candidate regions: jittered instance copies plus uniform background boxes.

    Features are a noisy class prototype with the box geometry appended;
    background features use a random unit vector instead of a prototype.
    """
    n_inst = len(scene.instances)
    total = cfg.proposals_per_scene
    n_background = max(2, round(0.3 * total))
    n_jittered = total - n_background
    if n_jittered < n_inst:
        n_jittered = n_inst
        n_background = total - n_jittered

    # one guaranteed copy per instance; extras land on uniformly random
    # instances so proposal multiplicity carries no identity signal
    owners = list(range(n_inst))
    owners += [int(rng.integers(n_inst)) for _ in range(n_jittered - n_inst)]
    proposals = []
    for owner in owners:
        inst = scene.instances[owner]
        box = _jittered_box(inst.box, cfg, rng)
        head = provider.embed(inst.cls) + rng.normal(0.0, cfg.feature_noise, provider.dim)
        proposals.append((box, head))
    for _ in range(n_background):
        box = Box(
            cx=float(rng.uniform(0.05, 0.95)),
            cy=float(rng.uniform(0.05, 0.95)),
            w=float(rng.uniform(0.08, 0.30)),
            h=float(rng.uniform(0.08, 0.30)),
        )
        head = rng.standard_normal(provider.dim)
        head = head / np.linalg.norm(head)
        proposals.append((box, head))

    order = rng.permutation(len(proposals))
    out = []
    for idx in order:
        box, head = proposals[idx]
        overlaps = [iou(box, inst.box) for inst in scene.instances]
        best = int(np.argmax(overlaps)) if overlaps else 0
        objectness = float(overlaps[best]) if overlaps else 0.0
        matched = scene.instances[best].id if overlaps and overlaps[best] >= 0.5 else None
        feature = np.concatenate([head, [box.cx, box.cy, box.w, box.h]])
        out.append(Proposal(box=box, feature=feature, objectness=objectness,
                            matched_instance=matched))
    return out


def _connected_components(node_ids, edges):
    parent = {n: n for n in node_ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, _, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    comps = {}
    for n in node_ids:
        comps.setdefault(find(n), []).append(n)
    return list(comps.values())


def sample_query(scene: Scene, n_edges: int, rng: np.random.Generator) -> QueryGraph:
    """Connected query of exactly `n_edges` triples lifted from the scene."""
    if not 1 <= n_edges <= 8:
        raise QuerySamplingError(f"n_edges must be in 1..8, got {n_edges}")
    triples = scene.triples
    if n_edges > len(triples):
        raise QuerySamplingError(
            f"scene {scene.scene_id} has {len(triples)} triples, need {n_edges}"
        )
    starts = rng.permutation(len(triples))
    for start in starts:
        chosen = [triples[start]]
        used = {int(start)}
        touched = {chosen[0][0], chosen[0][2]}
        while len(chosen) < n_edges:
            frontier = [
                i for i, t in enumerate(triples)
                if i not in used and (t[0] in touched or t[2] in touched)
            ]
            if not frontier:
                break
            pick = frontier[int(rng.integers(len(frontier)))]
            used.add(pick)
            chosen.append(triples[pick])
            touched |= {triples[pick][0], triples[pick][2]}
        if len(chosen) == n_edges:
            node_of = {}
            nodes = []
            index = scene._index()
            for s, _, o in chosen:
                for iid in (s, o):
                    if iid not in node_of:
                        node_of[iid] = len(nodes)
                        nodes.append(QueryNode(len(nodes), index[iid].cls, iid))
            edges = [(node_of[s], pred, node_of[o]) for s, pred, o in chosen]
            return QueryGraph(nodes=nodes, edges=edges)
    raise QuerySamplingError(
        f"scene {scene.scene_id}: no connected subgraph with {n_edges} edges"
    )


def perturb_query(query: QueryGraph, p: float, vocab: Vocabulary,
                  rng: np.random.Generator, allow_deletion: bool = True) -> QueryGraph:
    """Noise model: per edge, with probability p, replace the subject, object
    or predicate token by a synonym, or delete the edge.

    Node targets are never touched, so evaluation against the original ground
    truth stays well defined.  If deletions disconnect the graph the largest
    remaining component is kept (ties to the lowest node id).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"perturbation probability must be in [0, 1], got {p}")
    out = query.copy()
    n_actions = 4 if allow_deletion else 3
    kept_edges = []
    for src, pred, dst in out.edges:
        if rng.random() >= p:
            kept_edges.append((src, pred, dst))
            continue
        action = int(rng.integers(n_actions))
        if action == 0:
            node = out.node_by_id(src)
            node.cls = vocab.synonym_of(node.cls, rng) if node.cls in vocab.tokens() else node.cls
            kept_edges.append((src, pred, dst))
        elif action == 1:
            node = out.node_by_id(dst)
            node.cls = vocab.synonym_of(node.cls, rng) if node.cls in vocab.tokens() else node.cls
            kept_edges.append((src, pred, dst))
        elif action == 2:
            new_pred = vocab.synonym_of(pred, rng) if pred in vocab.tokens() else pred
            kept_edges.append((src, new_pred, dst))
        # action == 3: drop the edge
    out.edges = kept_edges

    node_ids = [n.node_id for n in out.nodes]
    comps = _connected_components(node_ids, out.edges)
    if len(comps) > 1:
        comps.sort(key=lambda c: (-len(c), min(c)))
        keep = set(comps[0])
        out.nodes = [n for n in out.nodes if n.node_id in keep]
        out.edges = [(s, pr, d) for s, pr, d in out.edges if s in keep and d in keep]
    return out
