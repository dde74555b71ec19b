"""Inference, recall metrics, and the analysis harnesses.

A localization is correct when one of the top-k boxes for a query node has
IoU >= 0.5 with that node's designated target instance.  Breakdowns cover
query size, ambiguous nodes (the node's class appears more than once in the
scene, so class similarity alone cannot identify the target), and classes
held out of training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .boxes import Box, iou
from .mpnet import MessagePassingConfig
from .scenegen import (
    DatasetConfig,
    Instance,
    QueryGraph,
    QueryNode,
    Scene,
    generate_proposals,
    perturb_query,
    relation_holds,
)
from .pipeline import run_forward
from .training import TrainConfig, train

TOP_K = 5


@dataclass
class Localization:
    """Per query node: top-ranked proposal indices with scores, best box first."""

    ranked: list       # per node, list of (proposal index, score) of length <= 5
    chosen_boxes: list # per node, the top-1 box


def infer(proposals, scene, query, params, provider, tau: float,
          mp_cfg: MessagePassingConfig) -> Localization:
    """Full pipeline then per-node top-k ranking, ties to lower index."""
    if not proposals:
        raise ValueError(f"scene {scene.scene_id}: no proposals to rank")
    fp = run_forward(params, provider, proposals, query, tau, mp_cfg)
    scores = fp.score_values
    ranked = []
    chosen = []
    for l in range(len(query.nodes)):
        order = np.argsort(-scores[:, l], kind="stable")[:TOP_K]
        ranked.append([(int(i), float(scores[i, l])) for i in order])
        chosen.append(proposals[int(order[0])].box)
    return Localization(ranked=ranked, chosen_boxes=chosen)


def node_rows(records, localizations) -> list:
    """Flatten (record, query, node) outcomes for metric aggregation.

    `localizations` aligns with the (record, query) iteration order and each
    row captures the rank (1-based) of the first correct proposal, if any.
    """
    rows = []
    i = 0
    for rec in records:
        counts = rec.scene.class_counts()
        for q_idx, query in enumerate(rec.queries):
            loc = localizations[i]
            i += 1
            for l, node in enumerate(query.nodes):
                target_box = rec.scene.instance_by_id(node.target).box
                rank = None
                for r, (pidx, _) in enumerate(loc.ranked[l], start=1):
                    if iou(rec.proposals[pidx].box, target_box) >= 0.5:
                        rank = r
                        break
                rows.append({
                    "scene_id": rec.scene.scene_id,
                    "query_index": q_idx,
                    "node_id": node.node_id,
                    "cls": node.cls,
                    "edge_count": len(query.edges),
                    "ambiguous": counts.get(node.cls, 0) > 1,
                    "rank": rank,
                })
    return rows


def localize_split(params, provider, records, tau, mp_cfg, perturb=None):
    """Run inference over every query of the records; optional query transform."""
    locs = []
    queries_used = []
    for rec in records:
        used = []
        for query in rec.queries:
            q = perturb(query) if perturb is not None else query
            used.append(q)
            locs.append(infer(rec.proposals, rec.scene, q, params, provider, tau, mp_cfg))
        queries_used.append(used)
    shadow = [replace(r, queries=qs) for r, qs in zip(records, queries_used)]
    return locs, shadow


def recall_at_k(rows, k: int) -> float:
    if not rows:
        return 0.0
    hits = sum(1 for r in rows if r["rank"] is not None and r["rank"] <= k)
    return hits / len(rows)


def _bucket(rows):
    return {"r_at_1": recall_at_k(rows, 1), "r_at_5": recall_at_k(rows, 5),
            "n_nodes": len(rows)}


def eval_by_edge_count(rows, max_edges: int = 8) -> dict:
    """Recall per query size; sizes without samples are marked absent."""
    table = {}
    for size in range(1, max_edges + 1):
        subset = [r for r in rows if r["edge_count"] == size]
        table[size] = _bucket(subset) if subset else None
    return table


def metrics_from_rows(rows, held_out=()) -> dict:
    held = set(held_out)
    out = _bucket(rows)
    out["ambiguous"] = _bucket([r for r in rows if r["ambiguous"]])
    out["unambiguous"] = _bucket([r for r in rows if not r["ambiguous"]])
    out["by_edge_count"] = eval_by_edge_count(rows)
    if held:
        out["seen"] = _bucket([r for r in rows if r["cls"] not in held])
        out["unseen"] = _bucket([r for r in rows if r["cls"] in held])
        out["unseen_ambiguous"] = _bucket(
            [r for r in rows if r["cls"] in held and r["ambiguous"]])
    return out


def evaluate(params, provider, records, tau, mp_cfg, held_out=()) -> dict:
    locs, shadow = localize_split(params, provider, records, tau, mp_cfg)
    return metrics_from_rows(node_rows(shadow, locs), held_out=held_out)


def robustness_sweep(params, provider, records, vocab, tau, mp_cfg,
                     p_list=(0.1, 0.2, 0.3, 0.4), seed: int = 0) -> dict:
    """R@1 on perturbed queries per noise level; p=0 is the clean run."""
    out = {}
    for p in p_list:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([seed, int(round(p * 1000))])))
        locs, shadow = localize_split(
            params, provider, records, tau, mp_cfg,
            perturb=lambda q: perturb_query(q, p, vocab, rng))
        out[p] = recall_at_k(node_rows(shadow, locs), 1)
    return out


def zero_shot_eval(params, provider, records, held_out, tau, mp_cfg) -> dict:
    """Seen/unseen recall split; unseen nodes carry classes absent in training."""
    locs, shadow = localize_split(params, provider, records, tau, mp_cfg)
    rows = node_rows(shadow, locs)
    m = metrics_from_rows(rows, held_out=held_out)
    return {k: m[k] for k in ("seen", "unseen", "unseen_ambiguous") if k in m}


ABLATION_ORDERS = (
    (),
    ("QG", "PG"),
    ("AE", "PG"),
    ("AE",),
    ("QG", "AE", "PG"),
    ("AE", "QG", "PG"),
)


def ablation_orders(dataset, cfg: TrainConfig, orders=ABLATION_ORDERS,
                    progress=None) -> list:
    """Train and evaluate one model per step ordering, shared seed."""
    results = []
    test = dataset.split("test") or dataset.split("train")
    provider = dataset.provider()
    for order in orders:
        run_cfg = cfg.with_order(order)
        params, _ = train(dataset, run_cfg)
        metrics = evaluate(params, provider, test, run_cfg.tau, run_cfg.mp(),
                           held_out=dataset.config.held_out_classes)
        row = {"order": list(order), "layers": run_cfg.layers,
               "r_at_1": metrics["r_at_1"], "r_at_5": metrics["r_at_5"]}
        results.append(row)
        if progress is not None:
            progress(row)
    return results


def proposal_graph_sparsity(params, provider, records, tau, mp_cfg) -> dict:
    """Mean retained edges relative to the dense pair count over a split."""
    fractions = []
    counts = []
    for rec in records:
        for query in rec.queries:
            fp = run_forward(params, provider, rec.proposals, query, tau, mp_cfg)
            n = fp.vl.pgraph.n
            counts.append(len(fp.vl.pgraph.kept))
            fractions.append(len(fp.vl.pgraph.kept) / (n * n))
    return {"mean_edges": float(np.mean(counts)), "mean_fraction": float(np.mean(fractions))}


# -- timing fixture -----------------------------------------------------------


def _grid_scene(vocab) -> Scene:
    """3x3 grid of distinct-class instances joined by an 8-edge relation chain."""
    classes = list(vocab.entity_classes[:9])
    centers = [0.2, 0.5, 0.8]
    instances = []
    for r in range(3):
        for c in range(3):
            instances.append(Instance(3 * r + c, classes[3 * r + c],
                                      Box(centers[c], centers[r], 0.18, 0.18)))
    path = [0, 1, 2, 5, 4, 3, 6, 7, 8]
    triples = []
    for a, b in zip(path, path[1:]):
        ba, bb = instances[a].box, instances[b].box
        pred = next(p for p in ("left_of", "right_of", "above", "below", "near")
                    if relation_holds(p, ba, bb))
        triples.append((a, pred, b))
    return Scene(scene_id=0, instances=instances, triples=triples)


def _chain_query(scene: Scene, n_edges: int) -> QueryGraph:
    nodes = []
    node_of = {}
    edges = []
    for s, pred, o in scene.triples[:n_edges]:
        for iid in (s, o):
            if iid not in node_of:
                node_of[iid] = len(nodes)
                nodes.append(QueryNode(len(nodes), scene.instance_by_id(iid).cls, iid))
        edges.append((node_of[s], pred, node_of[o]))
    return QueryGraph(nodes=nodes, edges=edges)


def timing_benchmark(params, provider, vocab, tau, mp_cfg, n_proposals: int = 64,
                     edge_counts=tuple(range(1, 9)), repetitions: int = 20,
                     seed: int = 0) -> dict:
    """Mean inference seconds per query size at a fixed proposal count.

    Informational: wall-clock measurements on a warmed-up process.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    scene = _grid_scene(vocab)
    cfg = DatasetConfig(n_scenes=1, classes_per_scene=9, duplicated_classes=0,
                        distractors=0, proposals_per_scene=n_proposals,
                        embed_dim=provider.dim, embed_seed=provider.seed, seed=seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x71])))
    proposals = generate_proposals(scene, cfg, provider, rng)
    queries = {n: _chain_query(scene, n) for n in edge_counts}
    # warm-up pass per size
    for q in queries.values():
        infer(proposals, scene, q, params, provider, tau, mp_cfg)
    seconds = {}
    for n_edges, q in queries.items():
        start = time.perf_counter()
        for _ in range(repetitions):
            infer(proposals, scene, q, params, provider, tau, mp_cfg)
        seconds[n_edges] = (time.perf_counter() - start) / repetitions
    return {"proposals": n_proposals, "repetitions": repetitions,
            "edges": list(edge_counts), "seconds": [seconds[n] for n in edge_counts]}
