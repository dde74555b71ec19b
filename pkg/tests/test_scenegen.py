"""Scene synthesis: relation semantics, disambiguation pattern, queries."""

import numpy as np
import pytest

from sgground.boxes import Box, iou
from sgground.scenegen import (
    DatasetConfig,
    QuerySamplingError,
    Instance,
    QueryGraph,
    QueryNode,
    Scene,
    generate_proposals,
    generate_scene,
    perturb_query,
    relation_holds,
    sample_query,
)
from sgground.vocab import EmbeddingProvider, Vocabulary


def rng_for(i=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([99, i])))


SMALL = dict(n_scenes=1, classes_per_scene=5, duplicated_classes=2, distractors=2,
             proposals_per_scene=20, embed_dim=16, queries_per_scene=2,
             max_query_edges=3)


# -- relation_holds -------------------------------------------------------------


def test_inside_reflexive():
    b = Box(0.4, 0.4, 0.2, 0.3)
    assert relation_holds("inside", b, b)


def test_left_of_irreflexive():
    b = Box(0.4, 0.4, 0.2, 0.3)
    assert not relation_holds("left_of", b, b)


def test_near_by_direct_evaluation():
    # center distance 0.05 <= 0.5 * (0.1 + 0.1)
    assert relation_holds("near", Box(0.2, 0.2, 0.1, 0.1), Box(0.25, 0.2, 0.1, 0.1))
    assert not relation_holds("near", Box(0.2, 0.2, 0.1, 0.1), Box(0.5, 0.2, 0.1, 0.1))


def test_left_right_mirror():
    rng = rng_for(1)
    for _ in range(200):
        a = Box(*rng.uniform(0.1, 0.8, 4))
        b = Box(*rng.uniform(0.1, 0.8, 4))
        assert relation_holds("left_of", a, b) == relation_holds("right_of", b, a)
        assert relation_holds("above", a, b) == relation_holds("below", b, a)


def test_unknown_predicate():
    b = Box(0.5, 0.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        relation_holds("touching", b, b)


# -- generate_scene --------------------------------------------------------------


def test_scene_disambiguation_pattern():
    cfg = DatasetConfig(**SMALL)
    vocab = Vocabulary()
    for i in range(30):
        scene = generate_scene(cfg, vocab, rng_for(i))
        counts = scene.class_counts()
        dup_classes = [c for c, n in counts.items() if n > 1]
        assert len(dup_classes) == cfg.duplicated_classes
        related = {t[0] for t in scene.triples} | {t[2] for t in scene.triples}
        for c in dup_classes:
            ids = [inst.id for inst in scene.instances if inst.cls == c]
            assert len(ids) == cfg.distractors + 1
            assert sum(1 for i_ in ids if i_ in related) == 1


def test_scene_determinism():
    cfg = DatasetConfig(**SMALL)
    vocab = Vocabulary()
    a = generate_scene(cfg, vocab, rng_for(3))
    b = generate_scene(cfg, vocab, rng_for(3))
    assert a == b


def test_scene_triples_reverify():
    cfg = DatasetConfig(**SMALL)
    vocab = Vocabulary()
    failures = 0
    for i in range(200):
        scene = generate_scene(cfg, vocab, rng_for(i))
        index = {inst.id: inst for inst in scene.instances}
        assert len(scene.triples) <= cfg.max_triples
        for s, pred, o in scene.triples:
            if not relation_holds(pred, index[s].box, index[o].box):
                failures += 1
    assert failures == 0


def test_confusers_fail_their_twins_relations():
    cfg = DatasetConfig(**SMALL)
    vocab = Vocabulary()
    for i in range(30):
        scene = generate_scene(cfg, vocab, rng_for(i))
        index = {inst.id: inst for inst in scene.instances}
        related = {t[0] for t in scene.triples} | {t[2] for t in scene.triples}
        for cls, n in scene.class_counts().items():
            if n == 1:
                continue
            ids = [inst.id for inst in scene.instances if inst.cls == cls]
            core = [i_ for i_ in ids if i_ in related]
            confusers = [i_ for i_ in ids if i_ not in related]
            assert len(core) == 1
            for s, pred, o in scene.triples:
                for c in confusers:
                    if s == core[0]:
                        assert not relation_holds(pred, index[c].box, index[o].box)
                    if o == core[0]:
                        assert not relation_holds(pred, index[s].box, index[c].box)


# -- generate_proposals -----------------------------------------------------------


def test_proposals_count_and_matches():
    cfg = DatasetConfig(**SMALL)
    vocab = Vocabulary()
    provider = cfg.provider()
    scene = generate_scene(cfg, vocab, rng_for(0))
    props = generate_proposals(scene, cfg, provider, rng_for(1))
    assert len(props) == cfg.proposals_per_scene
    index = {inst.id: inst for inst in scene.instances}
    for p in props:
        assert len(p.feature) == cfg.feature_dim
        assert 0.0 <= p.objectness <= 1.0
        if p.matched_instance is not None:
            assert iou(p.box, index[p.matched_instance].box) >= 0.5
    # every instance has at least one matched proposal
    matched = {p.matched_instance for p in props if p.matched_instance is not None}
    assert matched == set(index)


def test_proposals_zero_jitter_exact_copies():
    cfg = DatasetConfig(**{**SMALL, "center_jitter": 0.0, "size_jitter": 0.0,
                           "feature_noise": 0.0})
    vocab = Vocabulary()
    provider = cfg.provider()
    scene = generate_scene(cfg, vocab, rng_for(0))
    props = generate_proposals(scene, cfg, provider, rng_for(1))
    index = {inst.id: inst for inst in scene.instances}
    exact = 0
    for p in props:
        if p.matched_instance is None:
            continue
        inst = index[p.matched_instance]
        if p.objectness == 1.0 and p.box == inst.box:
            exact += 1
            head = p.feature[: cfg.embed_dim]
            cos = head @ provider.embed(inst.cls) / np.linalg.norm(head)
            assert abs(cos - 1.0) < 1e-9
            assert np.array_equal(p.feature[cfg.embed_dim:],
                                  [p.box.cx, p.box.cy, p.box.w, p.box.h])
    assert exact >= len(scene.instances)


def test_class_similarity_alone_cannot_disambiguate():
    """Ranking instances by feature/prototype cosine is chance-level on the
    relation-marked instance of each duplicated class."""
    cfg = DatasetConfig(**{**SMALL, "proposals_per_scene": 16, "duplicated_classes": 1})
    vocab = Vocabulary()
    provider = cfg.provider()
    hits = 0
    totals = 0
    for i in range(500):
        scene = generate_scene(cfg, vocab, rng_for(i))
        props = generate_proposals(scene, cfg, provider, rng_for(10000 + i))
        related = {t[0] for t in scene.triples} | {t[2] for t in scene.triples}
        for cls, n in scene.class_counts().items():
            if n == 1:
                continue
            ids = [inst.id for inst in scene.instances if inst.cls == cls]
            marked = next(i_ for i_ in ids if i_ in related)
            e = provider.embed(cls)
            best_by_instance = {}
            for p in props:
                if p.matched_instance in ids:
                    head = p.feature[: cfg.embed_dim]
                    c = head @ e / (np.linalg.norm(head) + 1e-12)
                    best_by_instance[p.matched_instance] = max(
                        best_by_instance.get(p.matched_instance, -2.0), c)
            if len(best_by_instance) < len(ids):
                continue
            top = max(best_by_instance, key=best_by_instance.get)
            hits += top == marked
            totals += 1
    chance = 1.0 / (cfg.distractors + 1)
    assert totals >= 400
    assert hits / totals <= chance + 0.1


# -- sample_query -----------------------------------------------------------------


def test_sample_query_sizes_and_membership():
    cfg = DatasetConfig(**SMALL)
    vocab = Vocabulary()
    checked = 0
    for i in range(200):
        scene = generate_scene(cfg, vocab, rng_for(i))
        rng = rng_for(500 + i)
        for n_edges in (1, 2, 3):
            if n_edges > len(scene.triples):
                continue
            try:
                q = sample_query(scene, n_edges, rng)
            except QuerySamplingError:
                continue
            assert len(q.edges) == n_edges
            target = {n.node_id: n.target for n in q.nodes}
            for s, pred, d in q.edges:
                assert (target[s], pred, target[d]) in scene.triples
                checked += 1
    assert checked >= 1000


def test_sample_query_single_edge_is_referring_relationship():
    cfg = DatasetConfig(**SMALL)
    scene = generate_scene(cfg, Vocabulary(), rng_for(0))
    q = sample_query(scene, 1, rng_for(7))
    assert len(q.edges) == 1 and len(q.nodes) == 2


def test_sample_query_too_large_errors():
    instances = [
        Instance(0, "dog", Box(0.2, 0.2, 0.15, 0.15)),
        Instance(1, "cat", Box(0.8, 0.2, 0.15, 0.15)),
    ]
    scene = Scene(0, instances, [(0, "left_of", 1)])
    with pytest.raises(QuerySamplingError):
        sample_query(scene, 2, rng_for(1))


def test_same_class_nodes_get_distinct_ids():
    instances = [
        Instance(0, "dog", Box(0.2, 0.2, 0.15, 0.15)),
        Instance(1, "dog", Box(0.8, 0.2, 0.15, 0.15)),
        Instance(2, "cat", Box(0.5, 0.2, 0.15, 0.15)),
    ]
    triples = [(0, "left_of", 2), (2, "left_of", 1)]
    scene = Scene(0, instances, triples)
    q = sample_query(scene, 2, rng_for(0))
    dogs = [n for n in q.nodes if n.cls == "dog"]
    assert len(dogs) == 2 and dogs[0].node_id != dogs[1].node_id
    assert {dogs[0].target, dogs[1].target} == {0, 1}


# -- perturb_query ----------------------------------------------------------------


def _simple_query():
    return QueryGraph(
        nodes=[QueryNode(0, "person", 0), QueryNode(1, "dog", 1)],
        edges=[(0, "left_of", 1)],
    )


def test_perturb_p_zero_identity():
    vocab = Vocabulary()
    q = _simple_query()
    out = perturb_query(q, 0.0, vocab, rng_for(0))
    assert out.edges == q.edges
    assert [(n.node_id, n.cls, n.target) for n in out.nodes] == \
        [(n.node_id, n.cls, n.target) for n in q.nodes]


def test_perturb_p_one_no_synonyms_no_deletion_identity():
    vocab = Vocabulary(synonyms={})
    q = _simple_query()
    out = perturb_query(q, 1.0, vocab, rng_for(0), allow_deletion=False)
    assert out.edges == q.edges
    assert [n.cls for n in out.nodes] == [n.cls for n in q.nodes]


def test_perturb_fraction_concentrates():
    vocab = Vocabulary()
    rng = rng_for(12)
    perturbed = 0
    trials = 10000
    for _ in range(trials):
        out = perturb_query(_simple_query(), 0.3, vocab, rng)
        changed = (
            len(out.edges) != 1
            or out.edges[0][1] != "left_of"
            or out.nodes[0].cls != "person"
            or out.nodes[1].cls != "dog"
        )
        perturbed += changed
    assert 0.27 <= perturbed / trials <= 0.33


def test_perturb_keeps_targets_and_connectivity():
    vocab = Vocabulary()
    nodes = [QueryNode(0, "person", 0), QueryNode(1, "dog", 1), QueryNode(2, "cat", 2)]
    edges = [(0, "left_of", 1), (1, "near", 2)]
    for i in range(200):
        q = QueryGraph(nodes=[QueryNode(n.node_id, n.cls, n.target) for n in nodes],
                       edges=list(edges))
        out = perturb_query(q, 0.9, vocab, rng_for(i))
        assert out.nodes
        ids = {n.node_id for n in out.nodes}
        for s, _, d in out.edges:
            assert s in ids and d in ids
        for n in out.nodes:
            assert n.target == nodes[n.node_id].target
        if len(out.edges) < 2 and len(out.nodes) > 1:
            # survivors stay connected
            touched = {s for s, _, _ in out.edges} | {d for _, _, d in out.edges}
            assert touched == ids or len(out.nodes) == 1


def test_perturb_probability_validation():
    with pytest.raises(ValueError):
        perturb_query(_simple_query(), 1.5, Vocabulary(), rng_for(0))
