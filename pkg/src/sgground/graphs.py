"""Query-guided proposal graph and the composite visio-lingual graph.

Pairwise geometric features are log-ratios of center offsets and extents,
taken for the pair itself and for each box against their union box.  An
ordered proposal pair becomes a directed edge when its learned edge
representation aligns (cosine) with at least one query relation above a
threshold.  The hard threshold decision carries no gradient; gradients flow
through node and edge representations only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape
from .boxes import Box, union_box
from .params import BoundParams

GAMMA_RATIO_FLOOR = 1e-3


def geometric_features(b_k: Box, b_j: Box) -> np.ndarray:
    """Log-ratio features of an ordered box pair, scale invariant by design."""
    return np.log([
        max(abs(b_k.cx - b_j.cx) / b_k.w, GAMMA_RATIO_FLOOR),
        max(abs(b_k.cy - b_j.cy) / b_k.h, GAMMA_RATIO_FLOOR),
        max(b_j.w / b_k.w, GAMMA_RATIO_FLOOR),
        max(b_j.h / b_k.h, GAMMA_RATIO_FLOOR),
    ])


def gamma_stack(b_k: Box, b_j: Box) -> np.ndarray:
    """12-dim input to the geometry network: pair, then each box vs union."""
    union = union_box(b_k, b_j)
    return np.concatenate([
        geometric_features(b_k, b_j),
        geometric_features(b_k, union),
        geometric_features(b_j, union),
    ])


def _gamma_block(cx_k, cy_k, w_k, h_k, cx_j, cy_j, w_j, h_j):
    cols = [
        np.maximum(np.abs(cx_k - cx_j) / w_k, GAMMA_RATIO_FLOOR),
        np.maximum(np.abs(cy_k - cy_j) / h_k, GAMMA_RATIO_FLOOR),
        np.maximum(w_j / w_k, GAMMA_RATIO_FLOOR),
        np.maximum(h_j / h_k, GAMMA_RATIO_FLOOR),
    ]
    return np.log(np.stack(cols, axis=1))


def gamma_stack_batch(boxes: list, pairs: np.ndarray) -> np.ndarray:
    """Vectorized `gamma_stack` over many ordered pairs; shape (E, 12)."""
    arr = np.array([[b.cx, b.cy, b.w, b.h] for b in boxes])
    cx, cy, w, h = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    k, j = pairs[:, 0], pairs[:, 1]
    x1 = np.minimum(cx[k] - w[k] / 2.0, cx[j] - w[j] / 2.0)
    y1 = np.minimum(cy[k] - h[k] / 2.0, cy[j] - h[j] / 2.0)
    x2 = np.maximum(cx[k] + w[k] / 2.0, cx[j] + w[j] / 2.0)
    y2 = np.maximum(cy[k] + h[k] / 2.0, cy[j] + h[j] / 2.0)
    ucx, ucy, uw, uh = (x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1
    return np.concatenate([
        _gamma_block(cx[k], cy[k], w[k], h[k], cx[j], cy[j], w[j], h[j]),
        _gamma_block(cx[k], cy[k], w[k], h[k], ucx, ucy, uw, uh),
        _gamma_block(cx[j], cy[j], w[j], h[j], ucx, ucy, uw, uh),
    ], axis=1)


def ordered_pairs(n: int) -> np.ndarray:
    """All ordered index pairs (k, j), k != j, in row-major order; shape (E, 2)."""
    k, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = k != j
    return np.stack([k[mask], j[mask]], axis=1)


def encode_proposals(tape: Tape, bound: BoundParams, features: np.ndarray) -> Node:
    """Row k is the learned representation of proposal k."""
    if features.shape[1] != bound.params.dims.feature_dim:
        raise ValueError(
            f"feature length {features.shape[1]} != expected {bound.params.dims.feature_dim}"
        )
    return bound.mlp(tape, "phi1", tape.constant(features))


def edge_representations(tape: Tape, bound: BoundParams, node_reps: Node,
                         boxes: list, pairs: np.ndarray) -> Node:
    """Edge representation rows for every ordered pair in `pairs`."""
    geo = bound.mlp(tape, "phi2", tape.constant(gamma_stack_batch(boxes, pairs)))
    src = tape.gather_rows(node_reps, pairs[:, 0])
    dst = tape.gather_rows(node_reps, pairs[:, 1])
    return tape.matmul(tape.concat_columns([src, dst, geo]), bound["W"])


def edge_representation(tape: Tape, bound: BoundParams, p_k: Node, p_j: Node,
                        b_k: Box, b_j: Box) -> Node:
    """Single-pair edge representation from two (1, d) node representations."""
    geo = bound.mlp(tape, "phi2", tape.constant(gamma_stack(b_k, b_j).reshape(1, -1)))
    return tape.matmul(tape.concat_columns([p_k, p_j, geo]), bound["W"])


def rel_sim(edge_rep: np.ndarray, relation_reps: np.ndarray) -> float:
    """Best cosine alignment of one edge representation with the query relations."""
    if relation_reps.shape[0] < 1:
        raise ValueError("rel_sim needs at least one query relation")
    h = np.asarray(edge_rep, dtype=np.float64).reshape(-1)
    norms = np.linalg.norm(relation_reps, axis=1) + 1e-12
    hn = np.linalg.norm(h) + 1e-12
    return float(np.max(relation_reps @ h / (norms * hn)))


@dataclass
class ProposalGraph:
    n: int
    boxes: list
    node_reps: Node           # (n, d), on tape
    pairs: np.ndarray         # (E, 2) every ordered pair
    edge_reps: Node           # (E, d), on tape
    rel_cos: Node             # (E, K) cosine vs deduplicated query relations
    rel_sim: np.ndarray       # (E,) max over relations
    kept: np.ndarray          # indices into pairs/edge_reps of retained edges
    threshold: float

    @property
    def edges(self):
        """Retained directed edges as (source, target, pair row index)."""
        return [(int(self.pairs[r, 0]), int(self.pairs[r, 1]), int(r)) for r in self.kept]

    def out_neighbors(self, k: int):
        return [j for s, j, _ in self.edges if s == k]

    def in_neighbors(self, k: int):
        return [s for s, j, _ in self.edges if j == k]


def build_proposal_graph(tape: Tape, bound: BoundParams, features: np.ndarray,
                         boxes: list, relation_reps: Node, tau: float,
                         node_reps: Node | None = None) -> ProposalGraph:
    """Directed graph over proposals; edge kept iff its representation aligns
    with some query relation at cosine >= tau, tested per ordered pair."""
    n = len(boxes)
    if n < 2:
        raise ValueError(f"need at least 2 proposals, got {n}")
    if node_reps is None:
        node_reps = encode_proposals(tape, bound, features)
    pairs = ordered_pairs(n)
    edge_reps = edge_representations(tape, bound, node_reps, boxes, pairs)
    rel_cos = tape.cosine_similarity(edge_reps, relation_reps)
    sim = rel_cos.value.max(axis=1)
    kept = np.flatnonzero(sim >= tau)
    return ProposalGraph(n=n, boxes=boxes, node_reps=node_reps, pairs=pairs,
                         edge_reps=edge_reps, rel_cos=rel_cos, rel_sim=sim,
                         kept=kept, threshold=tau)


@dataclass
class VisioLingualGraph:
    pgraph: ProposalGraph
    query_node_reps: Node     # (m, d) embeddings of query entity tokens
    query_edges: list         # (src node index, predicate, dst node index)
    query_edge_reps: Node     # (q, d) one row per query edge
    relation_reps: Node       # (K, d) deduplicated predicate embeddings
    relation_tokens: list

    @property
    def n_aux_edges(self) -> int:
        return self.query_node_reps.shape[0] * self.pgraph.n


def build_visio_lingual_graph(tape: Tape, bound: BoundParams, provider, query,
                              features: np.ndarray, boxes: list,
                              tau: float) -> VisioLingualGraph:
    """Compose query graph and proposal graph; auxiliary query-to-proposal
    edges are dense (m x n) and implicit."""
    if not query.nodes:
        raise ValueError("query graph has no nodes")
    rel_tokens = query.predicates()
    trainable = bound.params.dims.train_relation_reps and rel_tokens and all(
        t in bound.params.relation_tokens for t in rel_tokens
    )
    if trainable:
        order = {tok: i for i, tok in enumerate(bound.params.relation_tokens)}
        idx = np.array([order[t] for t in rel_tokens])
        relation_reps = tape.gather_rows(bound["relation_embeddings"], idx)
    else:
        relation_reps = tape.constant(provider.embed_many(rel_tokens))

    node_order = {n.node_id: i for i, n in enumerate(query.nodes)}
    query_node_reps = tape.constant(provider.embed_many([n.cls for n in query.nodes]))
    query_edges = [(node_order[s], pred, node_order[d]) for s, pred, d in query.edges]
    if query_edges:
        rel_index = {t: i for i, t in enumerate(rel_tokens)}
        edge_rows = np.array([rel_index[pred] for _, pred, _ in query_edges])
        query_edge_reps = tape.gather_rows(relation_reps, edge_rows)
    else:
        query_edge_reps = tape.constant(np.zeros((0, bound.params.dims.d)))
        relation_reps = tape.constant(np.zeros((0, bound.params.dims.d)))

    pgraph = build_proposal_graph(tape, bound, features, boxes, relation_reps, tau) \
        if rel_tokens else _edgeless_graph(tape, bound, features, boxes, relation_reps, tau)
    return VisioLingualGraph(pgraph=pgraph, query_node_reps=query_node_reps,
                             query_edges=query_edges, query_edge_reps=query_edge_reps,
                             relation_reps=relation_reps, relation_tokens=rel_tokens)


def _edgeless_graph(tape, bound, features, boxes, relation_reps, tau):
    # A query without relations keeps every pairwise edge out of the graph.
    n = len(boxes)
    node_reps = encode_proposals(tape, bound, features)
    pairs = ordered_pairs(n)
    return ProposalGraph(n=n, boxes=boxes, node_reps=node_reps, pairs=pairs,
                         edge_reps=tape.constant(np.zeros((0, bound.params.dims.d))),
                         rel_cos=tape.constant(np.zeros((0, 0))),
                         rel_sim=np.zeros(len(pairs)), kept=np.array([], dtype=int),
                         threshold=tau)
