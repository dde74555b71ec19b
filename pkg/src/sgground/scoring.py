"""Label assignment, score tables, the loss stack and the balanced edge sampler.

Cosine scores are squashed to (1 + cos) / 2 and clamped into
[1e-7, 1 - 1e-7] before any logarithm; the squash is affine so rankings are
unchanged.  Margins follow the printed form: same-label pairs pay for score
gaps above m_minus, different-label pairs pay for gaps below m_plus
(``swap_margins`` exchanges the two for experimentation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape
from .boxes import Box, box_deltas, iou  # noqa: F401  (iou is part of this surface)
from .params import BoundParams

IOU_POSITIVE = 0.5
SCORE_EPS = 1e-7

_pair_cache: dict = {}


def _upper_pairs(n: int):
    """Index arrays of all unordered pairs k < j."""
    if n not in _pair_cache:
        k, j = np.triu_indices(n, k=1)
        _pair_cache[n] = (k, j)
    return _pair_cache[n]


@dataclass
class LabelAssignment:
    node_positive: np.ndarray   # (N, m) proposal k positive for query node l
    fg: np.ndarray              # (N,) positive for at least one query node
    relation_masks: list        # per dedup relation: [(subject mask, object mask), ...]
    first_positive_node: np.ndarray  # (N,) index of first positive node, -1 if none


def assign_labels(proposals, query, scene, relation_tokens=None) -> LabelAssignment:
    """IoU >= 0.5 against the designated instance makes a proposal positive."""
    relation_tokens = relation_tokens if relation_tokens is not None else query.predicates()
    inst_ids = [inst.id for inst in scene.instances]
    col = {iid: i for i, iid in enumerate(inst_ids)}
    match = np.zeros((len(proposals), len(inst_ids)), dtype=bool)
    for k, prop in enumerate(proposals):
        for inst in scene.instances:
            if iou(prop.box, inst.box) >= IOU_POSITIVE:
                match[k, col[inst.id]] = True

    node_positive = np.zeros((len(proposals), len(query.nodes)), dtype=bool)
    for l, node in enumerate(query.nodes):
        node_positive[:, l] = match[:, col[node.target]]

    node_index = {n.node_id: i for i, n in enumerate(query.nodes)}
    relation_masks = []
    for token in relation_tokens:
        masks = []
        for src, pred, dst in query.edges:
            if pred != token:
                continue
            s_target = query.nodes[node_index[src]].target
            o_target = query.nodes[node_index[dst]].target
            masks.append((match[:, col[s_target]], match[:, col[o_target]]))
        relation_masks.append(masks)

    fg = node_positive.any(axis=1)
    first = np.full(len(proposals), -1)
    rows, cols = np.nonzero(node_positive)
    for k, l in zip(rows, cols):
        if first[k] < 0:
            first[k] = l
    return LabelAssignment(node_positive=node_positive, fg=fg,
                           relation_masks=relation_masks, first_positive_node=first)


def edge_label_matrix(pairs: np.ndarray, labels: LabelAssignment) -> np.ndarray:
    """(E, K) booleans: pair (k, j) realizes relation i through some query edge."""
    out = np.zeros((len(pairs), len(labels.relation_masks)), dtype=bool)
    for i, masks in enumerate(labels.relation_masks):
        for s_mask, o_mask in masks:
            out[:, i] |= s_mask[pairs[:, 0]] & o_mask[pairs[:, 1]]
    return out


def squash_scores(tape: Tape, cos: Node) -> Node:
    """Map cosine values into (0, 1) preserving order, clamped away from {0, 1}."""
    return tape.clamp(tape.affine(cos, 0.5, 0.5), SCORE_EPS, 1.0 - SCORE_EPS)


def margin_pair(delta: float, same_label: bool, m_plus: float = 0.3,
                m_minus: float = 0.7) -> float:
    """Reference per-pair margin term: gap |delta| between two proposals'
    scores for one query node."""
    gap = abs(delta)
    if same_label:
        return max(gap - m_minus, 0.0)
    return max(m_plus - gap, 0.0)


def node_loss(tape: Tape, scores: Node, node_positive: np.ndarray,
              m_plus: float = 0.3, m_minus: float = 0.7,
              swap_margins: bool = False):
    """Per query node: cross-entropy over all proposals plus the pairwise
    margin term, averaged over proposals and then over query nodes.

    Returns (scalar node, margin component value).
    """
    n, m = scores.shape
    pos = tape.constant(node_positive.astype(np.float64))
    neg = tape.constant(1.0 - node_positive.astype(np.float64))
    ce = tape.add(
        tape.affine(tape.sum_all(tape.mul(tape.log(scores), pos)), -1.0, 0.0),
        tape.affine(tape.sum_all(tape.mul(tape.log(tape.affine(scores, -1.0, 1.0)), neg)), -1.0, 0.0),
    )

    idx_k, idx_j = _upper_pairs(n)
    diff = tape.add(tape.gather_rows(scores, idx_k),
                    tape.affine(tape.gather_rows(scores, idx_j), -1.0, 0.0))
    gap = tape.add(tape.relu(diff), tape.relu(tape.affine(diff, -1.0, 0.0)))
    same = node_positive[idx_k] == node_positive[idx_j]
    m_same, m_diff = (m_plus, m_minus) if swap_margins else (m_minus, m_plus)
    same_term = tape.mul(tape.relu(tape.affine(gap, 1.0, -m_same)),
                         tape.constant(same.astype(np.float64)))
    diff_term = tape.mul(tape.relu(tape.affine(gap, -1.0, m_diff)),
                         tape.constant((~same).astype(np.float64)))
    margin = tape.sum_all(tape.add(same_term, diff_term))

    scale = 1.0 / (n * m)
    total = tape.affine(tape.add(ce, margin), scale, 0.0)
    return total, float(margin.value[0, 0] * scale)


def balanced_edge_sample(scores: np.ndarray, query_edges, rng: np.random.Generator,
                         p: int = 48, top: int = 50) -> np.ndarray:
    """Balanced ordered proposal pairs for the edge loss.

    `query_edges` holds (subject node index, object node index) pairs.  Per
    edge: rank proposals by score against each endpoint, draw p per list with
    at least ceil(p/2) from the list's top `top`, and emit every directed
    pair from the subject sample to the object sample.  The union over query
    edges is returned sorted, without duplicates.
    """
    n = scores.shape[0]
    take = min(p, n)

    def draw(order):
        if n <= take:
            return list(order)
        half = int(np.ceil(take / 2))
        pool = order[: min(top, n)]
        top_pick = pool[rng.choice(len(pool), size=min(half, len(pool)), replace=False)]
        chosen = set(int(i) for i in top_pick)
        rest = np.array([i for i in order if int(i) not in chosen])
        k = take - len(chosen)
        if k > 0:
            rest_pick = rest[rng.choice(len(rest), size=k, replace=False)]
            chosen |= set(int(i) for i in rest_pick)
        return sorted(chosen)

    pairs = set()
    for l_node, m_node in query_edges:
        order_l = np.argsort(-scores[:, l_node], kind="stable")
        order_m = np.argsort(-scores[:, m_node], kind="stable")
        sel_l = draw(order_l)
        sel_m = draw(order_m)
        for a in sel_l:
            for b in sel_m:
                if a != b:
                    pairs.add((int(a), int(b)))
    if not pairs:
        return np.zeros((0, 2), dtype=int)
    return np.array(sorted(pairs), dtype=int)


def edge_loss(tape: Tape, edge_scores: Node | None, labels: np.ndarray) -> Node:
    """Cross-entropy over (sampled edge, query relation) score entries,
    normalized by the number of entries; empty sample contributes zero."""
    if edge_scores is None or edge_scores.shape[0] == 0 or edge_scores.shape[1] == 0:
        return tape.constant(np.zeros((1, 1)))
    pos = tape.constant(labels.astype(np.float64))
    neg = tape.constant(1.0 - labels.astype(np.float64))
    ce = tape.add(
        tape.affine(tape.sum_all(tape.mul(tape.log(edge_scores), pos)), -1.0, 0.0),
        tape.affine(tape.sum_all(tape.mul(tape.log(tape.affine(edge_scores, -1.0, 1.0)), neg)), -1.0, 0.0),
    )
    return tape.affine(ce, 1.0 / (edge_scores.shape[0] * edge_scores.shape[1]), 0.0)


def aux_heads_loss(tape: Tape, bound: BoundParams, p0: Node, p_hat: Node,
                   proposals, labels: LabelAssignment, query, scene):
    """Foreground cross-entropy on generation-stage representations and
    smooth-L1 box regression on updated representations, positives only."""
    n = p0.shape[0]
    logits = bound.mlp(tape, "fg", p0)
    padded = tape.concat_columns([logits, tape.constant(np.zeros((n, 1)))])
    prob = tape.matmul(tape.softmax_row(padded), tape.constant(np.array([[1.0], [0.0]])))
    prob = tape.clamp(prob, SCORE_EPS, 1.0 - SCORE_EPS)
    y = labels.fg.astype(np.float64).reshape(-1, 1)
    ce = tape.add(
        tape.affine(tape.sum_all(tape.mul(tape.log(prob), tape.constant(y))), -1.0, 0.0),
        tape.affine(tape.sum_all(tape.mul(tape.log(tape.affine(prob, -1.0, 1.0)),
                                          tape.constant(1.0 - y))), -1.0, 0.0),
    )
    fg_ce = tape.affine(ce, 1.0 / n, 0.0)

    pos_idx = np.flatnonzero(labels.fg)
    if len(pos_idx) == 0:
        return fg_ce, tape.constant(np.zeros((1, 1)))
    targets = []
    for k in pos_idx:
        node = query.nodes[labels.first_positive_node[k]]
        targets.append(box_deltas(proposals[k].box, scene.instance_by_id(node.target).box))
    pred = tape.gather_rows(bound.mlp(tape, "box", p_hat), pos_idx)
    diff = tape.add(pred, tape.constant(-np.stack(targets)))
    absd = tape.add(tape.relu(diff), tape.relu(tape.affine(diff, -1.0, 0.0)))
    capped = tape.clamp(absd, 0.0, 1.0)
    elem = tape.add(tape.affine(tape.mul(capped, capped), 0.5, 0.0),
                    tape.add(absd, tape.affine(capped, -1.0, 0.0)))
    box_reg = tape.affine(tape.sum_all(elem), 1.0 / len(pos_idx), 0.0)
    return fg_ce, box_reg


@dataclass
class LossWeights:
    node: float = 1.0
    edge: float = 1.0
    fg: float = 1.0
    box: float = 1.0


@dataclass
class LossBreakdown:
    node_loss: float
    margin_component: float
    edge_loss: float
    fg_ce_loss: float
    box_reg_loss: float
    total: float

    def as_dict(self):
        return {
            "node_loss": self.node_loss,
            "margin_component": self.margin_component,
            "edge_loss": self.edge_loss,
            "fg_ce_loss": self.fg_ce_loss,
            "box_reg_loss": self.box_reg_loss,
            "total": self.total,
        }


def total_loss(tape: Tape, node_term: Node, margin_value: float, edge_term: Node,
               fg_term: Node, box_term: Node, weights: LossWeights):
    """Weighted sum of the loss terms; returns (scalar node, breakdown)."""
    total = tape.add(
        tape.add(tape.affine(node_term, weights.node, 0.0),
                 tape.affine(edge_term, weights.edge, 0.0)),
        tape.add(tape.affine(fg_term, weights.fg, 0.0),
                 tape.affine(box_term, weights.box, 0.0)),
    )
    breakdown = LossBreakdown(
        node_loss=float(node_term.value[0, 0]),
        margin_component=margin_value,
        edge_loss=float(edge_term.value[0, 0]),
        fg_ce_loss=float(fg_term.value[0, 0]),
        box_reg_loss=float(box_term.value[0, 0]),
        total=float(total.value[0, 0]),
    )
    return total, breakdown
