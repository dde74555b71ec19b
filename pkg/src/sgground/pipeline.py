"""End-to-end assembly: encode, build graphs, message pass, score, loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape
from .graphs import VisioLingualGraph, build_visio_lingual_graph
from .mpnet import GraphState, MessagePassingConfig, run_mpag
from .params import BoundParams, ModelParameters
from .scoring import (
    LabelAssignment,
    LossWeights,
    assign_labels,
    aux_heads_loss,
    balanced_edge_sample,
    edge_label_matrix,
    edge_loss,
    node_loss,
    squash_scores,
    total_loss,
)


def proposal_matrix(proposals):
    """Stack features into (N, f) and collect boxes."""
    feats = np.stack([p.feature for p in proposals])
    boxes = [p.box for p in proposals]
    return feats, boxes


@dataclass
class ForwardPass:
    tape: Tape
    bound: BoundParams
    vl: VisioLingualGraph
    state: GraphState
    node_cos: Node
    node_scores: Node

    @property
    def score_values(self) -> np.ndarray:
        return self.node_scores.value


def run_forward(params: ModelParameters, provider, proposals, query,
                tau: float, mp_cfg: MessagePassingConfig,
                tape: Tape | None = None, bound: BoundParams | None = None) -> ForwardPass:
    """Forward pass for one (proposal set, query) pair.

    A fresh tape is created unless an externally owned (tape, bound) pair is
    supplied (gradient checking binds parameters itself).
    """
    if tape is None:
        tape = Tape()
    if bound is None:
        bound = params.bind(tape)
    feats, boxes = proposal_matrix(proposals)
    vl = build_visio_lingual_graph(tape, bound, provider, query, feats, boxes, tau)
    state = run_mpag(tape, bound, GraphState.initial(vl), mp_cfg)
    cos = tape.cosine_similarity(state.proposal_reps, state.query_reps)
    return ForwardPass(tape=tape, bound=bound, vl=vl, state=state,
                       node_cos=cos, node_scores=squash_scores(tape, cos))


def _pair_row_index(pairs: np.ndarray, n: int) -> np.ndarray:
    """Row of each ordered pair (k, j) in the all-pairs enumeration."""
    k, j = pairs[:, 0], pairs[:, 1]
    return k * (n - 1) + np.where(j > k, j - 1, j)


def compute_loss(params: ModelParameters, provider, proposals, scene, query,
                 tau: float, mp_cfg: MessagePassingConfig, weights: LossWeights,
                 rng: np.random.Generator, m_plus: float = 0.3, m_minus: float = 0.7,
                 swap_margins: bool = False, edge_sample_size: int = 48,
                 fixed_edge_sample: np.ndarray | None = None,
                 tape: Tape | None = None, bound: BoundParams | None = None):
    """Training objective for one (scene, query) pair.

    Returns (ForwardPass, total loss node, LossBreakdown).  A fixed edge
    sample can be injected to make the objective a deterministic function of
    the parameters (gradient checking).
    """
    fp = run_forward(params, provider, proposals, query, tau, mp_cfg,
                     tape=tape, bound=bound)
    tape = fp.tape
    labels = assign_labels(proposals, query, scene, fp.vl.relation_tokens)

    node_term, margin_value = node_loss(tape, fp.node_scores, labels.node_positive,
                                        m_plus=m_plus, m_minus=m_minus,
                                        swap_margins=swap_margins)

    node_index_edges = [(s, d) for s, _, d in fp.vl.query_edges]
    if fixed_edge_sample is not None:
        sampled = fixed_edge_sample
    else:
        sampled = balanced_edge_sample(fp.score_values, node_index_edges, rng,
                                       p=edge_sample_size)
    if len(sampled) and len(fp.vl.relation_tokens):
        rows = _pair_row_index(sampled, fp.vl.pgraph.n)
        es = squash_scores(tape, tape.gather_rows(fp.vl.pgraph.rel_cos, rows))
        edge_term = edge_loss(tape, es, edge_label_matrix(sampled, labels))
    else:
        edge_term = edge_loss(tape, None, np.zeros((0, 0), dtype=bool))

    fg_term, box_term = aux_heads_loss(tape, fp.bound, fp.vl.pgraph.node_reps,
                                       fp.state.proposal_reps, proposals, labels,
                                       query, scene)
    total_node, breakdown = total_loss(tape, node_term, margin_value, edge_term,
                                       fg_term, box_term, weights)
    return fp, total_node, breakdown
