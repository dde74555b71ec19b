"""Three-step message passing on the visio-lingual graph.

AE: every proposal attends over the query nodes and mixes their embeddings
into its own representation.  QG: query nodes average messages from their
incident edges after the edge representations are conditioned on both
endpoints.  PG: the same scheme on the retained proposal-graph edges.

Neighborhoods are undirected (union of in- and out-neighbors); each incident
edge contributes its own representation.  Isolated nodes pass through
unchanged.  Steps run in a configurable order, once per layer; updated edge
representations live only within their step, every layer re-reads the
generation-stage edge representations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Node, Tape
from .graphs import VisioLingualGraph
from .params import BoundParams

log = logging.getLogger(__name__)

MP_STEPS = ("AE", "QG", "PG")


@dataclass
class MessagePassingConfig:
    order: tuple = MP_STEPS
    layers: int = 2
    share_layer_params: bool = False

    def __post_init__(self):
        self.order = tuple(self.order)
        if len(set(self.order)) != len(self.order):
            raise ValueError(f"duplicate steps in order {self.order}")
        unknown = set(self.order) - set(MP_STEPS)
        if unknown:
            raise ValueError(f"unknown message passing steps {sorted(unknown)}")
        if self.layers not in (1, 2):
            raise ValueError(f"layers must be 1 or 2, got {self.layers}")

    @classmethod
    def parse_order(cls, text: str) -> tuple:
        text = text.strip()
        if not text:
            return ()
        return tuple(part.strip().upper() for part in text.split(","))


@dataclass
class GraphState:
    vl: VisioLingualGraph
    proposal_reps: Node
    query_reps: Node
    attentions: list = field(default_factory=list)

    @classmethod
    def initial(cls, vl: VisioLingualGraph) -> "GraphState":
        return cls(vl=vl, proposal_reps=vl.pgraph.node_reps,
                   query_reps=vl.query_node_reps)


def _incidence(src: np.ndarray, dst: np.ndarray, n_nodes: int):
    """Endpoint/edge index arrays for mean aggregation over incident edges."""
    endpoints = np.concatenate([src, dst])
    edge_ids = np.concatenate([np.arange(len(src)), np.arange(len(src))])
    deg = np.bincount(endpoints, minlength=n_nodes).astype(np.float64)
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    isolated = (deg == 0).astype(np.float64)
    return endpoints, edge_ids, inv_deg.reshape(-1, 1), isolated.reshape(-1, 1)


def _neighborhood_update(tape: Tape, bound: BoundParams, node_reps: Node,
                         edge_hat: Node, src, dst, phi_prefix: str) -> Node:
    n = node_reps.shape[0]
    endpoints, edge_ids, inv_deg, isolated = _incidence(src, dst, n)
    self_reps = tape.gather_rows(node_reps, endpoints)
    edge_msgs = tape.gather_rows(edge_hat, edge_ids)
    messages = bound.mlp(tape, phi_prefix, tape.concat_columns([self_reps, edge_msgs]))
    summed = tape.scatter_add_rows(messages, endpoints, n)
    mean = tape.mul(summed, tape.constant(inv_deg))
    return tape.add(mean, tape.mul(node_reps, tape.constant(isolated)))


def ae_message_pass(tape: Tape, bound: BoundParams, state: GraphState,
                    layer: int = 0) -> GraphState:
    """Attention over query nodes mixed into every proposal representation."""
    p, e = state.proposal_reps, state.query_reps
    scores = tape.matmul(tape.matmul(p, bound.mp(layer, "W3")),
                         tape.transpose(tape.matmul(e, bound.mp(layer, "W4"))))
    sim = tape.softmax_row(scores)
    mixed = tape.matmul(sim, e)
    updated = tape.add(tape.matmul(p, bound.mp(layer, "W1")),
                       tape.matmul(mixed, bound.mp(layer, "W2")))
    out = replace(state, proposal_reps=updated)
    out.attentions = state.attentions + [sim]
    return out


def qg_message_pass(tape: Tape, bound: BoundParams, state: GraphState,
                    layer: int = 0) -> GraphState:
    """Edge-conditioned mean aggregation on the query graph."""
    edges = state.vl.query_edges
    if not edges:
        log.warning("query graph has no edges; QG step is the identity")
        return state
    src = np.array([s for s, _, _ in edges])
    dst = np.array([d for _, _, d in edges])
    e = state.query_reps
    r_hat = bound.mlp(tape, bound.mp_prefix(layer, "phi3"), tape.concat_columns([
        tape.gather_rows(e, src), tape.gather_rows(e, dst), state.vl.query_edge_reps,
    ]))
    updated = _neighborhood_update(tape, bound, e, r_hat, src, dst,
                                   bound.mp_prefix(layer, "phi4"))
    return replace(state, query_reps=updated)


def pg_message_pass(tape: Tape, bound: BoundParams, state: GraphState,
                    layer: int = 0) -> GraphState:
    """Edge-conditioned mean aggregation on the retained proposal graph."""
    pg = state.vl.pgraph
    if len(pg.kept) == 0:
        return state
    src = pg.pairs[pg.kept, 0]
    dst = pg.pairs[pg.kept, 1]
    p = state.proposal_reps
    h = tape.gather_rows(pg.edge_reps, pg.kept)
    h_hat = bound.mlp(tape, bound.mp_prefix(layer, "phi5"), tape.concat_columns([
        tape.gather_rows(p, src), tape.gather_rows(p, dst), h,
    ]))
    updated = _neighborhood_update(tape, bound, p, h_hat, src, dst,
                                   bound.mp_prefix(layer, "phi6"))
    return replace(state, proposal_reps=updated)


_STEP_FN = {"AE": ae_message_pass, "QG": qg_message_pass, "PG": pg_message_pass}


def run_mpag(tape: Tape, bound: BoundParams, state: GraphState,
             cfg: MessagePassingConfig) -> GraphState:
    """Run the configured step order once per layer; empty order is a no-op."""
    for layer in range(cfg.layers):
        param_layer = 0 if cfg.share_layer_params else layer
        for step in cfg.order:
            state = _STEP_FN[step](tape, bound, state, layer=param_layer)
    return state
