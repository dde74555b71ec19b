"""Momentum SGD training with gradient accumulation over scene batches."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import NonFiniteValue
from .mpnet import MessagePassingConfig
from .params import ModelDims, ModelParameters
from .pipeline import compute_loss
from .scoring import LossWeights


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    decay_factor: float = 0.1
    decay_every: int = 5
    epochs: int = 15
    accum_scenes: int = 8
    tau: float = 0.4
    m_plus: float = 0.3
    m_minus: float = 0.7
    swap_margins: bool = False
    lambda_node: float = 1.0
    lambda_edge: float = 1.0
    lambda_fg: float = 1.0
    lambda_box: float = 1.0
    order: tuple = ("AE", "QG", "PG")
    layers: int = 2
    share_layer_params: bool = False
    hidden: int = 0               # 0 means 2 * d
    train_relation_reps: bool = False
    edge_sample_size: int = 48
    seed: int = 0

    def __post_init__(self):
        self.order = tuple(self.order)
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.accum_scenes < 1:
            raise ValueError(f"accum_scenes must be >= 1, got {self.accum_scenes}")
        if self.edge_sample_size < 1:
            raise ValueError(f"edge_sample_size must be >= 1, got {self.edge_sample_size}")
        self.mp()  # validate order/layers

    def mp(self) -> MessagePassingConfig:
        return MessagePassingConfig(order=self.order, layers=self.layers,
                                    share_layer_params=self.share_layer_params)

    def weights(self) -> LossWeights:
        return LossWeights(node=self.lambda_node, edge=self.lambda_edge,
                           fg=self.lambda_fg, box=self.lambda_box)

    def with_order(self, order) -> "TrainConfig":
        return replace(self, order=tuple(order))


def init_model(dataset, cfg: TrainConfig) -> ModelParameters:
    dims = ModelDims(
        d=dataset.config.embed_dim,
        feature_dim=dataset.config.feature_dim,
        hidden=cfg.hidden,
        layers=cfg.layers,
        share_layer_params=cfg.share_layer_params,
        train_relation_reps=cfg.train_relation_reps,
    )
    return ModelParameters.init(dims, cfg.seed, provider=dataset.provider(),
                                predicates=dataset.vocab.predicates)


def _query_rng(seed: int, epoch: int, scene_id: int, q: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, 0xED6E, epoch, scene_id, q])))


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


def train(dataset, cfg: TrainConfig, params: ModelParameters | None = None,
          progress=None):
    """Train on the dataset's train split; deterministic in (dataset, cfg.seed).

    Returns (parameters, log) where the log has one record per epoch:
    {epoch, lr, node_loss, edge_loss, fg_ce, box_reg, total}.
    """
    records = dataset.split("train")
    if not records:
        raise TrainingError("dataset has no train split")
    provider = dataset.provider()
    if params is None:
        params = init_model(dataset, cfg)
    velocity = params.zeros_like()
    mp_cfg = cfg.mp()
    weights = cfg.weights()
    log = []

    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        shuffle_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([cfg.seed, 0x0DD5, epoch])))
        order = shuffle_rng.permutation(len(records))
        accum = params.zeros_like()
        accum_count = 0
        sums = {"node_loss": 0.0, "edge_loss": 0.0, "fg_ce": 0.0, "box_reg": 0.0,
                "total": 0.0}
        n_queries = 0

        for pos, ridx in enumerate(order):
            rec = records[ridx]
            for q_idx, query in enumerate(rec.queries):
                rng = _query_rng(cfg.seed, epoch, rec.scene.scene_id, q_idx)
                try:
                    fp, total_node, breakdown = compute_loss(
                        params, provider, rec.proposals, rec.scene, query,
                        tau=cfg.tau, mp_cfg=mp_cfg, weights=weights, rng=rng,
                        m_plus=cfg.m_plus, m_minus=cfg.m_minus,
                        swap_margins=cfg.swap_margins,
                        edge_sample_size=cfg.edge_sample_size,
                    )
                except NonFiniteValue as exc:
                    raise TrainingError(
                        f"non-finite loss at scene {rec.scene.scene_id}: {exc}"
                    ) from exc
                if not np.isfinite(breakdown.total):
                    raise TrainingError(
                        f"non-finite total loss at scene {rec.scene.scene_id}"
                    )
                grads = fp.tape.backward(total_node)
                for name in accum:
                    accum[name] += grads[name]
                accum_count += 1
                sums["node_loss"] += breakdown.node_loss
                sums["edge_loss"] += breakdown.edge_loss
                sums["fg_ce"] += breakdown.fg_ce_loss
                sums["box_reg"] += breakdown.box_reg_loss
                sums["total"] += breakdown.total
                n_queries += 1

            batch_done = (pos + 1) % cfg.accum_scenes == 0 or pos + 1 == len(order)
            if batch_done and accum_count:
                for name, g in accum.items():
                    velocity[name] = cfg.momentum * velocity[name] - lr * (g / accum_count)
                    params.arrays[name] += velocity[name]
                accum = params.zeros_like()
                accum_count = 0

        entry = {"epoch": epoch, "lr": lr}
        for key in ("node_loss", "edge_loss", "fg_ce", "box_reg", "total"):
            entry[key] = sums[key] / max(n_queries, 1)
        log.append(entry)
        if progress is not None:
            progress(entry)
    return params, log
