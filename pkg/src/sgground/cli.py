"""Command-line surface: gen, train, eval, render, ablate, bench.

Configuration precedence per key: command-line flag > config file > default.
Config files are flat `key = value` text; unknown keys are rejected before
any work starts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

from .dataset import GroundingDataset, make_dataset, read_dataset, write_dataset
from .evaluation import (
    ablation_orders,
    evaluate,
    infer,
    proposal_graph_sparsity,
    robustness_sweep,
    timing_benchmark,
    zero_shot_eval,
)
from .mpnet import MessagePassingConfig
from .params import (
    CheckpointError,
    config_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .render import render_svg
from .scenegen import DatasetConfig
from .training import TrainConfig, init_model, train
from .vocab import Vocabulary


class ConfigError(ValueError):
    pass


_DATASET_FIELDS = {f.name: f for f in dataclasses.fields(DatasetConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_KNOWN_KEYS = set(_DATASET_FIELDS) | set(_TRAIN_FIELDS)


def parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def _coerce(key: str, value, fields) -> object:
    if not isinstance(value, str):
        return value
    default = fields[key].default
    if key == "order":
        return MessagePassingConfig.parse_order(value)
    if key == "held_out_classes":
        return tuple(t.strip() for t in value.split(",") if t.strip())
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _build_config(cls, fields, file_values, flag_values):
    kwargs = {}
    for key, value in file_values.items():
        if key in fields:
            kwargs[key] = _coerce(key, value, fields)
    for key, value in flag_values.items():
        if value is not None and key in fields:
            kwargs[key] = _coerce(key, value, fields)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _flag_values(args, keys) -> dict:
    return {k: getattr(args, k, None) for k in keys}


def _fingerprint_payload(dims, dataset: GroundingDataset) -> dict:
    return {
        "dims": dims.to_dict(),
        "vocab": dataset.vocab.to_dict(),
        "embed_dim": dataset.config.embed_dim,
        "embed_seed": dataset.config.embed_seed,
    }


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj, key=str):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}.{i}", v, out)
    elif obj is None:
        out.append((prefix, ""))
    else:
        out.append((prefix, obj))


def write_metrics(prefix, payload: dict) -> None:
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    rows = []
    _flatten("", payload, rows)
    with open(f"{prefix}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)


# -- subcommands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    flags = _flag_values(args, _DATASET_FIELDS)
    cfg = _build_config(DatasetConfig, _DATASET_FIELDS, file_values, flags)
    dataset = make_dataset(cfg, Vocabulary())
    write_dataset(args.out, dataset)
    print(f"wrote {args.out}: {len(dataset.records)} scenes "
          f"({cfg.n_scenes} train, {cfg.n_test_scenes} test), "
          f"{dataset.n_queries} queries")
    return 0


def _load_train_config(args) -> TrainConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    flags = _flag_values(args, _TRAIN_FIELDS)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        if key not in _TRAIN_FIELDS:
            raise ConfigError(f"--set: unknown key {key!r}")
        flags[key] = value
    return _build_config(TrainConfig, _TRAIN_FIELDS, file_values, flags)


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    dataset = read_dataset(args.dataset)
    params = init_model(dataset, cfg)
    fingerprint = config_fingerprint(_fingerprint_payload(params.dims, dataset))
    params, log = train(dataset, cfg, params=params,
                        progress=None if args.quiet else _print_epoch)
    extra = {"train_config": _config_dict(cfg)}
    save_checkpoint(args.out, params, fingerprint, extra=extra)
    log_path = args.log or (args.out + ".log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"wrote {args.out} and {log_path} ({len(log)} epochs)")
    return 0


def _print_epoch(entry):
    print("epoch {epoch:3d}  lr {lr:.5f}  total {total:.4f}  node {node_loss:.4f}  "
          "edge {edge_loss:.4f}  fg {fg_ce:.4f}  box {box_reg:.4f}".format(**entry))


def _config_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    d["order"] = list(cfg.order)
    return d


def _load_for_eval(args):
    dataset = read_dataset(args.dataset)
    params, fingerprint, extra = load_checkpoint(args.checkpoint)
    expected = config_fingerprint(_fingerprint_payload(params.dims, dataset))
    if fingerprint != expected:
        raise CheckpointError(
            "checkpoint/config mismatch: the checkpoint was trained against a "
            "different vocabulary or model geometry than this dataset"
        )
    tc = extra.get("train_config", {})
    tau = args.tau if getattr(args, "tau", None) is not None else tc.get("tau", 0.4)
    order = tuple(tc.get("order", ("AE", "QG", "PG")))
    if getattr(args, "order", None) is not None:
        order = MessagePassingConfig.parse_order(args.order)
    mp_cfg = MessagePassingConfig(order=order, layers=params.dims.layers,
                                  share_layer_params=params.dims.share_layer_params)
    return dataset, params, tau, mp_cfg


def cmd_eval(args) -> int:
    dataset, params, tau, mp_cfg = _load_for_eval(args)
    provider = dataset.provider()
    records = dataset.split(args.split)
    if not records:
        raise ConfigError(f"dataset has no {args.split!r} split")
    held_out = dataset.config.held_out_classes
    payload = {"split": args.split, "tau": tau, "order": list(mp_cfg.order)}
    payload["metrics"] = evaluate(params, provider, records, tau, mp_cfg, held_out)
    if args.robustness:
        payload["robustness"] = {
            str(p): r for p, r in robustness_sweep(
                params, provider, records, dataset.vocab, tau, mp_cfg,
                seed=args.seed).items()
        }
    if args.zero_shot:
        payload["zero_shot"] = zero_shot_eval(params, provider, records, held_out,
                                              tau, mp_cfg)
    if args.sparsity:
        payload["sparsity"] = proposal_graph_sparsity(params, provider, records,
                                                      tau, mp_cfg)
    if args.timing:
        payload["timing"] = timing_benchmark(params, provider, dataset.vocab, tau,
                                             mp_cfg, repetitions=args.reps)
    write_metrics(args.out, payload)
    m = payload["metrics"]
    print(f"R@1 {m['r_at_1']:.4f}  R@5 {m['r_at_5']:.4f}  ({m['n_nodes']} nodes) "
          f"-> {args.out}.json / .csv")
    return 0


def cmd_render(args) -> int:
    dataset, params, tau, mp_cfg = _load_for_eval(args)
    provider = dataset.provider()
    record = next((r for r in dataset.records if r.scene.scene_id == args.scene), None)
    if record is None:
        raise ConfigError(f"unknown scene id {args.scene}")
    if not 0 <= args.query < len(record.queries):
        raise ConfigError(f"scene {args.scene} has {len(record.queries)} queries, "
                          f"query index {args.query} is out of range")
    query = record.queries[args.query]
    loc = infer(record.proposals, record.scene, query, params, provider, tau, mp_cfg)
    svg = render_svg(record.scene, query, record.proposals, loc)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    dataset = read_dataset(args.dataset)
    from .evaluation import ABLATION_ORDERS

    orders = ABLATION_ORDERS
    if args.rows:
        picks = [int(i) for i in args.rows.split(",")]
        orders = tuple(ABLATION_ORDERS[i] for i in picks)
    results = ablation_orders(dataset, cfg, orders=orders,
                              progress=lambda row: print(
                                  f"order={','.join(row['order']) or '(none)':<12} "
                                  f"R@1 {row['r_at_1']:.4f}  R@5 {row['r_at_5']:.4f}"))
    write_metrics(args.out, {"ablation": results})
    print(f"wrote {args.out}.json / .csv")
    return 0


def cmd_bench(args) -> int:
    dataset, params, tau, mp_cfg = _load_for_eval(args)
    result = timing_benchmark(params, dataset.provider(), dataset.vocab, tau, mp_cfg,
                              n_proposals=args.proposals, repetitions=args.reps)
    write_metrics(args.out, {"timing": result})
    for n, s in zip(result["edges"], result["seconds"]):
        print(f"{n} edges: {s * 1000:.2f} ms")
    return 0


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgground",
        description="scene-graph grounding on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset file")
    gen.add_argument("--config", help="key = value config file")
    gen.add_argument("--out", required=True)
    gen.add_argument("--scenes", dest="n_scenes", type=int)
    gen.add_argument("--test-scenes", dest="n_test_scenes", type=int)
    gen.add_argument("--classes-per-scene", dest="classes_per_scene", type=int)
    gen.add_argument("--distractors", dest="distractors", type=int)
    gen.add_argument("--duplicated-classes", dest="duplicated_classes", type=int)
    gen.add_argument("--proposals", dest="proposals_per_scene", type=int)
    gen.add_argument("--queries-per-scene", dest="queries_per_scene", type=int)
    gen.add_argument("--max-query-edges", dest="max_query_edges", type=int)
    gen.add_argument("--held-out", dest="held_out_classes")
    gen.add_argument("--dim", dest="embed_dim", type=int)
    gen.add_argument("--embed-seed", dest="embed_seed", type=int)
    gen.add_argument("--feature-noise", dest="feature_noise", type=float)
    gen.add_argument("--seed", dest="seed", type=int)
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a model on a dataset")
    tr.add_argument("--config")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--log")
    tr.add_argument("--quiet", action="store_true")
    tr.add_argument("--epochs", dest="epochs", type=int)
    tr.add_argument("--lr", dest="lr", type=float)
    tr.add_argument("--order", dest="order")
    tr.add_argument("--layers", dest="layers", type=int)
    tr.add_argument("--tau", dest="tau", type=float)
    tr.add_argument("--seed", dest="seed", type=int)
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override any train config key")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True, help="output prefix for .json/.csv")
    ev.add_argument("--split", default="test")
    ev.add_argument("--order", help='override message passing order, e.g. "" or "AE,QG"')
    ev.add_argument("--tau", type=float)
    ev.add_argument("--robustness", action="store_true")
    ev.add_argument("--zero-shot", dest="zero_shot", action="store_true")
    ev.add_argument("--sparsity", action="store_true")
    ev.add_argument("--timing", action="store_true")
    ev.add_argument("--reps", type=int, default=20)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    rd = sub.add_parser("render", help="render a grounding to SVG")
    rd.add_argument("--checkpoint", required=True)
    rd.add_argument("--dataset", required=True)
    rd.add_argument("--scene", type=int, required=True)
    rd.add_argument("--query", type=int, required=True)
    rd.add_argument("--out", required=True)
    rd.set_defaults(func=cmd_render)

    ab = sub.add_parser("ablate", help="train/evaluate the step-order table")
    ab.add_argument("--config")
    ab.add_argument("--dataset", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--rows", help="comma-separated row indices into the order table")
    ab.add_argument("--epochs", dest="epochs", type=int)
    ab.add_argument("--seed", dest="seed", type=int)
    ab.add_argument("--set", action="append", metavar="KEY=VALUE")
    ab.set_defaults(func=cmd_ablate)

    be = sub.add_parser("bench", help="inference timing by query size")
    be.add_argument("--checkpoint", required=True)
    be.add_argument("--dataset", required=True)
    be.add_argument("--out", required=True)
    be.add_argument("--proposals", type=int, default=64)
    be.add_argument("--reps", type=int, default=20)
    be.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
