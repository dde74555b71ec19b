"""Dataset container and JSON-lines persistence.

One JSON object per line: a header record {version, config, vocab} followed
by scene records {scene_id, split, instances, triples, proposals, queries}.
Floats are written with shortest round-trip precision (up to 17 significant
digits), so read(write(x)) is field-for-field identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .boxes import Box
from .scenegen import (
    DatasetConfig,
    Instance,
    Proposal,
    QueryGraph,
    QueryNode,
    Scene,
    SceneGenerationError,
    generate_proposals,
    generate_scene,
    sample_query,
    QuerySamplingError,
)
from .vocab import EmbeddingProvider, Vocabulary

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class SceneRecord:
    scene: Scene
    proposals: list
    queries: list
    split: str


@dataclass
class GroundingDataset:
    config: DatasetConfig
    vocab: Vocabulary
    records: list

    def provider(self) -> EmbeddingProvider:
        return self.config.provider()

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    @property
    def n_queries(self) -> int:
        return sum(len(r.queries) for r in self.records)


def _scene_rng(seed: int, scene_index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, scene_index, attempt])))


def make_dataset(cfg: DatasetConfig, vocab: Vocabulary | None = None) -> GroundingDataset:
    """Generate scenes, proposals and queries; pure function of (cfg, seed)."""
    vocab = vocab or Vocabulary()
    provider = cfg.provider()
    records = []
    total = cfg.n_scenes + cfg.n_test_scenes
    for idx in range(total):
        split = "train" if idx < cfg.n_scenes else "test"
        scene = None
        for attempt in range(20):
            rng = _scene_rng(cfg.seed, idx, attempt)
            try:
                scene = generate_scene(cfg, vocab, rng, scene_id=idx,
                                       allow_held_out=(split == "test"))
                break
            except SceneGenerationError:
                continue
        if scene is None:
            raise SceneGenerationError(f"could not generate scene {idx}")
        proposals = generate_proposals(scene, cfg, provider, rng)
        queries = []
        for _ in range(cfg.queries_per_scene):
            want = int(rng.integers(1, cfg.max_query_edges + 1))
            for n_edges in range(want, 0, -1):
                try:
                    queries.append(sample_query(scene, n_edges, rng))
                    break
                except QuerySamplingError:
                    continue
        records.append(SceneRecord(scene=scene, proposals=proposals,
                                   queries=queries, split=split))
    return GroundingDataset(config=cfg, vocab=vocab, records=records)


# -- serialization -----------------------------------------------------------


def _box_dict(b: Box):
    return {"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h}


def _record_dict(rec: SceneRecord):
    return {
        "scene_id": rec.scene.scene_id,
        "split": rec.split,
        "instances": [
            {"id": i.id, "class": i.cls, "box": _box_dict(i.box)}
            for i in rec.scene.instances
        ],
        "triples": [list(t) for t in rec.scene.triples],
        "proposals": [
            {
                "box": _box_dict(p.box),
                "feature": [float(v) for v in p.feature],
                "objectness": p.objectness,
                "matched_instance": p.matched_instance,
            }
            for p in rec.proposals
        ],
        "queries": [
            {
                "nodes": [[n.node_id, n.cls, n.target] for n in q.nodes],
                "edges": [list(e) for e in q.edges],
            }
            for q in rec.queries
        ],
    }


def write_dataset(path, dataset: GroundingDataset) -> None:
    header = {
        "version": FORMAT_VERSION,
        "config": asdict(dataset.config),
        "vocab": dataset.vocab.to_dict(),
    }
    header["config"]["held_out_classes"] = list(dataset.config.held_out_classes)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in dataset.records:
            fh.write(json.dumps(_record_dict(rec), sort_keys=True) + "\n")


def _parse_box(obj, where):
    try:
        return Box(float(obj["cx"]), float(obj["cy"]), float(obj["w"]), float(obj["h"]))
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{where}: field 'box' malformed ({exc})") from exc


def _parse_record(obj, index):
    where = f"record {index}"
    try:
        instances = [
            Instance(int(i["id"]), str(i["class"]), _parse_box(i["box"], where))
            for i in obj["instances"]
        ]
        triples = [(int(s), str(p), int(o)) for s, p, o in obj["triples"]]
        proposals = [
            Proposal(
                box=_parse_box(p["box"], where),
                feature=np.array(p["feature"], dtype=np.float64),
                objectness=float(p["objectness"]),
                matched_instance=None if p["matched_instance"] is None else int(p["matched_instance"]),
            )
            for p in obj["proposals"]
        ]
        queries = [
            QueryGraph(
                nodes=[QueryNode(int(n[0]), str(n[1]), int(n[2])) for n in q["nodes"]],
                edges=[(int(s), str(pr), int(d)) for s, pr, d in q["edges"]],
            )
            for q in obj["queries"]
        ]
        scene = Scene(scene_id=int(obj["scene_id"]), instances=instances, triples=triples)
        return SceneRecord(scene=scene, proposals=proposals, queries=queries,
                           split=str(obj["split"]))
    except KeyError as exc:
        raise DatasetFormatError(f"{where}: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{where}: {exc}") from exc


def read_dataset(path) -> GroundingDataset:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file (no header record)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"header record unparseable: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {header.get('version')!r}")
    try:
        cfg_dict = dict(header["config"])
        cfg_dict["held_out_classes"] = tuple(cfg_dict.get("held_out_classes", ()))
        config = DatasetConfig(**cfg_dict)
        vocab = Vocabulary.from_dict(header["vocab"])
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"header record: {exc}") from exc

    records = []
    for i, line in enumerate(lines[1:], start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(
                f"record {i} unparseable (last complete record: {i - 1}): {exc}"
            ) from exc
        records.append(_parse_record(obj, i))
    return GroundingDataset(config=config, vocab=vocab, records=records)
