"""Entity/predicate vocabulary and deterministic token embeddings.

Embeddings are unit-norm pseudo-random vectors keyed by a hash of the token
plus a provider seed, so any token (including ones never seen in training)
maps to a stable vector.  A text file of pre-computed vectors can be loaded
instead; tokens missing from the file fall back to the seeded scheme.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# Predicates with analytic geometric definitions (see scenegen.relation_holds).
SUPPORTED_PREDICATES = ("left_of", "right_of", "above", "below", "inside", "near")

DEFAULT_ENTITY_CLASSES = (
    "person", "dog", "cat", "car", "tree", "house", "chair", "table",
    "cup", "book", "bird", "fish", "lamp", "phone", "ball", "shoe",
    "hat", "door", "window", "plant",
)

DEFAULT_SYNONYMS = {
    "person": ["human"], "dog": ["hound"], "cat": ["feline"], "car": ["automobile"],
    "tree": ["sapling"], "house": ["home"], "chair": ["seat"], "table": ["desk"],
    "cup": ["mug"], "book": ["tome"], "bird": ["fowl"], "fish": ["trout"],
    "lamp": ["lantern"], "phone": ["handset"], "ball": ["sphere"], "shoe": ["boot"],
    "hat": ["cap"], "door": ["gate"], "window": ["pane"], "plant": ["shrub"],
    "left_of": ["west_of"], "right_of": ["east_of"], "above": ["over"],
    "below": ["under"], "inside": ["within"], "near": ["beside"],
}


class VocabularyError(ValueError):
    pass


class EmbeddingFileError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Entity classes, predicates and the synonym table used for perturbation."""

    entity_classes: tuple = DEFAULT_ENTITY_CLASSES
    predicates: tuple = SUPPORTED_PREDICATES
    synonyms: dict = field(default_factory=lambda: dict(DEFAULT_SYNONYMS))

    def __post_init__(self):
        self.entity_classes = tuple(self.entity_classes)
        self.predicates = tuple(self.predicates)
        tokens = self.entity_classes + self.predicates
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("entity and predicate tokens must be unique")
        unsupported = set(self.predicates) - set(SUPPORTED_PREDICATES)
        if unsupported:
            raise VocabularyError(f"predicates without geometric definitions: {sorted(unsupported)}")
        if "inside" not in self.predicates or "near" not in self.predicates:
            raise VocabularyError("predicate list needs a containment ('inside') and a proximity ('near') predicate")
        for tok, syns in self.synonyms.items():
            if any(s == tok for s in syns):
                raise VocabularyError(f"synonym of {tok!r} must be a distinct token string")

    def tokens(self):
        return self.entity_classes + self.predicates

    def synonym_of(self, token: str, rng: np.random.Generator) -> str:
        """Uniformly random synonym of a known token; identity on empty lists."""
        if token not in self.entity_classes and token not in self.predicates:
            raise VocabularyError(f"unknown token {token!r}")
        options = self.synonyms.get(token, [])
        if not options:
            return token
        return options[int(rng.integers(len(options)))]

    def to_dict(self):
        return {
            "entity_classes": list(self.entity_classes),
            "predicates": list(self.predicates),
            "synonyms": {k: list(v) for k, v in sorted(self.synonyms.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            entity_classes=tuple(d["entity_classes"]),
            predicates=tuple(d["predicates"]),
            synonyms={k: list(v) for k, v in d["synonyms"].items()},
        )


def _token_entropy(token: str) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class EmbeddingProvider:
    """Deterministic unit-norm token embeddings, seeded or file-backed."""

    def __init__(self, dim: int = 64, seed: int = 17, vectors: dict | None = None,
                 source: str | None = None):
        if dim < 2:
            raise VocabularyError(f"embedding dimension must be >= 2, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        self.vectors = dict(vectors or {})
        self.source = source

    @property
    def mode(self) -> str:
        return "file" if self.vectors else "seeded"

    def embed(self, token: str) -> np.ndarray:
        known = self.vectors.get(token)
        if known is not None:
            return known.copy()
        ss = np.random.SeedSequence([self.seed, _token_entropy(token)])
        v = np.random.Generator(np.random.PCG64(ss)).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_many(self, tokens) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in tokens])


def load_embeddings(path, seed: int = 17) -> EmbeddingProvider:
    """Load whitespace-separated `token v1 .. vd` lines into a provider.

    Vectors are renormalized to unit norm unless already unit to 1e-9 (so a
    file that encodes exactly the seeded vectors reproduces them bit for bit).
    """
    vectors = {}
    dim = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            token = parts[0]
            try:
                values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFileError(f"line {lineno}: unparseable number ({exc})") from exc
            if dim is None:
                dim = len(values)
                if dim < 2:
                    raise EmbeddingFileError(f"line {lineno}: need at least 2 values, got {dim}")
            elif len(values) != dim:
                raise EmbeddingFileError(
                    f"line {lineno}: expected {dim} values, got {len(values)}"
                )
            norm = np.linalg.norm(values)
            if norm == 0.0:
                raise EmbeddingFileError(f"line {lineno}: zero vector cannot be normalized")
            if abs(norm - 1.0) > 1e-9:
                values = values / norm
            vectors[token] = values
    if dim is None:
        raise EmbeddingFileError("embedding file contains no records")
    return EmbeddingProvider(dim=dim, seed=seed, vectors=vectors, source=str(path))
