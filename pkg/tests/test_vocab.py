"""Vocabulary, seeded embeddings and the embedding-file loader."""

import numpy as np
import pytest

from sgground.vocab import (
    EmbeddingFileError,
    EmbeddingProvider,
    Vocabulary,
    VocabularyError,
    load_embeddings,
)


def test_embed_deterministic():
    p = EmbeddingProvider(dim=64, seed=17)
    assert np.array_equal(p.embed("person"), p.embed("person"))
    q = EmbeddingProvider(dim=64, seed=17)
    assert np.array_equal(p.embed("person"), q.embed("person"))


def test_embed_unit_norm():
    p = EmbeddingProvider(dim=64, seed=3)
    for token in ("person", "dog", "made_up_token_xyz", "near"):
        assert abs(np.linalg.norm(p.embed(token)) - 1.0) < 1e-9


def test_embed_changes_with_seed_and_token():
    a = EmbeddingProvider(dim=16, seed=1)
    b = EmbeddingProvider(dim=16, seed=2)
    assert not np.array_equal(a.embed("person"), b.embed("person"))
    assert not np.array_equal(a.embed("person"), a.embed("dog"))


def test_embed_near_orthogonality():
    # mean |<e(t1), e(t2)>| over 1000 random distinct pairs at d=64
    p = EmbeddingProvider(dim=64, seed=9)
    rng = np.random.default_rng(0)
    dots = []
    for _ in range(1000):
        i, j = rng.integers(0, 100000, size=2)
        if i == j:
            continue
        dots.append(abs(np.dot(p.embed(f"tok{i}"), p.embed(f"tok{j}"))))
    assert np.mean(dots) < 0.2


def test_embed_dim_validation():
    with pytest.raises(VocabularyError):
        EmbeddingProvider(dim=1)


def test_load_embeddings_roundtrip(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("alpha 1.0 0.0 0.0\nbeta 0.0 3.0 4.0\n")
    p = load_embeddings(path)
    assert p.dim == 3 and p.mode == "file"
    assert set(p.vectors) == {"alpha", "beta"}
    assert np.allclose(p.embed("beta"), [0.0, 0.6, 0.8])  # renormalized
    # out-of-file token falls back to the seeded scheme
    fallback = p.embed("gamma")
    assert abs(np.linalg.norm(fallback) - 1.0) < 1e-9


def test_load_embeddings_malformed_line(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("alpha 1.0 0.0 0.0\nbeta 0.0 3.0\n")
    with pytest.raises(EmbeddingFileError, match="line 2"):
        load_embeddings(path)


def test_load_embeddings_unparseable_number(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("alpha 1.0 zz 0.0\n")
    with pytest.raises(EmbeddingFileError, match="line 1"):
        load_embeddings(path)


def test_load_embeddings_zero_vector(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("alpha 0.0 0.0 0.0\n")
    with pytest.raises(EmbeddingFileError, match="zero vector"):
        load_embeddings(path)


def test_file_encoding_seeded_vectors_is_bit_identical(tmp_path):
    seeded = EmbeddingProvider(dim=8, seed=21)
    tokens = ["person", "dog", "left_of"]
    path = tmp_path / "emb.txt"
    with open(path, "w") as fh:
        for t in tokens:
            fh.write(t + " " + " ".join(repr(float(v)) for v in seeded.embed(t)) + "\n")
    loaded = load_embeddings(path, seed=21)
    for t in tokens:
        assert np.array_equal(loaded.embed(t), seeded.embed(t))
    # unknown tokens agree too (same fallback seed)
    assert np.array_equal(loaded.embed("cat"), seeded.embed("cat"))


def test_synonym_single_and_empty():
    vocab = Vocabulary(synonyms={"person": ["human"]})
    rng = np.random.default_rng(0)
    assert vocab.synonym_of("person", rng) == "human"
    assert vocab.synonym_of("dog", rng) == "dog"  # empty list: identity


def test_synonym_unknown_token():
    vocab = Vocabulary()
    with pytest.raises(VocabularyError):
        vocab.synonym_of("not_a_token", np.random.default_rng(0))


def test_synonym_uniform_frequencies():
    vocab = Vocabulary(synonyms={"person": ["human", "individual"]})
    rng = np.random.default_rng(5)
    draws = [vocab.synonym_of("person", rng) for _ in range(10000)]
    freq = draws.count("human") / len(draws)
    assert 0.45 <= freq <= 0.55


def test_vocabulary_validation():
    with pytest.raises(VocabularyError):
        Vocabulary(entity_classes=("person", "person"))
    with pytest.raises(VocabularyError):
        Vocabulary(synonyms={"person": ["person"]})
    with pytest.raises(VocabularyError):
        Vocabulary(predicates=("left_of", "right_of"))  # needs inside + near
    with pytest.raises(VocabularyError):
        Vocabulary(predicates=("inside", "near", "touching"))  # no definition
