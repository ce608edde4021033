import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alpool.features import (
    FeatureConfig,
    extract_ngrams,
    fnv1a64,
    hash_token,
    ngram_strings,
    stack_vectors,
)


class TestHash:
    def test_fnv1a_reference_value(self):
        # Independent reference: FNV-1a 64 of "a".
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C

    def test_manual_recurrence(self):
        h = 0xCBF29CE484222325
        for b in b"read":
            h = ((h ^ b) * 0x100000001B3) % 2**64
        assert fnv1a64(b"read") == h

    def test_reduction_and_determinism(self):
        assert hash_token("a", 18) == fnv1a64(b"a") % 2**18
        assert hash_token("a", 18) == hash_token("a", 18)

    def test_distinct_tokens_distinct_index_at_30_bits(self):
        assert hash_token("a", 30) != hash_token("b", 30)

    def test_bits_range_enforced(self):
        with pytest.raises(ValueError):
            hash_token("a", 9)
        with pytest.raises(ValueError):
            hash_token("a", 31)


class TestExtract:
    def test_empty_tokens(self):
        fv = extract_ngrams([], FeatureConfig())
        assert fv.nnz == 0
        assert fv.total() == 0.0

    def test_ngram_strings(self):
        cfg = FeatureConfig(ngram_orders=(1, 2))
        assert ngram_strings(["a", "b"], cfg) == ["a", "b", "a_b"]

    def test_total_mass(self):
        fv = extract_ngrams(["a", "b"], FeatureConfig(ngram_orders=(1, 2)))
        assert fv.total() == 3.0

    def test_collision_accumulates(self):
        # Two identical unigrams necessarily collide at hash("a").
        fv = extract_ngrams(["a", "a"], FeatureConfig(ngram_orders=(1,)))
        assert fv.nnz == 1
        assert fv.indices[0] == hash_token("a", 18)
        assert fv.values[0] == 2.0

    def test_lowercasing(self):
        cfg = FeatureConfig(ngram_orders=(1,))
        assert extract_ngrams(["Read"], cfg).indices[0] == hash_token("read", 18)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FeatureConfig(ngram_orders=())
        with pytest.raises(ValueError):
            FeatureConfig(ngram_orders=(4,))

    @given(st.lists(st.sampled_from(["go", "stop", "a", "b", "north"]), max_size=12))
    def test_mass_preserved_under_collisions(self, tokens):
        cfg = FeatureConfig(ngram_orders=(1, 2, 3), hash_bits=10)
        fv = extract_ngrams(tokens, cfg)
        assert fv.total() == len(ngram_strings(tokens, cfg))

    def test_two_process_reproducibility(self):
        import subprocess
        import sys

        code = (
            "from alpool.features import extract_ngrams, FeatureConfig;"
            "fv = extract_ngrams(['read', 'me', 'a', 'book'], FeatureConfig());"
            "print(fv.indices.tolist(), fv.values.tolist())"
        )
        runs = {
            subprocess.run(
                [sys.executable, "-c", code], capture_output=True, text=True, check=True
            ).stdout
            for _ in range(2)
        }
        assert len(runs) == 1


class TestStack:
    def test_matches_individual_dots(self):
        rng = np.random.default_rng(0)
        cfg = FeatureConfig(hash_bits=10)
        vectors = [
            extract_ngrams([f"t{rng.integers(5)}" for _ in range(4)], cfg) for _ in range(7)
        ]
        weights = rng.normal(size=cfg.dim)
        matrix = stack_vectors(vectors, cfg.dim)
        got = matrix @ weights
        expected = [fv.dot(weights) for fv in vectors]
        assert np.allclose(got, expected)

    def test_empty(self):
        matrix = stack_vectors([], 1024)
        assert matrix.shape == (0, 1024)
