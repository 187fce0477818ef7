"""Scoring functions against independent oracles and finite differences."""

import numpy as np
import pytest

from kgcalib.exceptions import ConfigError
from kgcalib.scoring import (
    MODEL_KINDS,
    circular_convolution,
    circular_correlation,
    complex_bilinear_grad,
    complex_bilinear_score,
    embedding_width,
    holographic_score,
    init_embeddings,
    score_and_grad,
    score_triples,
    translation_grad,
    translation_score,
    trilinear_score,
)

RNG_TRIALS = 25


def _random_rows(rng, n, k):
    return rng.standard_normal((n, k))


class TestTranslationScore:
    def test_matches_norm_definition_l2(self):
        rng = np.random.default_rng(0)
        for _ in range(RNG_TRIALS):
            s, p, o = _random_rows(rng, 3, 3 * 7).reshape(3, 3, 7)
            expected = -np.linalg.norm(s + p - o, ord=2, axis=1)
            np.testing.assert_allclose(translation_score(s, p, o, 2), expected)

    def test_matches_norm_definition_l1(self):
        rng = np.random.default_rng(1)
        for _ in range(RNG_TRIALS):
            s, p, o = _random_rows(rng, 3, 3 * 5).reshape(3, 3, 5)
            expected = -np.abs(s + p - o).sum(axis=1)
            np.testing.assert_allclose(translation_score(s, p, o, 1), expected)

    def test_perfect_translation_scores_zero(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal((4, 6))
        p = rng.standard_normal((4, 6))
        np.testing.assert_allclose(translation_score(s, p, s + p), 0.0, atol=1e-12)

    def test_invalid_norm_order_rejected(self):
        x = np.ones((1, 2))
        with pytest.raises(ConfigError):
            translation_score(x, x, x, 3)

    def test_subject_and_relation_gradients_coincide(self):
        rng = np.random.default_rng(3)
        s, p, o = _random_rows(rng, 3, 3 * 4).reshape(3, 3, 4)
        _, (g_s, g_p, g_o) = translation_grad(s, p, o)
        np.testing.assert_array_equal(g_s, g_p)
        np.testing.assert_allclose(g_o, -g_s)

    def test_zero_residual_gradient_is_zero_not_nan(self):
        s = np.ones((2, 3))
        p = np.ones((2, 3))
        o = s + p
        for order in (1, 2):
            _, (g_s, g_p, g_o) = translation_grad(s, p, o, order)
            assert np.isfinite(g_s).all()
            np.testing.assert_array_equal(g_s, 0.0)


class TestTrilinearScore:
    def test_matches_elementwise_sum(self):
        rng = np.random.default_rng(4)
        for _ in range(RNG_TRIALS):
            s, p, o = _random_rows(rng, 3, 3 * 6).reshape(3, 3, 6)
            expected = (s * p * o).sum(axis=1)
            np.testing.assert_allclose(trilinear_score(s, p, o), expected)


class TestComplexScore:
    def test_matches_complex_arithmetic_oracle(self):
        # Oracle: build genuine complex vectors and evaluate Re(<s, p, conj(o)>).
        rng = np.random.default_rng(5)
        k = 5
        for _ in range(RNG_TRIALS):
            rows = _random_rows(rng, 3, 2 * k)
            s, p, o = rows[0], rows[1], rows[2]
            cs = s[:k] + 1j * s[k:]
            cp = p[:k] + 1j * p[k:]
            co = o[:k] + 1j * o[k:]
            expected = np.real(np.sum(cs * cp * np.conj(co)))
            got = complex_bilinear_score(s[None], p[None], o[None])[0]
            np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_odd_width_rejected(self):
        x = np.ones((1, 3))
        with pytest.raises(ValueError):
            complex_bilinear_score(x, x, x)

    def test_gradient_matches_complex_oracle(self):
        # With z = s*p the score is Re(z)Re(o) + Im(z)Im(o), so d/d o = z.
        rng = np.random.default_rng(6)
        k = 4
        s, p, o = _random_rows(rng, 3, 2 * k).reshape(3, 1, 2 * k)
        _, (g_s, g_p, g_o) = complex_bilinear_grad(s, p, o)
        z = (s[0, :k] + 1j * s[0, k:]) * (p[0, :k] + 1j * p[0, k:])
        np.testing.assert_allclose(g_o[0, :k], z.real, rtol=1e-12)
        np.testing.assert_allclose(g_o[0, k:], z.imag, rtol=1e-12)


class TestCircularOps:
    def test_correlation_matches_fft_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(RNG_TRIALS):
            k = int(rng.integers(1, 12))
            x = rng.standard_normal((3, k))
            y = rng.standard_normal((3, k))
            oracle = np.fft.ifft(np.conj(np.fft.fft(x)) * np.fft.fft(y)).real
            np.testing.assert_allclose(circular_correlation(x, y), oracle, atol=1e-10)

    def test_convolution_matches_fft_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(RNG_TRIALS):
            k = int(rng.integers(1, 12))
            x = rng.standard_normal((2, k))
            y = rng.standard_normal((2, k))
            oracle = np.fft.ifft(np.fft.fft(x) * np.fft.fft(y)).real
            np.testing.assert_allclose(circular_convolution(x, y), oracle, atol=1e-10)

    def test_correlation_definition_by_explicit_loops(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(6)
        y = rng.standard_normal(6)
        got = circular_correlation(x[None], y[None])[0]
        for i in range(6):
            expected = sum(x[j] * y[(i + j) % 6] for j in range(6))
            np.testing.assert_allclose(got[i], expected, rtol=1e-12)


class TestHolographicScore:
    def test_matches_fft_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(RNG_TRIALS):
            k = int(rng.integers(2, 10))
            s, p, o = rng.standard_normal((3, 4, k))
            corr = np.fft.ifft(np.conj(np.fft.fft(p)) * np.fft.fft(o)).real
            expected = (s * corr).sum(axis=1)
            np.testing.assert_allclose(holographic_score(s, p, o), expected, atol=1e-10)


class TestFiniteDifferenceGradients:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_score_and_grad_matches_central_differences(self, kind):
        rng = np.random.default_rng(11)
        eps = 1e-6
        k = 6
        width = embedding_width(kind, k)
        checks = 0
        while checks < 40:
            rows = rng.standard_normal((3, width))
            if kind == "transe":
                # central differences break down at the norm kink
                if np.abs(rows[0] + rows[1] - rows[2]).min() < 1e-2:
                    continue
            entity_emb = np.vstack([rows[0], rows[2]])
            relation_emb = rows[1][None]
            triples = np.array([[0, 0, 1]])
            _, grads = score_and_grad(kind, entity_emb, relation_emb, triples)
            flat = np.concatenate([grads[0][0], grads[1][0], grads[2][0]])
            for slot in range(3):
                j = int(rng.integers(0, width))
                bumped = rows.copy()
                bumped[slot, j] += eps
                up = _score_rows(kind, bumped)
                bumped[slot, j] -= 2 * eps
                down = _score_rows(kind, bumped)
                numeric = (up - down) / (2 * eps)
                analytic = flat[slot * width + j]
                np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)
            checks += 1


def _score_rows(kind, rows):
    entity_emb = np.vstack([rows[0], rows[2]])
    relation_emb = rows[1][None]
    return float(score_triples(kind, entity_emb, relation_emb, np.array([[0, 0, 1]]))[0])


class TestDispatchers:
    def test_score_triples_rejects_unknown_kind(self):
        with pytest.raises(ConfigError):
            score_triples("bilinear", np.ones((2, 4)), np.ones((1, 4)), np.array([[0, 0, 1]]))

    def test_score_and_grad_agrees_with_score_triples(self):
        rng = np.random.default_rng(12)
        for kind in MODEL_KINDS:
            width = embedding_width(kind, 4)
            entity_emb = rng.standard_normal((5, width))
            relation_emb = rng.standard_normal((2, width))
            triples = rng.integers(0, [5, 2, 5], size=(7, 3))
            scores = score_triples(kind, entity_emb, relation_emb, triples)
            scores2, _ = score_and_grad(kind, entity_emb, relation_emb, triples)
            np.testing.assert_allclose(scores, scores2)


class TestInitEmbeddings:
    def test_shapes_and_bounds(self):
        for kind in MODEL_KINDS:
            entity_emb, relation_emb = init_embeddings(kind, 8, 10, 3, seed=0)
            width = embedding_width(kind, 8)
            assert entity_emb.shape == (10, width)
            assert relation_emb.shape == (3, width)
            bound = np.sqrt(6.0 / width)
            assert np.abs(entity_emb).max() <= bound
            assert np.abs(relation_emb).max() <= bound

    def test_same_seed_reproduces(self):
        a = init_embeddings("transe", 8, 10, 3, seed=5)
        b = init_embeddings("transe", 8, 10, 3, seed=5)
        c = init_embeddings("transe", 8, 10, 3, seed=6)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], c[0])

    def test_complex_width_is_doubled(self):
        assert embedding_width("complex", 8) == 16
        assert embedding_width("transe", 8) == 8

    def test_empty_counts_rejected(self):
        with pytest.raises(ConfigError):
            init_embeddings("transe", 8, 0, 3, seed=0)
