import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avjca import autodiff as ad
from avjca.autodiff import Graph, check_gradients
from avjca.errors import ContractError
from avjca.head import (
    VAR_FLOOR,
    aam_softmax_loss,
    asp_shapes,
    attention_weights,
    attentive_stats_pool,
    cosine_logits,
    cosine_score,
    embed,
)

from conftest import on_graph


def random_asp(rng, d, hidden):
    return {k: rng.normal(size=s) for k, s in asp_shapes(d, hidden).items()}


def consts(g, params):
    return {k: g.constant(v) for k, v in params.items()}


def asp_oracle(x, p):
    """Direct summation: per-segment energies, softmax, weighted moments."""
    d, L = x.shape
    energies = []
    for l in range(L):
        e = p["k"][0, 0]
        for j in range(p["W"].shape[0]):
            e += p["v"][j, 0] * math.tanh(sum(p["W"][j, i] * x[i, l] for i in range(d)) + p["b"][j, 0])
        energies.append(e)
    top = max(energies)
    z = [math.exp(e - top) for e in energies]
    alpha = [v / sum(z) for v in z]
    mean = [sum(alpha[l] * x[i, l] for l in range(L)) for i in range(d)]
    second = [sum(alpha[l] * x[i, l] ** 2 for l in range(L)) for i in range(d)]
    std = [math.sqrt(max(second[i] - mean[i] ** 2, VAR_FLOOR)) for i in range(d)]
    return np.array(mean + std)[:, None], np.array(alpha)


def plain_ce(logits, labels):
    total = 0.0
    for b, y in enumerate(labels):
        col = logits[:, b]
        total += -col[y] + math.log(sum(math.exp(v) for v in col))
    return total / len(labels)


class TestAttentiveStatsPool:
    def test_zero_attention_vector_is_plain_statistics(self, rng):
        x = rng.normal(size=(3, 5))
        p = random_asp(rng, 3, 4)
        p["v"] = np.zeros((4, 1))
        g, (nx,) = on_graph(x)
        out = attentive_stats_pool(nx, consts(g, p)).value[:, 0]
        np.testing.assert_allclose(out[:3], x.mean(axis=1), atol=1e-15)
        np.testing.assert_allclose(out[3:], x.std(axis=1), atol=1e-14)

    def test_single_segment(self, rng):
        x = rng.normal(size=(3, 1))
        g, (nx,) = on_graph(x)
        out = attentive_stats_pool(nx, consts(g, random_asp(rng, 3, 2))).value[:, 0]
        np.testing.assert_array_equal(out[:3], x[:, 0])
        np.testing.assert_array_equal(out[3:], np.full(3, math.sqrt(1e-12)))

    def test_matches_direct_summation(self, rng):
        x, p = rng.normal(size=(2, 3)), random_asp(rng, 2, 3)
        g, (nx,) = on_graph(x)
        expected, alpha = asp_oracle(x, p)
        np.testing.assert_allclose(attentive_stats_pool(nx, consts(g, p)).value, expected, atol=1e-12)
        np.testing.assert_allclose(attention_weights(nx, consts(g, p)).value[0], alpha, atol=1e-15)

    def test_batched_blocks_pool_separately(self, rng):
        L, B = 3, 4
        x, p = rng.normal(size=(2, B * L)), random_asp(rng, 2, 3)
        g, (nx,) = on_graph(x)
        out = attentive_stats_pool(nx, consts(g, p), L).value
        assert out.shape == (4, B)
        for b in range(B):
            np.testing.assert_allclose(out[:, b : b + 1], asp_oracle(x[:, b * L : (b + 1) * L], p)[0], atol=1e-12)

    @settings(deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_weights_positive_and_normalized(self, L, seed):
        rng = np.random.default_rng(seed)
        x = 5 * rng.normal(size=(3, L))
        g, (nx,) = on_graph(x)
        alpha = attention_weights(nx, consts(g, random_asp(rng, 3, 4))).value
        assert np.all(alpha > 0)
        assert abs(alpha.sum() - 1.0) <= 1e-12

    @settings(deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_segment_permutation_invariance(self, L, seed):
        rng = np.random.default_rng(seed)
        x, p = rng.normal(size=(3, L)), random_asp(rng, 3, 2)
        perm = rng.permutation(L)
        g, (nx, npx) = on_graph(x, x[:, perm])
        np.testing.assert_allclose(
            attentive_stats_pool(npx, consts(g, p)).value, attentive_stats_pool(nx, consts(g, p)).value, rtol=1e-12, atol=1e-14
        )

    def test_zero_segments(self):
        g, (x,) = on_graph(np.zeros((2, 0)))
        with pytest.raises(ContractError):
            attention_weights(x, {}, 0)


class TestEmbed:
    def test_identity_projection(self, rng):
        pooled = rng.normal(size=(4, 2))
        _, (npool, proj) = on_graph(pooled, np.eye(4))
        np.testing.assert_array_equal(embed(npool, proj).value, pooled)

    def test_zero_projection_is_caught_downstream(self, rng):
        _, (npool, proj, classes) = on_graph(rng.normal(size=(4, 2)), np.zeros((3, 4)), rng.normal(size=(2, 3)))
        emb = embed(npool, proj)
        assert not emb.value.any()
        with pytest.raises(ContractError):
            aam_softmax_loss(emb, [0, 1], classes)


class TestAamSoftmax:
    def test_no_margin_unit_scale_is_cosine_cross_entropy(self, rng):
        e, w = rng.normal(size=(4, 5)), rng.normal(size=(3, 4))
        labels = [0, 2, 1, 1, 0]
        cos = (w / np.linalg.norm(w, axis=1, keepdims=True)) @ (e / np.linalg.norm(e, axis=0))
        _, (ne, nw) = on_graph(e, w)
        loss = aam_softmax_loss(ne, labels, nw, s=1.0, m=0.0).value[0, 0]
        assert loss == pytest.approx(plain_ce(cos, labels), rel=1e-14, abs=1e-15)

    def test_single_class_loss_is_zero(self, rng):
        _, (ne, nw) = on_graph(rng.normal(size=(3, 4)), rng.normal(size=(1, 3)))
        assert aam_softmax_loss(ne, [0, 0, 0, 0], nw).value[0, 0] == 0.0

    def test_hand_trigonometry(self):
        # Embedding at 30 degrees from class 0 and 100 degrees from class 1.
        a, b = math.radians(30), math.radians(100)
        e = np.array([[math.cos(a)], [math.sin(a)]])
        w = np.array([[1.0, 0.0], [math.cos(a - b), math.sin(a - b)]])
        s, m = 10.0, 0.3
        z0 = s * math.cos(a + m)
        z1 = s * math.cos(b)
        expected = -z0 + math.log(math.exp(z0) + math.exp(z1))
        _, (ne, nw) = on_graph(e, w)
        assert aam_softmax_loss(ne, [0], nw, s=s, m=m).value[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_margin_fallback_beyond_pi(self):
        # Target angle 170 degrees with m = 0.3: theta + m exceeds pi, so the linear fallback applies.
        t = math.radians(170)
        e = np.array([[math.cos(t)], [math.sin(t)]])
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        s, m = 5.0, 0.3
        z0 = s * (math.cos(t) - m * math.sin(m))
        z1 = s * math.sin(t)
        _, (ne, nw) = on_graph(e, w)
        expected = -z0 + math.log(math.exp(z0) + math.exp(z1))
        assert aam_softmax_loss(ne, [0], nw, s=s, m=m).value[0, 0] == pytest.approx(expected, rel=1e-12)

    @settings(deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
    def test_embedding_scale_invariance(self, factor, seed):
        rng = np.random.default_rng(seed)
        e, w = rng.normal(size=(4, 3)), rng.normal(size=(5, 4))
        labels = [4, 0, 2]
        _, (ne, nse, nw) = on_graph(e, e * factor, w)
        base = aam_softmax_loss(ne, labels, nw).value[0, 0]
        assert aam_softmax_loss(nse, labels, nw).value[0, 0] == pytest.approx(base, rel=1e-12)

    @pytest.mark.parametrize("m", [-0.1, math.pi / 2])
    def test_margin_range(self, rng, m):
        _, (ne, nw) = on_graph(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
        with pytest.raises(ContractError):
            aam_softmax_loss(ne, [0, 1], nw, m=m)

    def test_cosine_logits_bounded(self, rng):
        _, (ne, nw) = on_graph(rng.normal(size=(4, 6)), rng.normal(size=(3, 4)))
        assert np.all(np.abs(cosine_logits(ne, nw).value) <= 1 + 1e-15)

    def test_head_gradients(self):
        rng = np.random.default_rng(5)
        L, B, d = 3, 2, 2
        x = rng.normal(size=(d, B * L))

        def build(g, p):
            pooled = attentive_stats_pool(g.constant(x), {k: p[k] for k in ("W", "b", "v", "k")}, L)
            return aam_softmax_loss(embed(pooled, p["E"]), [0, 1], p["C"], s=5.0, m=0.2)

        def sampler(attempt):
            r = np.random.default_rng(attempt)
            params = random_asp(r, d, 3)
            params.update(E=r.normal(size=(3, 2 * d)), C=r.normal(size=(2, 3)))
            return params

        for attempt in range(100):
            params = sampler(attempt)
            g = Graph()
            nodes = g.parameters(params)
            pooled = attentive_stats_pool(g.constant(x), {k: nodes[k] for k in ("W", "b", "v", "k")}, L)
            cos = cosine_logits(embed(pooled, nodes["E"]), nodes["C"]).value
            if np.all(np.abs(cos[[0, 1], [0, 1]]) <= 0.99):
                break
        report = check_gradients(build, params)
        assert report.passed, report


class TestCosineScore:
    def test_examples(self):
        v = np.array([0.3, -1.2, 2.0])
        assert cosine_score(v, v) == pytest.approx(1.0, abs=1e-15)
        assert cosine_score([1, 0], [0, 1]) == 0.0
        assert cosine_score([3, 4], [4, 3]) == pytest.approx(0.96, abs=1e-15)

    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_symmetric_and_scale_invariant(self, seed, a, b):
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=5), rng.normal(size=5)
        base = cosine_score(u, v)
        assert cosine_score(v, u) == base
        assert cosine_score(a * u, b * v) == pytest.approx(base, rel=1e-12, abs=1e-14)

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            cosine_score([0.0, 0.0], [1.0, 0.0])
