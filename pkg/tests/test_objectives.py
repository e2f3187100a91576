import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metsk import numerics as nm
from metsk import objectives as obj
from metsk.errors import DegenerateInputError, ValidationError

from conftest import fd_check


def direct_contrastive(v1, v2, tau):
    n = v1.shape[0]
    sim = lambda a, b: a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    total = 0.0
    for i in range(n):
        num = math.exp(sim(v1[i], v2[i]) / tau)
        den = sum(math.exp(sim(v1[i], v2[m]) / tau) for m in range(n) if m != i)
        total += -math.log(num / den)
    return total / n


class TestCosine:
    def test_identical(self):
        assert obj.cosine_sim([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert obj.cosine_sim([1, 0], [0, 1]) == 0.0

    def test_scale_invariance(self, rng):
        u, v = rng.standard_normal(5), rng.standard_normal(5)
        assert abs(obj.cosine_sim(2 * u, 3 * v) - obj.cosine_sim(u, v)) < 1e-12

    def test_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            obj.cosine_sim([0, 0], [1, 0])


class TestContrastive:
    def test_identical_embeddings_give_zero(self):
        e = np.ones((2, 3))
        assert abs(obj.contrastive_loss(e, e, 30.0).item()) < 1e-12

    @pytest.mark.parametrize("tau", [0.5, 1.0, 30.0])
    def test_direct_formula(self, rng, tau):
        v1, v2 = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        assert abs(obj.contrastive_loss(v1, v2, tau).item() - direct_contrastive(v1, v2, tau)) < 1e-9

    def test_include_positive_variant(self, rng):
        v1, v2 = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        s = np.array([[obj.cosine_sim(a, b) for b in v2] for a in v1])
        expected = np.mean([-s[i, i] + math.log(np.exp(s[i]).sum()) for i in range(4)])
        assert abs(obj.contrastive_loss(v1, v2, 1.0, include_positive=True).item() - expected) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_rescaling_invariance(self, seed, c):
        r = np.random.default_rng(seed)
        v1, v2 = r.standard_normal((5, 4)), r.standard_normal((5, 4))
        base = obj.contrastive_loss(v1, v2, 30.0).item()
        assert abs(obj.contrastive_loss(c * v1, c * v2, 30.0).item() - base) < 1e-9

    def test_can_go_negative(self):
        v1 = np.eye(3)
        assert obj.contrastive_loss(v1, v1, 0.1).item() < 0

    def test_gradient_descent_separates(self, rng):
        params = {"a": rng.standard_normal((4, 8)), "b": rng.standard_normal((4, 8))}

        def loss(t):
            return obj.contrastive_loss(t["a"], t["b"], 1.0)

        def gap(p):
            s = np.array([[obj.cosine_sim(x, y) for y in p["b"]] for x in p["a"]])
            return np.diag(s).mean() - s[~np.eye(4, dtype=bool)].mean()

        losses, gap0 = [], gap(params)
        for _ in range(200):
            value, g = nm.value_and_grad(loss, params)
            losses.append(value)
            params = {k: params[k] - 0.1 * g[k] for k in params}
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert gap(params) > gap0

    def test_finite_difference(self, rng):
        params = {"a": rng.standard_normal((4, 5)), "b": rng.standard_normal((4, 5))}
        assert fd_check(lambda t: obj.contrastive_loss(t["a"], t["b"], 0.7), params) < 1e-4

    def test_needs_two_subjects(self):
        with pytest.raises(ValidationError):
            obj.contrastive_loss(np.ones((1, 3)), np.ones((1, 3)), 1.0)

    def test_zero_embedding(self):
        with pytest.raises(DegenerateInputError):
            obj.contrastive_loss(np.array([[1.0, 0], [0, 0]]), np.ones((2, 2)), 1.0)

    def test_large_inverse_temperature_is_stable(self, rng):
        v1, v2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        assert np.isfinite(obj.contrastive_loss(v1, v2, 1e-4).item())


class TestCrossEntropy:
    def test_perfect(self):
        assert obj.cross_entropy(1.0, 1) == pytest.approx(0.0, abs=1e-11)

    @pytest.mark.parametrize("y", [0, 1])
    def test_half(self, y):
        assert obj.cross_entropy(0.5, y) == pytest.approx(math.log(2), abs=1e-15)

    def test_confident_wrong(self):
        assert obj.cross_entropy(0.9, 0) == pytest.approx(-math.log(0.1), abs=1e-12)
        assert obj.cross_entropy(0.9, 0) == pytest.approx(2.3026, abs=1e-4)

    def test_clamped(self):
        assert np.isfinite(obj.cross_entropy(0.0, 1))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-20, 20), st.floats(-20, 20), st.integers(0, 1))
    def test_convex_in_logit(self, a, b, y):
        ce = lambda z: obj.bce_with_logits(np.array([z]), np.array([y])).item()
        assert ce((a + b) / 2) <= (ce(a) + ce(b)) / 2 + 1e-12

    def test_logit_form_matches_probability_form(self, rng):
        z = rng.standard_normal(6)
        y = rng.integers(0, 2, 6)
        expected = np.mean([obj.cross_entropy(1 / (1 + np.exp(-zi)), yi) for zi, yi in zip(z, y)])
        assert abs(obj.bce_with_logits(z, y).item() - expected) < 1e-12

    def test_bce_finite_difference(self, rng):
        y = np.array([0, 1, 1])
        assert fd_check(lambda t: obj.bce_with_logits(t["z"], y), {"z": rng.standard_normal(3)}) < 1e-4


class TestMetaLoss:
    def test_arithmetic(self):
        assert obj.meta_loss(1.0, 0.5, 2.0) == 2.0

    def test_lambda_zero(self):
        assert obj.meta_loss(1.25, 7.0, 0.0) == 1.25
