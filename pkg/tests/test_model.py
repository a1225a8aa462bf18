import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drflm.errors import InvalidInputError
from drflm.model import (GlmModel, Link, ThresholdClassifier, batch_glm_losses, batch_gradient,
                         glm_gradient, glm_loss, mixup_sample, nll_loss, to_01, to_pm1, zero_one_loss)

LINKS = [Link.SQUARED, Link.LOGISTIC]
small = st.floats(-3, 3, allow_nan=False)


def fd_gradient(model, x, y, h=1e-5):
    g = np.zeros_like(model.w)
    for i in range(model.w.size):
        e = np.zeros_like(model.w)
        e[i] = h
        g[i] = (glm_loss(GlmModel(model.w + e, model.link), x, y)
                - glm_loss(GlmModel(model.w - e, model.link), x, y)) / (2 * h)
    return g


class TestLinks:
    def test_squared_values(self):
        assert Link.SQUARED.mu(2.0) == 2.0
        assert Link.SQUARED.dmu(-1.5) == -1.5
        assert Link.SQUARED.K == 1.0

    def test_logistic_stable(self):
        assert math.isfinite(float(Link.LOGISTIC.mu(1000.0)))
        assert abs(float(Link.LOGISTIC.mu(1000.0)) - 1000.0) < 1e-9
        assert float(Link.LOGISTIC.mu(-1000.0)) >= 0
        assert float(Link.LOGISTIC.dmu(0.0)) == 0.5

    def test_logistic_K(self):
        s = 1 / (1 + math.exp(-1))
        assert abs(Link.LOGISTIC.K - 1 / (s * (1 - s))) < 1e-12

    def test_curvature_bounds(self):
        z = np.random.default_rng(0).uniform(-1, 1, 1000)
        np.testing.assert_array_equal(Link.SQUARED.d2mu(z), 1.0)
        c = Link.LOGISTIC.d2mu(z)
        lo = float(Link.LOGISTIC.d2mu(1.0))
        assert np.all(c >= lo - 1e-15) and np.all(c <= 0.25)
        assert np.all(1 / Link.LOGISTIC.K <= c + 1e-15) and np.all(c <= Link.LOGISTIC.K)

    @pytest.mark.parametrize("link", LINKS)
    def test_dmu_matches_fd(self, link):
        z = np.linspace(-5, 5, 41)
        h = 1e-6
        np.testing.assert_allclose(link.dmu(z), (link.mu(z + h) - link.mu(z - h)) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(link.d2mu(z), (link.dmu(z + h) - link.dmu(z - h)) / (2 * h), atol=1e-7)


class TestGlmLoss:
    def test_squared_example(self):
        assert glm_loss(GlmModel([1.0, 0.0]), [2.0, 1.0], 1.0) == 0.0

    def test_logistic_zero_weights(self):
        m = GlmModel([0.0, 0.0, 0.0], Link.LOGISTIC)
        assert abs(glm_loss(m, [3.0, -1.0, 2.0], 0.0) - math.log(2)) < 1e-15

    @given(arrays(float, 3, elements=small), arrays(float, 3, elements=small), small)
    def test_squared_identity(self, w, x, y):
        # mu(z) - y z == (z - y)^2 / 2 - y^2 / 2
        z = float(w @ x)
        expected = 0.5 * (z - y) ** 2 - 0.5 * y ** 2
        assert abs(glm_loss(GlmModel(w), x, y) - expected) <= 1e-9 * max(1.0, abs(expected))

    def test_nll_is_squared_error(self):
        m = GlmModel([0.5, -0.2])
        x, y = np.array([1.0, 2.0]), 3.0
        assert abs(nll_loss(m, x, y) - 0.5 * (m.w @ x - y) ** 2) < 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            glm_loss(GlmModel([1.0, 0.0]), [1.0], 0.0)
        with pytest.raises(InvalidInputError):
            glm_gradient(GlmModel([1.0, 0.0]), [1.0, 2.0, 3.0], 0.0)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(2)
        X, y, w = rng.normal(size=(7, 3)), rng.normal(size=7), rng.normal(size=3)
        for link in LINKS:
            single = [glm_loss(GlmModel(w, link), x, t) for x, t in zip(X, y)]
            np.testing.assert_allclose(batch_glm_losses(w, X, y, link), single, atol=1e-12)
            grads = np.mean([glm_gradient(GlmModel(w, link), x, t) for x, t in zip(X, y)], axis=0)
            np.testing.assert_allclose(batch_gradient(w, X, y, link), grads, atol=1e-12)

    @pytest.mark.parametrize("link", LINKS)
    def test_midpoint_convexity(self, link):
        rng = np.random.default_rng(8)
        for _ in range(200):
            x, y = rng.normal(size=4), rng.normal()
            a, b = rng.normal(size=4), rng.normal(size=4)
            fa = glm_loss(GlmModel(a, link), x, y)
            fb = glm_loss(GlmModel(b, link), x, y)
            fm = glm_loss(GlmModel((a + b) / 2, link), x, y)
            assert fm <= (fa + fb) / 2 + 1e-12


class TestGradient:
    def test_squared_zero(self):
        np.testing.assert_array_equal(glm_gradient(GlmModel([0.0, 0.0]), [1.0, 1.0], 0.0), [0.0, 0.0])

    def test_logistic_zero(self):
        g = glm_gradient(GlmModel([0.0, 0.0], Link.LOGISTIC), [1.0, 0.0], 1.0)
        np.testing.assert_allclose(g, [-0.5, 0.0])

    @pytest.mark.parametrize("link", LINKS)
    def test_finite_differences(self, link):
        rng = np.random.default_rng(12 if link is Link.SQUARED else 13)
        for _ in range(200):
            d = int(rng.integers(1, 6))
            w, x = rng.normal(size=d), rng.normal(size=d)
            y = rng.normal() if link is Link.SQUARED else float(rng.integers(0, 2))
            m = GlmModel(w, link)
            g, fd = glm_gradient(m, x, y), fd_gradient(m, x, y)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


class TestThreshold:
    @pytest.mark.parametrize("x,y,loss", [([1.0, 5.0], 1, 0), ([-1.0, 5.0], 1, 1), ([-1.0, 0.0], -1, 0)])
    def test_examples(self, x, y, loss):
        assert zero_one_loss(ThresholdClassifier(0.0), x, y) == loss

    def test_tie_is_negative(self):
        assert ThresholdClassifier(0.5).predict([0.5]) == -1

    def test_bad_label(self):
        with pytest.raises(InvalidInputError):
            zero_one_loss(ThresholdClassifier(0.0), [1.0], 0)

    def test_nonfinite_boundary(self):
        with pytest.raises(InvalidInputError):
            ThresholdClassifier(float("inf"))


class TestMixup:
    z1 = (np.array([1.0, 0.0]), 1.0)
    z2 = (np.array([0.0, 1.0]), 0.0)

    def test_endpoints(self):
        m1 = mixup_sample(self.z1, self.z2, 1.0)
        np.testing.assert_array_equal(m1.x, self.z1[0])
        assert m1.y == 1.0
        m0 = mixup_sample(self.z1, self.z2, 0.0)
        np.testing.assert_array_equal(m0.x, self.z2[0])
        assert m0.y == 0.0

    def test_midpoint(self):
        m = mixup_sample(self.z1, self.z2, 0.5, (3, 4))
        np.testing.assert_array_equal(m.x, [0.5, 0.5])
        assert m.y == 0.5 and (m.j, m.k) == (3, 4)

    @pytest.mark.parametrize("g", [-0.1, 1.1])
    def test_bad_gamma(self, g):
        with pytest.raises(InvalidInputError):
            mixup_sample(self.z1, self.z2, g)

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            mixup_sample(self.z1, (np.zeros(3), 0.0), 0.5)

    @given(arrays(float, 3, elements=small), arrays(float, 3, elements=small), small, st.floats(0, 1))
    def test_self_mix_keeps_loss(self, w, x, y, g):
        m = mixup_sample((x, y), (x, y), g)
        for link in LINKS:
            a = glm_loss(GlmModel(w, link), m.x, m.y)
            b = glm_loss(GlmModel(w, link), x, y)
            assert abs(a - b) <= 1e-9 * max(1.0, abs(b))


def test_label_codes_round_trip():
    y = np.array([0.0, 1.0, 1.0])
    np.testing.assert_array_equal(to_pm1(y), [-1, 1, 1])
    np.testing.assert_array_equal(to_01(to_pm1(y)), y)
    with pytest.raises(InvalidInputError):
        to_pm1([0.5])
    with pytest.raises(InvalidInputError):
        to_01([0.0])
