import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from doctor.perturb import (
    PERTURB_METHODS,
    PerturbSpec,
    at_switch,
    grad_analytic,
    grad_fd,
    objective,
    preprocess,
)
from doctor.scoring import mahalanobis_fit
from doctor.trainer import LogisticClassifier, posterior

SMOOTH = ("alpha", "beta", "odin")


def fitted_mahalanobis(clf, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, clf.weights.size))
    return mahalanobis_fit(posterior(clf, X), (X.sum(axis=1) > 0).astype(int), 2)


class TestSpec:
    @pytest.mark.parametrize("kwargs", [
        {"epsilon": -0.1},
        {"temperature": 0.0},
        {"method": "gradient"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PerturbSpec(**kwargs)


class TestPreprocess:
    @pytest.mark.parametrize("method", SMOOTH)
    def test_zero_epsilon_is_identity(self, method):
        clf = LogisticClassifier(np.array([0.4, -2.0]), 0.1)
        x = np.random.default_rng(0).normal(size=(30, 2))
        out = preprocess(x, PerturbSpec(0.0, method), clf)
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_one_dimensional_directions(self):
        clf = LogisticClassifier(np.array([1.0]), 0.0)
        x = np.array([0.3])
        eps = 0.05
        # DOCTOR steps raise the rejection statistic: towards the boundary
        for method in ("alpha", "beta"):
            out = preprocess(x, PerturbSpec(eps, method), clf)
            np.testing.assert_allclose(out, x - eps)
            assert objective(out, method, clf) > objective(x, method, clf)
        # ODIN raises the confidence: away from the boundary
        out = preprocess(x, PerturbSpec(eps, "odin"), clf)
        np.testing.assert_allclose(out, x + eps)

    def test_sign_matches_finite_differences(self):
        clf = LogisticClassifier(np.array([1.0]), 0.0)
        x = np.array([0.3])
        for method in SMOOTH:
            fd = grad_fd(x, lambda v: objective(v, method, clf))
            assert np.sign(fd[0]) == np.sign(grad_analytic(x, method, clf)[0])

    def test_alpha_beta_directions_agree(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            clf = LogisticClassifier(rng.normal(size=3), rng.normal())
            x = rng.normal(scale=2, size=3)
            if at_switch(x, clf, 1e-9):
                continue
            a = preprocess(x, PerturbSpec(0.1, "alpha"), clf)
            b = preprocess(x, PerturbSpec(0.1, "beta"), clf)
            o = preprocess(x, PerturbSpec(0.1, "odin"), clf)
            np.testing.assert_array_equal(a, b)
            np.testing.assert_allclose(o - x, -(a - x))

    @settings(max_examples=200)
    @given(
        arrays(np.float64, 3, elements=st.floats(-5, 5)),
        arrays(np.float64, 3, elements=st.floats(-5, 5)),
        st.floats(-3, 3),
        st.floats(0.0, 1.0),
        st.sampled_from(PERTURB_METHODS),
    )
    def test_linf_ball(self, w, x, b, eps, method):
        clf = LogisticClassifier(w, b)
        maha = fitted_mahalanobis(clf) if method == "mahalanobis" else None
        out = preprocess(x, PerturbSpec(eps, method), clf, maha)
        assert np.max(np.abs(out - x)) <= eps

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(2)
        clf = LogisticClassifier(rng.normal(size=2), 0.3)
        X = rng.normal(size=(20, 2))
        spec = PerturbSpec(0.2, "alpha", 1.5)
        rows = np.array([preprocess(x, spec, clf) for x in X])
        np.testing.assert_array_equal(preprocess(X, spec, clf), rows)


class TestGradients:
    @pytest.mark.parametrize("method", PERTURB_METHODS)
    def test_zero_weights(self, method):
        clf = LogisticClassifier(np.zeros(2), 0.5)
        maha = fitted_mahalanobis(LogisticClassifier(np.ones(2))) if method == "mahalanobis" else None
        np.testing.assert_array_equal(grad_analytic(np.ones(2), method, clf, 1.0, maha), 0.0)

    @pytest.mark.parametrize("method", SMOOTH)
    def test_parallel_to_weights(self, method):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = rng.normal(size=3)
            g = grad_analytic(rng.normal(size=3), method, LogisticClassifier(w, rng.normal()), 2.0)
            assert abs(abs(g @ w) - np.linalg.norm(g) * np.linalg.norm(w)) <= 1e-10 * max(np.linalg.norm(g), 1e-300)

    @pytest.mark.parametrize("method", PERTURB_METHODS)
    def test_matches_finite_differences(self, method):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 200:
            clf = LogisticClassifier(rng.normal(size=2), rng.normal())
            x = rng.normal(scale=2, size=2)
            T = 1.0 if method == "mahalanobis" else rng.uniform(0.5, 3.0)
            maha = fitted_mahalanobis(clf, checked) if method == "mahalanobis" else None
            if at_switch(x, clf, 1e-3):
                continue
            ga = grad_analytic(x, method, clf, T, maha)
            gf = grad_fd(x, lambda v: objective(v, method, clf, T, maha))
            assert np.linalg.norm(ga - gf) <= 1e-6 * np.linalg.norm(ga)
            checked += 1

    def test_batch_gradients(self):
        clf = LogisticClassifier(np.array([1.0, -1.0]), 0.0)
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        g = grad_analytic(X, "beta", clf)
        np.testing.assert_allclose(g, [[-1.0, 1.0], [1.0, -1.0]])

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            grad_analytic(np.ones(2), "entropy", LogisticClassifier(np.ones(2)))

    def test_mahalanobis_needs_model(self):
        with pytest.raises(ValueError):
            objective(np.ones(2), "mahalanobis", LogisticClassifier(np.ones(2)))


class TestFiniteDifferences:
    def test_quadratic(self):
        g = grad_fd(np.array([1.0, 2.0]), lambda v: float(v @ v), h=1e-5)
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)

    def test_linear_exact(self):
        a = np.array([0.5, -2.0, 3.0])
        g = grad_fd(np.array([0.1, 0.2, 0.3]), lambda v: float(a @ v))
        np.testing.assert_allclose(g, a, rtol=1e-9)

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            grad_fd(np.array([0.0]), lambda v: np.inf)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            grad_fd(np.array([0.0]), lambda v: 0.0, h=0.0)
