import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doebe.kernels import (
    KernelSpec,
    exact_gp_predict,
    gram,
    kernel_eval,
    sample_spectral_frequencies,
    spectral_density_1d,
)

from oracles import fourier_density, matern32_kernel, se_kernel

coords = st.floats(-5, 5, allow_nan=False)
scales = st.floats(0.1, 5.0)


def test_se_self_covariance_is_one():
    spec = KernelSpec("se", [1.0])
    for x in (-3.0, 0.0, 7.5):
        assert kernel_eval(spec, [x], [x]) == 1.0


def test_se_ard_value():
    spec = KernelSpec("se", [1.0, 2.0], process_scale=2.0)
    assert kernel_eval(spec, [0, 0], [1, 2]) == pytest.approx(4 * math.exp(-1), rel=1e-14)


def test_matern_decays_monotonically():
    spec = KernelSpec("matern32", [1.0])
    r = np.linspace(0, 40, 400)
    vals = [kernel_eval(spec, [0.0], [ri]) for ri in r]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-15


def test_matches_reference_formulas():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, xp, ell = rng.normal(size=3), rng.normal(size=3), rng.uniform(0.3, 3, 3)
        sf = rng.uniform(0.5, 2)
        assert kernel_eval(KernelSpec("se", ell, sf), x, xp) == pytest.approx(se_kernel(x, xp, ell, sf), rel=1e-12)
        assert kernel_eval(KernelSpec("matern32", ell, sf), x, xp) == pytest.approx(matern32_kernel(x, xp, ell, sf), rel=1e-12)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec("se", [1.0, 1.0]), [0.0], [0.0, 1.0])


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        KernelSpec("se", [1.0, -1.0])
    with pytest.raises(ValueError):
        KernelSpec("se", [1.0], process_scale=0.0)
    with pytest.raises(ValueError):
        KernelSpec("periodic", [1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2), st.lists(coords, min_size=2, max_size=2),
       st.lists(scales, min_size=2, max_size=2), st.sampled_from(["se", "matern32"]))
def test_symmetric(x, xp, ell, family):
    spec = KernelSpec(family, ell)
    assert kernel_eval(spec, x, xp) == kernel_eval(spec, xp, x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 50), st.sampled_from(["se", "matern32"]))
def test_gram_psd_after_jitter(seed, n, family):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(family, rng.uniform(0.2, 3, 2), rng.uniform(0.5, 2))
    K = gram(spec, rng.normal(size=(n, 2)))
    K = K + 1e-10 * spec.process_scale**2 * np.eye(n)
    np.testing.assert_array_equal(K, K.T)
    np.linalg.cholesky(K)


def test_se_density_at_zero():
    spec = KernelSpec("se", [1.0])
    assert spectral_density_1d(spec, 0, 0.0) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-14)
    assert fourier_density(lambda t: np.exp(-0.5 * t**2), 0.0) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-10)


@pytest.mark.parametrize("family", ["se", "matern32"])
def test_density_integrates_to_variance(family):
    spec = KernelSpec(family, [1.0])
    w = np.linspace(-2000, 2000, 2_000_001)
    total = np.trapezoid(spectral_density_1d(spec, 0, w), w) / (2 * np.pi) if hasattr(np, "trapezoid") \
        else np.trapz(spectral_density_1d(spec, 0, w), w) / (2 * np.pi)
    assert total == pytest.approx(1.0, rel=1e-4 if family == "se" else 2e-4)


@pytest.mark.parametrize("family,ell,sf", [("se", 1.0, 1.0), ("se", 0.4, 1.5), ("matern32", 1.0, 1.0), ("matern32", 2.5, 0.7)])
def test_density_matches_numerical_fourier(family, ell, sf):
    spec = KernelSpec(family, [ell], sf)
    if family == "se":
        def k1(t):
            return sf**2 * np.exp(-0.5 * (t / ell) ** 2)
        tmax = 40 * ell
    else:
        def k1(t):
            r = np.sqrt(3.0) * np.abs(t) / ell
            return sf**2 * (1 + r) * np.exp(-r)
        tmax = 200 * ell
    # spot-check the vectorized lag profile against the scalar reference
    ref = se_kernel if family == "se" else matern32_kernel
    assert k1(np.array([0.7]))[0] == pytest.approx(ref(0.7, 0.0, ell, sf), rel=1e-14)
    for w in np.linspace(0, 10 / ell, 11):
        num = fourier_density(k1, w, tmax=tmax, n=400001)
        assert spectral_density_1d(spec, 0, w) == pytest.approx(num, rel=1e-4)


def test_matern_frequency_draws_reproduce_kernel():
    # Monte Carlo: E[cos(w . tau)] over draws equals k(tau)
    rng = np.random.default_rng(0)
    n = 400_000
    w = sample_spectral_frequencies("matern32", n, 2, rng)
    for tau in ([0.3, 0.0], [0.5, -0.7], [1.5, 1.0]):
        c = np.cos(w @ np.asarray(tau))
        est, se = c.mean(), c.std() / math.sqrt(n)
        assert abs(est - matern32_kernel(tau, [0, 0], [1, 1])) < 4 * se


def test_gp_single_point():
    spec = KernelSpec("se", [1.0])
    mean, cov = exact_gp_predict(spec, [[0.0]], [1.0], [[0.0]], 1.0)
    assert mean[0] == pytest.approx(0.5, abs=1e-9)
    assert cov[0, 0] == pytest.approx(0.5, abs=1e-9)


def test_gp_large_noise_reverts_to_prior():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 1))
    mean, _ = exact_gp_predict(KernelSpec("se", [1.0]), X, rng.normal(size=10), X, 1e12)
    assert np.max(np.abs(mean)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gp_variances_bounded(seed):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(rng.choice(["se", "matern32"]), rng.uniform(0.2, 2, 2), rng.uniform(0.5, 2))
    X = rng.normal(size=(15, 2))
    Xs = rng.normal(size=(8, 2))
    _, cov = exact_gp_predict(spec, X, rng.normal(size=15), Xs, rng.uniform(1e-4, 1))
    d = np.diag(cov)
    assert np.all(d >= 0)
    assert np.all(d <= spec.process_scale**2 + 1e-12)
