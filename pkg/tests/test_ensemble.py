import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doebe.basis import RFFBasis, build_linear, build_rff
from doebe.bayes_linear import LOGISTIC, ExpertModel, GaussianPosterior
from doebe.data import compute_regret_bound
from doebe.ensemble import (
    EnsembleState,
    WeightUnderflowError,
    block_switching_matrix,
    build_edoebe,
    ensemble_predict,
    load_checkpoint,
    revive_check,
    save_checkpoint,
    step,
    uniform_switching_matrix,
    update_weights,
)
from doebe.kernels import KernelSpec

import oracles


def fixed_expert(mean, var, noise=1e-12):
    """1-D linear expert whose predictive at x=1 is N(mean, var)."""
    b = build_linear(1, intercept=False)
    return ExpertModel(b, GaussianPosterior(np.array([mean]), np.array([[var - noise]])), noise)


def rff_experts(lengthscales, F=20, seed=0, noise=0.25, drift=0.0):
    rng = np.random.default_rng(seed)
    draws = build_rff(KernelSpec("se", [1.0, 1.0]), F, rng).unit_draws
    return [ExpertModel.from_prior(RFFBasis(KernelSpec("se", [l, l]), draws), 1.0, noise, drift, label=f"l={l}")
            for l in lengthscales]


def test_two_expert_mixture_example():
    state = EnsembleState([fixed_expert(1.0, 1.0), fixed_expert(-1.0, 1.0)])
    pred = ensemble_predict(state, [1.0])
    assert pred.mean == pytest.approx(0.0, abs=1e-15)
    assert pred.var == pytest.approx(2.0, rel=1e-12)


def test_single_expert_mixture_is_expert():
    e = fixed_expert(0.3, 0.7)
    pred = ensemble_predict(EnsembleState([e]), [1.0])
    ref = e.predict(np.array([1.0]))
    assert (pred.mean, pred.var) == (ref.mean, ref.var)


def test_equal_means_variance_floor():
    state = EnsembleState([fixed_expert(2.0, v) for v in (0.5, 1.0, 3.0)])
    assert ensemble_predict(state, [1.0]).var >= 0.5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_mixture_moments_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=5) * 3
    variances = rng.uniform(0.01, 4, 5)
    w = rng.dirichlet(np.ones(5))
    state = EnsembleState([fixed_expert(m, v) for m, v in zip(means, variances)], w)
    pred = ensemble_predict(state, [1.0])
    mu, var = oracles.mixture_moments(w, means, variances)
    assert abs(pred.mean - mu) < 1e-10
    assert abs(pred.var - var) < 1e-10


def test_mixture_moments_numeric_integration():
    w, means, variances = [0.2, 0.5, 0.3], [-1.0, 0.5, 2.0], [0.3, 1.0, 0.6]
    state = EnsembleState([fixed_expert(m, v) for m, v in zip(means, variances)], w)
    pred = ensemble_predict(state, [1.0])
    m1, m2 = oracles.mixture_moments_numeric(w, means, variances)
    assert pred.mean == pytest.approx(m1, abs=1e-8)
    assert pred.var == pytest.approx(m2, abs=1e-8)


def test_weight_update_example():
    w, total = update_weights(np.array([0.5, 0.5]), np.log([0.2, 0.1]))
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], rtol=1e-15)
    assert total == pytest.approx(math.log(0.15), rel=1e-14)


def test_equal_likelihoods_leave_weights():
    w0 = np.array([0.1, 0.6, 0.3])
    w, _ = update_weights(w0, np.full(3, -3.7))
    np.testing.assert_allclose(w, w0, rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.floats(-700, 700))
def test_weight_update_scale_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    w0 = rng.dirichlet(np.ones(4))
    ll = rng.normal(size=4) * 5
    a, ta = update_weights(w0, ll)
    b, tb = update_weights(w0, ll + shift)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)
    assert tb - ta == pytest.approx(shift, abs=1e-9 * max(1, abs(shift)))


def test_floor_zeroes_tiny_weights():
    w, _ = update_weights(np.array([0.5, 0.5]), np.array([0.0, -50.0]))
    assert w[1] == 0.0 and w[0] == 1.0


def test_total_underflow_raises():
    with pytest.raises(WeightUnderflowError):
        update_weights(np.array([0.5, 0.5]), np.array([-np.inf, -np.inf]))


def test_state_validation():
    e = fixed_expert(0, 1)
    with pytest.raises(ValueError):
        EnsembleState([e, e], [0.7, 0.7])
    with pytest.raises(ValueError):
        EnsembleState([e, e], switching=np.array([[0.9, 0.2], [0.2, 0.8]]))
    with pytest.raises(ValueError):
        EnsembleState([])


def test_block_matrix_examples():
    np.testing.assert_array_equal(block_switching_matrix(1, 2, 0.01), [[0.99, 0.01], [0.01, 0.99]])
    np.testing.assert_array_equal(block_switching_matrix(3, 2, 0.0), np.eye(6))
    Q = block_switching_matrix(4, 3, 0.05)
    np.testing.assert_allclose(Q.sum(axis=0), 1.0, atol=1e-12)
    assert Q[0, 0] == pytest.approx(0.9) and Q[4, 0] == 0.05 and Q[1, 0] == 0.0
    with pytest.raises(ValueError):
        block_switching_matrix(2, 3, 0.5)


def test_uniform_switching_columns():
    Q = uniform_switching_matrix(5, 0.05)
    np.testing.assert_allclose(Q.sum(axis=0), 1.0, atol=1e-15)


def test_build_edoebe_layout():
    experts = rff_experts([0.5, 1.0, 2.0])
    state = build_edoebe(experts, [1e-3, 0.0], 0.05)
    assert state.size == 6
    assert [e.drift_var for e in state.experts] == [1e-3] * 3 + [0.0] * 3
    assert state.experts[4].label == "l=1.0|static"
    assert state.experts[0].posterior is not state.experts[3].posterior
    np.testing.assert_array_equal(state.switching, block_switching_matrix(3, 2, 0.05))


def test_revive_example():
    e = fixed_expert(0, 1)
    state = EnsembleState([e, e.copy()], [1.0, 0.0], switching=np.array([[0.95, 0.05], [0.05, 0.95]]))
    info = revive_check(state)
    np.testing.assert_allclose(info["post_switch"], [0.95, 0.05])
    assert info["revived"] == [1]
    state.switching = block_switching_matrix(1, 2, 0.0)
    assert revive_check(state)["revived"] == []


def test_revive_requires_switching():
    with pytest.raises(ValueError):
        revive_check(EnsembleState([fixed_expert(0, 1)]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 0.3))
def test_block_partner_revives_zero_weight(seed, delta):
    rng = np.random.default_rng(seed)
    M = 3
    w = rng.dirichlet(np.ones(2 * M))
    dead = rng.integers(M)
    w[dead] = 0.0
    w /= w.sum()
    base = [fixed_expert(0, 1) for _ in range(M)]
    state = build_edoebe(base, [1e-3, 0.0], delta)
    state.weights = w
    assert dead in revive_check(state)["revived"]


def stream(n, seed, F=20, noise=0.25, ell=1.0):
    rng = np.random.default_rng(seed)
    basis = build_rff(KernelSpec("se", [ell, ell]), F, rng)
    theta = rng.normal(size=F)
    X = rng.normal(size=(n, 2))
    return X, basis(X) @ theta + math.sqrt(noise) * rng.normal(size=n)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_weights_stay_on_simplex(seed):
    X, y = stream(150, seed)
    state = build_edoebe(rff_experts([0.3, 1.0, 3.0], seed=seed), [1e-3, 0.0], 0.05)
    for x, yt in zip(X, y):
        step(state, x, yt)
        assert abs(state.weights.sum() - 1.0) < 1e-12
        assert np.all(state.weights >= 0)
        for e in state.experts:
            assert np.max(np.abs(e.posterior.cov - e.posterior.cov.T)) < 1e-10


def test_identity_switching_static_is_plain_bma():
    # reference path: plain predict/correct per expert and explicit Bayes rule
    X, y = stream(200, 1)
    experts = rff_experts([0.5, 1.0, 2.0], seed=1)
    ref = [e.copy() for e in experts]
    state = EnsembleState(experts, switching=np.eye(3))
    w_ref = np.full(3, 1 / 3)
    for x, yt in zip(X, y):
        pred = step(state, x, yt)
        dens = []
        for e in ref:
            phi = e.basis(x)
            p = e.predict(phi)
            dens.append(math.exp(p.logpdf(yt)))
            e.correct(phi, yt, p)
        mix = float(np.dot(w_ref, dens))
        w_ref = w_ref * dens / mix
        w_ref[w_ref < 1e-16] = 0.0
        w_ref /= w_ref.sum()
        assert pred.log_density == pytest.approx(math.log(mix), rel=1e-12)
        np.testing.assert_allclose(state.weights, w_ref, rtol=1e-10, atol=1e-300)
    for a, b in zip(state.experts, ref):
        np.testing.assert_array_equal(a.posterior.mean, b.posterior.mean)
        np.testing.assert_array_equal(a.posterior.cov, b.posterior.cov)


def test_zero_weight_is_absorbing_without_switching():
    X, y = stream(300, 2, noise=0.01, ell=0.5)
    state = EnsembleState(rff_experts([0.5, 50.0], seed=2, noise=0.01))
    dead_at = None
    for t, (x, yt) in enumerate(zip(X, y)):
        step(state, x, yt)
        if dead_at is None and state.weights[1] == 0.0:
            dead_at = t
        if dead_at is not None:
            assert state.weights[1] == 0.0
    assert dead_at is not None


def test_zero_weight_experts_still_learn():
    X, y = stream(50, 3)
    experts = rff_experts([1.0, 2.0], seed=3)
    state = EnsembleState(experts, [1.0, 0.0])
    before = experts[1].posterior.cov.copy()
    for x, yt in zip(X, y):
        step(state, x, yt)
    assert state.weights[1] == 0.0
    assert np.trace(experts[1].posterior.cov) < np.trace(before)


def test_bma_concentrates_on_true_model():
    rng = np.random.default_rng(5)
    draws = build_rff(KernelSpec("se", [1.0, 1.0]), 20, rng).unit_draws
    bases = [RFFBasis(KernelSpec("se", [l, l]), draws) for l in (0.3, 1.0, 3.0)]
    theta = rng.normal(size=20)
    X = rng.normal(size=(2000, 2))
    y = bases[0](X) @ theta + 0.5 * rng.normal(size=2000)
    state = EnsembleState([ExpertModel.from_prior(b, 1.0, 0.25) for b in bases])
    for x, yt in zip(X, y):
        step(state, x, yt)
    assert state.weights[0] > 0.99


def test_failed_expert_loses_weight():
    X, y = stream(5, 4)
    state = EnsembleState(rff_experts([1.0, 2.0], seed=4))
    bad = state.experts[1]
    bad.noise_var = 1e-14
    bad.posterior.cov[:] = 0.0
    step(state, X[0], y[0])
    assert state.weights[1] == 0.0
    assert state.diagnostics and state.diagnostics[0][1] == 1


def test_mixture_prediction_uses_post_switch_weights():
    e1, e2 = fixed_expert(1.0, 1.0), fixed_expert(-1.0, 1.0)
    Q = np.array([[0.9, 0.1], [0.1, 0.9]])
    state = EnsembleState([e1, e2], [1.0, 0.0], switching=Q)
    pred = step(state, [1.0], 0.0)
    assert pred.mean == pytest.approx(0.9 * 1 + 0.1 * -1)


def test_logistic_ensemble_reports_probability():
    rng = np.random.default_rng(0)
    b = build_rff(KernelSpec("se", [1.0, 1.0]), 10, rng)
    state = EnsembleState([ExpertModel.from_prior(b, 1.0, 1.0, 0.0, LOGISTIC)])
    pred = step(state, [0.1, 0.2], 1.0)
    assert pred.prob == pytest.approx(0.5)
    assert pred.log_density == pytest.approx(math.log(0.5))


def test_checkpoint_round_trip(tmp_path):
    X, y = stream(40, 6)
    state = build_edoebe(rff_experts([0.5, 2.0], seed=6), [1e-3, 0.0], 0.05)
    for x, yt in zip(X[:20], y[:20]):
        step(state, x, yt)
    path = tmp_path / "state.npz"
    save_checkpoint(path, state, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"} and loaded.t == 20
    assert loaded.experts[0].basis is loaded.experts[2].basis
    for x, yt in zip(X[20:], y[20:]):
        a, b = step(state, x, yt), step(loaded, x, yt)
        assert a.log_density == b.log_density
    np.testing.assert_array_equal(state.weights, loaded.weights)


def test_regret_within_bound_small():
    T, M, F, noise, prior = 500, 3, 10, 0.25, 1.0
    rng = np.random.default_rng(12)

    draws = build_rff(KernelSpec("se", [1.0]), F, rng).unit_draws
    bases = [RFFBasis(KernelSpec("se", [l]), draws) for l in (0.3, 1.0, 3.0)]
    X = rng.uniform(-2, 2, size=(T, 1))
    y = np.sin(2 * X[:, 0]) + math.sqrt(noise) * rng.normal(size=T)
    state = EnsembleState([ExpertModel.from_prior(b, prior, noise) for b in bases])
    loss = -sum(step(state, x, yt).log_density for x, yt in zip(X, y))
    gaps = []
    for b in bases:
        Phi = b(X)
        theta = oracles.ridge_solution(Phi, y, prior, noise)
        best = oracles.gaussian_nll(y, Phi @ theta, noise).sum()
        gaps.append(loss - best - compute_regret_bound(F, prior, T, 1 / noise, M, theta))
    assert max(gaps) <= 0
