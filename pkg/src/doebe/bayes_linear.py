"""Conjugate Gaussian inference for a single basis-expansion expert.

The recursion per observation is predict -> correct, optionally preceded by a
random-walk drift of the weights (covariance inflation by ``drift_var * I``).
Logistic experts replace the conjugate correction by a one-step Laplace
update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisModel

GAUSSIAN = "gaussian"
LOGISTIC = "logistic"

MIN_PREDICTIVE_VAR = 1e-12
NEWTON_ITERS = 20
NEWTON_TOL = 1e-9
EVIDENCE_JITTER = 1e-8


class NumericalError(ArithmeticError):
    """A recursive update hit a degenerate quantity."""


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size

    def copy(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: float
    var: float

    def logpdf(self, y: float) -> float:
        return -0.5 * (math.log(2.0 * math.pi * self.var) + (y - self.mean) ** 2 / self.var)


@dataclass(frozen=True)
class PredictiveBernoulli:
    """Approximate predictive for labels in {-1, +1}; ``prob`` is P(y = +1)."""

    prob: float
    latent_mean: float
    latent_var: float
    log_prob_pos: float
    log_prob_neg: float

    @property
    def mean(self) -> float:
        return 2.0 * self.prob - 1.0

    @property
    def var(self) -> float:
        return 4.0 * self.prob * (1.0 - self.prob)

    def logpdf(self, y: float) -> float:
        return self.log_prob_pos if y > 0 else self.log_prob_neg


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def init_posterior(n_features: int, prior_var: float) -> GaussianPosterior:
    if not prior_var > 0:
        raise ValueError("prior variance must be positive")
    return GaussianPosterior(np.zeros(n_features), prior_var * np.eye(n_features))


def predict(posterior: GaussianPosterior, phi, noise_var: float) -> PredictiveGaussian:
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise NumericalError("non-finite features")
    Sphi = posterior.cov @ phi
    return PredictiveGaussian(float(phi @ posterior.mean), float(phi @ Sphi) + noise_var)


def correct(posterior: GaussianPosterior, phi, y: float, pred: PredictiveGaussian) -> GaussianPosterior:
    if pred.var < MIN_PREDICTIVE_VAR:
        raise NumericalError(f"predictive variance {pred.var:.3g} is degenerate")
    phi = np.asarray(phi, dtype=float)
    k = posterior.cov @ phi
    mean = posterior.mean + k * ((y - pred.mean) / pred.var)
    # outer(k, k) is exactly symmetric, so a symmetric cov stays symmetric
    # bit for bit; no averaging pass is needed
    cov = posterior.cov - np.outer(k, k) * (1.0 / pred.var)
    return GaussianPosterior(mean, cov)


def drift(posterior: GaussianPosterior, drift_var: float) -> GaussianPosterior:
    if drift_var == 0:
        return posterior
    cov = posterior.cov.copy()
    cov.flat[:: cov.shape[0] + 1] += drift_var
    return GaussianPosterior(posterior.mean, cov)


def _sigmoid(a: float) -> float:
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def _log_sigmoid(a: float) -> float:
    return -math.log1p(math.exp(-a)) if a >= 0 else a - math.log1p(math.exp(a))


def _probit_logistic(mu: float, var: float) -> float:
    """Scaled latent mean for the moment approximation of the logistic integral."""
    return mu / math.sqrt(1.0 + math.pi * var / 8.0)


def predict_logistic(posterior: GaussianPosterior, phi) -> PredictiveBernoulli:
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise NumericalError("non-finite features")
    mu = float(phi @ posterior.mean)
    var = float(phi @ (posterior.cov @ phi))
    a = _probit_logistic(mu, var)
    return PredictiveBernoulli(_sigmoid(a), mu, var, _log_sigmoid(a), _log_sigmoid(-a))


def laplace_step(posterior: GaussianPosterior, phi, y: float, pred: PredictiveBernoulli | None = None):
    """One recursive Laplace update for a logistic likelihood, y in {-1, +1}.

    The MAP of N(theta; m, S) * sigmoid(y phi.theta) lies on m + S phi * alpha,
    so Newton runs on the scalar latent z = phi.theta.  Returns the updated
    posterior, the approximate log predictive probability of ``y`` and a
    flag that is True when Newton did not converge.
    """
    if y not in (-1, 1, -1.0, 1.0):
        raise ValueError(f"labels must be -1 or +1, got {y}")
    phi = np.asarray(phi, dtype=float)
    if pred is None:
        pred = predict_logistic(posterior, phi)
    log_pred = pred.logpdf(y)
    m, s2 = pred.latent_mean, pred.latent_var
    if s2 <= 0.0:
        return posterior, log_pred, False

    # g(z) = z - m - s2 * y * sigmoid(-y z) is strictly increasing and its root
    # lies between m and m + s2 * y; Newton steps leaving that bracket bisect
    lo, hi = (m, m + s2 * y) if y > 0 else (m + s2 * y, m)
    # (or fail to halve |g|, which catches Newton 2-cycles on flat sigmoid tails)
    z = m
    g_prev = math.inf
    converged = False
    for _ in range(NEWTON_ITERS):
        p = _sigmoid(-y * z)
        g = z - m - s2 * y * p
        if g > 0:
            hi = z
        else:
            lo = z
        z_new = z - g / (1.0 + s2 * p * (1.0 - p))
        if not lo <= z_new <= hi or abs(g) > 0.5 * g_prev:
            z_new = 0.5 * (lo + hi)
        g_prev = abs(g)
        step, z = z_new - z, z_new
        if abs(step) < NEWTON_TOL * (1.0 + abs(z)):
            converged = True
            break
    if not converged:
        # fall back to a damped gradient step from the prior mean
        z = m + s2 * y * _sigmoid(-y * m) / (1.0 + s2 * 0.25)

    Sphi = posterior.cov @ phi
    alpha = y * _sigmoid(-y * z)
    mean = posterior.mean + Sphi * alpha
    h = _sigmoid(z) * _sigmoid(-z)  # curvature of the negative log likelihood at the MAP
    cov = posterior.cov - np.outer(Sphi, Sphi) * (h / (1.0 + h * s2))
    return GaussianPosterior(mean, cov), log_pred, not converged


@dataclass
class ExpertModel:
    basis: BasisModel
    posterior: GaussianPosterior
    noise_var: float = 0.25
    drift_var: float = 0.0
    likelihood: str = GAUSSIAN
    prior_var: float = 1.0
    label: str = ""
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if self.posterior.dim != self.basis.n_features:
            raise ValueError("posterior dimension does not match basis")
        if self.likelihood not in (GAUSSIAN, LOGISTIC):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.likelihood == GAUSSIAN and not self.noise_var > 0:
            raise ValueError("noise variance must be positive")
        if self.drift_var < 0:
            raise ValueError("drift variance must be non-negative")

    @classmethod
    def from_prior(cls, basis, prior_var=1.0, noise_var=0.25, drift_var=0.0, likelihood=GAUSSIAN, label=""):
        return cls(basis, init_posterior(basis.n_features, prior_var), noise_var, drift_var, likelihood, prior_var, label)

    @property
    def is_static(self) -> bool:
        return self.drift_var == 0.0

    def drift(self):
        self.posterior = drift(self.posterior, self.drift_var)

    def predict(self, phi):
        if self.likelihood == LOGISTIC:
            return predict_logistic(self.posterior, phi)
        return predict(self.posterior, phi, self.noise_var)

    def correct(self, phi, y, pred=None):
        if self.likelihood == LOGISTIC:
            self.posterior, _, failed = laplace_step(self.posterior, phi, y, pred)
            if failed:
                self.diagnostics.append("newton did not converge")
            return self.posterior
        if pred is None:
            pred = self.predict(phi)
        self.posterior = correct(self.posterior, phi, y, pred)
        return self.posterior

    def copy(self, drift_var=None, label=None) -> "ExpertModel":
        return ExpertModel(
            self.basis,
            self.posterior.copy(),
            self.noise_var,
            self.drift_var if drift_var is None else drift_var,
            self.likelihood,
            self.prior_var,
            self.label if label is None else label,
        )


def batch_posterior(Phi, y, prior_var: float, noise_var: float) -> GaussianPosterior:
    """Posterior given all observations at once (no drift)."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float)
    prec = Phi.T @ Phi / noise_var + np.eye(Phi.shape[1]) / prior_var
    cf = cho_factor(prec, lower=True)
    cov = cho_solve(cf, np.eye(Phi.shape[1]))
    mean = cho_solve(cf, Phi.T @ y / noise_var)
    return GaussianPosterior(mean, _symmetrize(cov))


def _chol_with_retry(A: np.ndarray, scale: float):
    try:
        return cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        A = A + EVIDENCE_JITTER * max(scale, 1.0) * np.eye(A.shape[0])
        return cho_factor(A, lower=True)


def _logdet(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def log_evidence_from_design(Phi, y, prior_var: float, noise_var: float, form: str = "auto") -> float:
    """log N(y | 0, prior_var Phi Phi^T + noise_var I) for an (N, F) design."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    N, F = Phi.shape
    if N < 1:
        raise ValueError("need at least one observation")
    if form == "auto":
        form = "dual" if F < N else "primal"
    if form == "primal":
        C = prior_var * Phi @ Phi.T
        C[np.diag_indices_from(C)] += noise_var
        cf = _chol_with_retry(C, noise_var)
        quad = y @ cho_solve(cf, y)
        logdet = _logdet(cf)
    elif form == "dual":
        ratio = noise_var / prior_var
        B = Phi.T @ Phi
        B[np.diag_indices_from(B)] += ratio
        cf = _chol_with_retry(B, ratio)
        b = Phi.T @ y
        quad = (y @ y - b @ cho_solve(cf, b)) / noise_var
        logdet = (N - F) * math.log(noise_var) + F * math.log(prior_var) + _logdet(cf)
    else:
        raise ValueError(f"unknown form {form!r}")
    return -0.5 * (N * math.log(2.0 * math.pi) + logdet + quad)


def log_evidence(basis: BasisModel, X, y, prior_var: float, noise_var: float, form: str = "auto") -> float:
    return log_evidence_from_design(basis.featurize(np.asarray(X, dtype=float)), y, prior_var, noise_var, form)


def log_evidence_and_grads(Phi, y, prior_var: float, noise_var: float):
    """Log evidence plus its gradients w.r.t. the design matrix and log variances.

    Returns ``(value, dL/dPhi, dL/dlog prior_var, dL/dlog noise_var)``.
    Uses the F x F system B = Phi^T Phi + (noise/prior) I:
    dL/dPhi = r m^T / noise - Phi B^-1, with m = B^-1 Phi^T y and r = y - Phi m.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    N, F = Phi.shape
    ratio = noise_var / prior_var
    B = Phi.T @ Phi
    B[np.diag_indices_from(B)] += ratio
    cf = _chol_with_retry(B, ratio)
    b = Phi.T @ y
    m = cho_solve(cf, b)
    r = y - Phi @ m
    Binv = cho_solve(cf, np.eye(F))
    quad = (y @ y - b @ m) / noise_var
    logdet = (N - F) * math.log(noise_var) + F * math.log(prior_var) + _logdet(cf)
    value = -0.5 * (N * math.log(2.0 * math.pi) + logdet + quad)

    dPhi = np.outer(r, m) / noise_var - Phi @ Binv
    tr = ratio * np.trace(Binv)
    d_log_prior = 0.5 * (m @ m / prior_var - F + tr)
    d_log_noise = 0.5 * (r @ r / noise_var - N + F - tr)
    return value, dPhi, d_log_prior, d_log_noise
