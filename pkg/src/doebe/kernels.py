"""Stationary ARD kernels, their 1-D spectral densities, and an exact GP oracle.

Frequencies are angular throughout: ``k(tau) = int S(w) exp(i w tau) dw / (2 pi)``.
The exact GP predictive is only used to validate the basis approximations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

SE = "se"
MATERN32 = "matern32"
FAMILIES = (SE, MATERN32)

_ALIASES = {
    "se": SE,
    "se-ard": SE,
    "rbf": SE,
    "matern32": MATERN32,
    "matern32-ard": MATERN32,
    "matern-3/2": MATERN32,
}

JITTER = 1e-10


def canonical_family(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown kernel family {name!r}") from None


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel family with per-dimension length scales."""

    family: str
    lengthscales: np.ndarray = field(repr=False)
    process_scale: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.ndim != 1 or ls.size < 1:
            raise ValueError("lengthscales must be a non-empty vector")
        if not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if not self.process_scale > 0:
            raise ValueError("process_scale must be positive")
        ls.setflags(write=False)
        object.__setattr__(self, "family", canonical_family(self.family))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "process_scale", float(self.process_scale))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def marginal(self, d: int) -> "KernelSpec":
        """1-D kernel acting on input dimension ``d`` only."""
        return KernelSpec(self.family, self.lengthscales[d : d + 1], self.process_scale)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lengthscales": self.lengthscales.tolist(),
            "process_scale": self.process_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], np.asarray(d["lengthscales"]), d["process_scale"])


def _profile(family: str, r: np.ndarray) -> np.ndarray:
    if family == SE:
        return np.exp(-0.5 * r**2)
    s3r = np.sqrt(3.0) * r
    return (1.0 + s3r) * np.exp(-s3r)


def _scaled_distance(spec: KernelSpec, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    A = X1 / spec.lengthscales
    B = X2 / spec.lengthscales
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != (spec.dim,) or x_prime.shape != (spec.dim,):
        raise ValueError(
            f"expected inputs of dimension {spec.dim}, got {x.shape} and {x_prime.shape}"
        )
    r = np.sqrt(np.sum(((x - x_prime) / spec.lengthscales) ** 2))
    return float(spec.process_scale**2 * _profile(spec.family, r))


def gram(spec: KernelSpec, X1, X2=None) -> np.ndarray:
    """Kernel matrix between the rows of ``X1`` (N1 x D) and ``X2`` (N2 x D)."""
    X1 = _as_rows(X1, spec.dim)
    X2 = X1 if X2 is None else _as_rows(X2, spec.dim)
    r = _scaled_distance(spec, X1, X2)
    return spec.process_scale**2 * _profile(spec.family, r)


def _as_rows(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected an (N, {dim}) input array, got shape {X.shape}")
    return X


def spectral_density_1d(spec: KernelSpec, d: int, omega) -> np.ndarray:
    """Spectral density of the 1-D marginal kernel along dimension ``d``.

    SE:        S(w) = sf^2 sqrt(2 pi) l exp(-w^2 l^2 / 2)
    Matern-3/2: S(w) = sf^2 4 lam^3 / (lam^2 + w^2)^2, lam = sqrt(3) / l
    """
    ell = spec.lengthscales[d]
    omega = np.asarray(omega, dtype=float)
    amp = spec.process_scale**2
    if spec.family == SE:
        return amp * np.sqrt(2.0 * np.pi) * ell * np.exp(-0.5 * (omega * ell) ** 2)
    lam = np.sqrt(3.0) / ell
    return amp * 4.0 * lam**3 / (lam**2 + omega**2) ** 2


def log_spectral_density_dlogell(family: str, ell, omega) -> np.ndarray:
    """d log S(w) / d log(l) for the 1-D density; used by hyperparameter gradients."""
    family = canonical_family(family)
    omega = np.asarray(omega, dtype=float)
    if family == SE:
        return 1.0 - (omega * ell) ** 2
    lam2 = 3.0 / ell**2
    return -3.0 + 4.0 * lam2 / (lam2 + omega**2)


def sample_spectral_frequencies(family: str, n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-length-scale draws from the normalized spectral density.

    Divide by the length scales to obtain frequencies for an ARD kernel. The
    Matern-3/2 density in ``dim`` dimensions is a multivariate Student-t with
    3 degrees of freedom (shared chi-square mixing across dimensions).
    """
    family = canonical_family(family)
    z = rng.standard_normal((n, dim))
    if family == SE:
        return z
    u = rng.chisquare(3.0, size=(n, 1))
    return z / np.sqrt(u / 3.0)


def exact_gp_predict(spec: KernelSpec, X, y, X_star, noise_var: float):
    """Zero-mean GP posterior over latent values at ``X_star``.

    Returns ``(mean, cov)``; add ``noise_var`` to the diagonal for noisy targets.
    """
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    X = _as_rows(X, spec.dim)
    X_star = _as_rows(X_star, spec.dim)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise ValueError("X and y have different lengths")
    K = gram(spec, X)
    K[np.diag_indices_from(K)] += noise_var + JITTER * spec.process_scale**2
    try:
        cf = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix is not positive definite") from exc
    Ks = gram(spec, X_star, X)
    mean = Ks @ cho_solve(cf, y)
    cov = gram(spec, X_star) - Ks @ cho_solve(cf, Ks.T)
    cov = 0.5 * (cov + cov.T)
    # roundoff can push tiny posterior variances below zero
    diag = np.diag_indices_from(cov)
    cov[diag] = np.maximum(cov[diag], 0.0)
    return mean, cov
