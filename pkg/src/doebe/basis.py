"""Feature maps x -> phi(x) used by the linear-Gaussian experts.

Every basis maps an ``(N, D)`` array to an ``(N, F)`` design matrix (a single
``(D,)`` point maps to an ``(F,)`` vector).  Bases that carry tunable
hyperparameters expose them as an unconstrained vector through
``get_params`` / ``with_params`` and can contract a gradient with respect to
the design matrix back onto those parameters (``param_grad``); the
hyperparameter fitter relies on that instead of numerical differentiation.
"""

from __future__ import annotations

import numpy as np

from .kernels import (
    KernelSpec,
    log_spectral_density_dlogell,
    sample_spectral_frequencies,
    spectral_density_1d,
)

LINEAR = "linear"
POLYNOMIAL = "polynomial"
RBF = "rbf"
RFF = "rff"
HSGP = "hsgp"

KMEANS_ITERS = 25
HSGP_SCALE = 1.5


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class BasisModel:
    """Base class; subclasses set ``kind``, ``dim`` and ``n_features``."""

    kind: str = ""
    intercept_included: bool = False
    dim: int
    n_features: int

    def _design(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def featurize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1 and (x.size == self.dim)
        X = x.reshape(1, -1) if single else x
        if X.ndim == 1 and self.dim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected inputs of dimension {self.dim}, got shape {x.shape}")
        Phi = self._design(X)
        return Phi[0] if single else Phi

    __call__ = featurize

    # hyperparameter plumbing; parameter-free bases keep the defaults
    def get_params(self) -> np.ndarray:
        return np.zeros(0)

    def with_params(self, eta) -> "BasisModel":
        if np.size(eta):
            raise ValueError(f"{self.kind} basis has no hyperparameters")
        return self

    def param_grad(self, X: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(G * featurize(X))`` w.r.t. ``get_params()``."""
        return np.zeros(0)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(D={self.dim}, F={self.n_features})"


class LinearBasis(BasisModel):
    kind = LINEAR

    def __init__(self, dim: int, intercept: bool = True):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.intercept_included = bool(intercept)
        self.n_features = self.dim + int(self.intercept_included)

    def _design(self, X):
        if self.intercept_included:
            return np.hstack([np.ones((X.shape[0], 1)), X])
        return X.copy()

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "intercept": self.intercept_included}


class PolynomialBasis(BasisModel):
    """Additive polynomial: one shared intercept, then x_d, x_d^2, ..., x_d^p per dimension."""

    kind = POLYNOMIAL
    intercept_included = True

    def __init__(self, dim: int, degree: int):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.dim = int(dim)
        self.degree = int(degree)
        self.n_features = self.dim * self.degree + 1

    def _design(self, X):
        powers = X[:, :, None] ** np.arange(1, self.degree + 1)
        return np.hstack([np.ones((X.shape[0], 1)), powers.reshape(X.shape[0], -1)])

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "degree": self.degree}


class RBFBasis(BasisModel):
    """Gaussian bumps exp(-|x - mu_k|^2_ARD / 2) at fixed centers.

    Parameters: ``[log lengthscales (D), centers (K*D, row-major)]``.
    """

    kind = RBF

    def __init__(self, centers, lengthscales):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.centers = _frozen(centers)
        self.dim = centers.shape[1]
        ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (self.dim,))
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        self.lengthscales = _frozen(ls)
        self.n_features = centers.shape[0]

    def _sqdist(self, X):
        A = X / self.lengthscales
        C = self.centers / self.lengthscales
        sq = (A**2).sum(1)[:, None] + (C**2).sum(1)[None, :] - 2.0 * A @ C.T
        return np.maximum(sq, 0.0)

    def _design(self, X):
        return np.exp(-0.5 * self._sqdist(X))

    def get_params(self):
        return np.concatenate([np.log(self.lengthscales), self.centers.ravel()])

    def with_params(self, eta):
        eta = np.asarray(eta, dtype=float)
        D = self.dim
        return RBFBasis(eta[D:].reshape(self.n_features, D), np.exp(eta[:D]))

    def param_grad(self, X, G):
        X = np.asarray(X, dtype=float)
        P = G * self._design(X)
        inv_l2 = 1.0 / self.lengthscales**2
        row = P.sum(1)
        col = P.sum(0)
        XtP = X.T @ P  # (D, K)
        mu = self.centers
        g_ls = ((X**2).T @ row - 2.0 * np.einsum("dk,kd->d", XtP, mu) + (mu**2).T @ col) * inv_l2
        g_mu = (XtP.T - mu * col[:, None]) * inv_l2
        return np.concatenate([g_ls, g_mu.ravel()])

    def to_dict(self):
        return {
            "kind": self.kind,
            "centers": self.centers.tolist(),
            "lengthscales": self.lengthscales.tolist(),
        }


class RFFBasis(BasisModel):
    """Random Fourier features, interleaved ``[sin(x.w_1), cos(x.w_1), ...]``.

    Frequencies are ``unit_draws / lengthscales`` unless ``optimize_frequencies``
    is set, in which case the frequency matrix itself is the parameter vector.
    """

    kind = RFF

    def __init__(self, spec: KernelSpec, unit_draws, frequencies=None, optimize_frequencies: bool = False):
        unit_draws = np.atleast_2d(np.asarray(unit_draws, dtype=float))
        if unit_draws.shape[1] != spec.dim:
            raise ValueError("frequency draws do not match kernel dimension")
        self.spec = spec
        self.unit_draws = _frozen(unit_draws)
        self.optimize_frequencies = bool(optimize_frequencies)
        if frequencies is None:
            frequencies = unit_draws / spec.lengthscales
        self.frequencies = _frozen(frequencies)
        self.dim = spec.dim
        self.n_features = 2 * unit_draws.shape[0]
        self._amp = spec.process_scale * np.sqrt(2.0 / self.n_features)

    def _args(self, X):
        return X @ self.frequencies.T

    def _design(self, X):
        A = self._args(X)
        out = np.empty((X.shape[0], self.n_features))
        out[:, 0::2] = np.sin(A)
        out[:, 1::2] = np.cos(A)
        return self._amp * out

    def get_params(self):
        if self.optimize_frequencies:
            return self.frequencies.ravel().copy()
        return np.log(self.spec.lengthscales).copy()

    def with_params(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.optimize_frequencies:
            return RFFBasis(self.spec, self.unit_draws, eta.reshape(self.frequencies.shape), True)
        spec = KernelSpec(self.spec.family, np.exp(eta), self.spec.process_scale)
        return RFFBasis(spec, self.unit_draws)

    def param_grad(self, X, G):
        X = np.asarray(X, dtype=float)
        A = self._args(X)
        H = self._amp * (G[:, 0::2] * np.cos(A) - G[:, 1::2] * np.sin(A))  # d/d(arg)
        if self.optimize_frequencies:
            return (H.T @ X).ravel()
        # d arg_m / d log l_d = -x_d w_md
        return -np.einsum("dm,md->d", X.T @ H, self.frequencies)

    def to_dict(self):
        return {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "unit_draws": self.unit_draws.tolist(),
            "frequencies": self.frequencies.tolist(),
            "optimize_frequencies": self.optimize_frequencies,
        }


class HSGPBasis(BasisModel):
    """Additive Hilbert-space GP basis on the box prod_d [-L_d, L_d].

    Feature j of dimension d is ``sqrt(S_d(w_j)) sin(w_j (x_d + L_d)) / sqrt(L_d)``
    with ``w_j = j pi / (2 L_d)``; features are concatenated over dimensions.
    Inputs outside the box are still evaluated but counted in
    ``out_of_domain``.
    """

    kind = HSGP

    def __init__(self, spec: KernelSpec, half_widths, features_per_dim):
        self.spec = spec
        self.dim = spec.dim
        self.half_widths = _frozen(np.broadcast_to(np.asarray(half_widths, dtype=float), (self.dim,)))
        if not np.all(self.half_widths > 0):
            raise ValueError("half widths must be positive")
        counts = np.broadcast_to(np.asarray(features_per_dim, dtype=int), (self.dim,)).copy()
        if np.any(counts < 1):
            raise ValueError("need at least one feature per dimension")
        counts.setflags(write=False)
        self.features_per_dim = counts
        self.n_features = int(counts.sum())
        self.out_of_domain = 0
        self._offsets = np.concatenate([[0], np.cumsum(counts)])
        self._freqs = [np.arange(1, F + 1) * np.pi / (2.0 * L) for F, L in zip(counts, self.half_widths)]
        self._amps = [
            np.sqrt(spectral_density_1d(spec, d, w) / self.half_widths[d]) for d, w in enumerate(self._freqs)
        ]

    def _design(self, X):
        outside = np.any(np.abs(X) > self.half_widths, axis=1)
        self.out_of_domain += int(outside.sum())
        out = np.empty((X.shape[0], self.n_features))
        for d in range(self.dim):
            sl = slice(self._offsets[d], self._offsets[d + 1])
            out[:, sl] = self._amps[d] * np.sin(np.outer(X[:, d] + self.half_widths[d], self._freqs[d]))
        return out

    def get_params(self):
        return np.log(self.spec.lengthscales).copy()

    def with_params(self, eta):
        spec = KernelSpec(self.spec.family, np.exp(np.asarray(eta, dtype=float)), self.spec.process_scale)
        return HSGPBasis(spec, self.half_widths, self.features_per_dim)

    def param_grad(self, X, G):
        Phi = self._design(np.asarray(X, dtype=float))
        P = (G * Phi).sum(0)
        grad = np.empty(self.dim)
        for d in range(self.dim):
            sl = slice(self._offsets[d], self._offsets[d + 1])
            dlog = log_spectral_density_dlogell(self.spec.family, self.spec.lengthscales[d], self._freqs[d])
            grad[d] = 0.5 * P[sl] @ dlog
        return grad

    def to_dict(self):
        return {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "half_widths": self.half_widths.tolist(),
            "features_per_dim": self.features_per_dim.tolist(),
        }


def build_linear(dim: int, intercept: bool = True) -> LinearBasis:
    return LinearBasis(dim, intercept)


def build_polynomial_additive(dim: int, degree: int) -> PolynomialBasis:
    return PolynomialBasis(dim, degree)


def kmeans(X, k: int, rng: np.random.Generator, iters: int = KMEANS_ITERS) -> np.ndarray:
    """Lloyd's algorithm with a fixed iteration budget.

    Seeds from ``k`` distinct data points; an emptied cluster is re-seeded
    from a random data point.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < k:
        raise ValueError(f"need at least {k} points for {k} centers, got {X.shape[0]}")
    centers = X[rng.choice(X.shape[0], size=k, replace=False)].copy()
    for _ in range(iters):
        d2 = (X**2).sum(1)[:, None] + (centers**2).sum(1)[None, :] - 2.0 * X @ centers.T
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        for j in range(k):
            if counts[j]:
                centers[j] = sums[j] / counts[j]
            else:
                centers[j] = X[rng.integers(X.shape[0])]
    return centers


def build_rbf_network(X, n_centers: int, lengthscales, rng: np.random.Generator) -> RBFBasis:
    X = np.asarray(X, dtype=float)
    return RBFBasis(kmeans(X, n_centers, rng), lengthscales)


def build_rff(spec: KernelSpec, n_features: int, rng: np.random.Generator, optimize_frequencies: bool = False) -> RFFBasis:
    if n_features < 2 or n_features % 2:
        raise ValueError(f"RFF feature count must be even and positive, got {n_features}")
    draws = sample_spectral_frequencies(spec.family, n_features // 2, spec.dim, rng)
    return RFFBasis(spec, draws, optimize_frequencies=optimize_frequencies)


def hsgp_half_widths(X, scale: float = HSGP_SCALE) -> np.ndarray:
    """Per-dimension L_d = c * max |x_d| over the pretraining inputs."""
    if not scale > 1:
        raise ValueError("domain scale c must exceed 1")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return scale * np.max(np.abs(X), axis=0)


def default_hsgp_features(dim: int, budget: int = 100) -> int:
    return max(budget // dim, 1)


def build_hsgp_additive(spec: KernelSpec, features_per_dim, half_widths) -> HSGPBasis:
    return HSGPBasis(spec, half_widths, features_per_dim)


def featurize(model: BasisModel, x) -> np.ndarray:
    return model.featurize(x)


def basis_from_dict(d: dict) -> BasisModel:
    kind = d["kind"]
    if kind == LINEAR:
        return LinearBasis(d["dim"], d["intercept"])
    if kind == POLYNOMIAL:
        return PolynomialBasis(d["dim"], d["degree"])
    if kind == RBF:
        return RBFBasis(np.asarray(d["centers"]), np.asarray(d["lengthscales"]))
    if kind == RFF:
        return RFFBasis(
            KernelSpec.from_dict(d["spec"]),
            np.asarray(d["unit_draws"]),
            np.asarray(d["frequencies"]),
            d["optimize_frequencies"],
        )
    if kind == HSGP:
        return HSGPBasis(KernelSpec.from_dict(d["spec"]), d["half_widths"], d["features_per_dim"])
    raise ValueError(f"unknown basis kind {kind!r}")
