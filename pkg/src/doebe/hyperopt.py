"""Empirical-Bayes fitting of expert hyperparameters on a pretraining window.

Hyperparameters live in an unconstrained vector ``eta``: the basis parameters
(log length scales, RBF centers or free RFF frequencies) followed by
``log prior_var`` and ``log noise_var``.  Each start is optimized with Adam
on the analytic gradient of the log evidence; a Laplace approximation around
each optimum supplies additional hyperparameter draws.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import basis as bases
from .bayes_linear import ExpertModel, log_evidence_and_grads
from .config import ExperimentConfig, FamilyConfig
from .ensemble import EnsembleState, build_edoebe, uniform_switching_matrix
from .kernels import KernelSpec

log = logging.getLogger(__name__)

HESSIAN_MAX_PARAMS = 50
HESSIAN_STEP = 1e-4
PD_JITTER = 1e-6
FALLBACK_VAR = 1e-3
MAX_HALVINGS = 10


@dataclass
class HyperVector:
    """Unconstrained vector paired with the basis template it parameterizes."""

    eta: np.ndarray
    template: bases.BasisModel

    @property
    def n_basis_params(self) -> int:
        return self.template.get_params().size

    def constrain(self):
        """``(basis, prior_var, noise_var)``."""
        k = self.n_basis_params
        basis = self.template.with_params(self.eta[:k]) if k else self.template
        return basis, math.exp(self.eta[k]), math.exp(self.eta[k + 1])

    @classmethod
    def unconstrain(cls, basis: bases.BasisModel, prior_var: float, noise_var: float) -> "HyperVector":
        if not (prior_var > 0 and noise_var > 0):
            raise ValueError("variances must be positive")
        eta = np.concatenate([basis.get_params(), [math.log(prior_var), math.log(noise_var)]])
        return cls(eta, basis)


@dataclass
class FittedMode:
    hyper: HyperVector
    log_evidence: float
    hessian: np.ndarray | None = None
    converged: bool = True
    start: str = ""


def evidence_and_grad(hv: HyperVector, X, y):
    basis, prior_var, noise_var = hv.constrain()
    Phi = basis.featurize(X)
    value, dPhi, d_prior, d_noise = log_evidence_and_grads(Phi, y, prior_var, noise_var)
    grad = np.concatenate([basis.param_grad(X, dPhi), [d_prior, d_noise]])
    return value, grad


def _safe_eval(hv, X, y):
    try:
        value, grad = evidence_and_grad(hv, X, y)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError):
        return -np.inf, None
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        return -np.inf, None
    return value, grad


def fit_mode(template: bases.BasisModel, X, y, eta0=None, steps: int = 500, lr: float = 1e-2,
             hessian: bool = True, start: str = "") -> FittedMode:
    """Adam ascent on the log evidence; returns the best iterate seen."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if steps < 1:
        raise ValueError("optimizer budget must be positive")
    eta = (HyperVector.unconstrain(template, 1.0, 0.25).eta if eta0 is None else np.array(eta0, dtype=float))
    value, grad = _safe_eval(HyperVector(eta, template), X, y)
    if grad is None:
        raise FloatingPointError("log evidence is not finite at the initial hyperparameters")
    best_eta, best_val, best_grad = eta.copy(), value, grad
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(eta)
    v = np.zeros_like(eta)
    halvings = 0
    i = 0
    while i < steps:
        i += 1
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        m_hat = m / (1 - b1**i)
        v_hat = v / (1 - b2**i)
        cand = eta + lr * m_hat / (np.sqrt(v_hat) + eps)
        c_val, c_grad = _safe_eval(HyperVector(cand, template), X, y)
        if c_grad is None:
            halvings += 1
            if halvings > MAX_HALVINGS:
                log.warning("fit %s: evidence stayed non-finite; keeping best iterate", start)
                return _finish(template, best_eta, best_val, X, y, hessian, False, start)
            lr *= 0.5
            eta, grad = best_eta.copy(), best_grad
            m, v = np.zeros_like(m), np.zeros_like(v)
            i = 0
            continue
        eta, value, grad = cand, c_val, c_grad
        if value > best_val:
            best_eta, best_val, best_grad = eta.copy(), value, grad
    return _finish(template, best_eta, best_val, X, y, hessian, True, start)


def _finish(template, eta, value, X, y, want_hessian, converged, start):
    hv = HyperVector(eta, template)
    H = None
    if want_hessian and eta.size <= HESSIAN_MAX_PARAMS:
        H = evidence_hessian(hv, X, y)
    return FittedMode(hv, float(value), H, converged, start)


def evidence_hessian(hv: HyperVector, X, y, h: float = HESSIAN_STEP) -> np.ndarray | None:
    """Hessian of the negative log evidence by central differences of the gradient."""
    P = hv.eta.size
    H = np.empty((P, P))
    for i in range(P):
        e = np.zeros(P)
        e[i] = h
        _, gp = _safe_eval(HyperVector(hv.eta + e, hv.template), X, y)
        _, gm = _safe_eval(HyperVector(hv.eta - e, hv.template), X, y)
        if gp is None or gm is None:
            return None
        H[:, i] = -(gp - gm) / (2 * h)
    return 0.5 * (H + H.T)


def sample_hyperparams(mode: FittedMode, count: int, rng: np.random.Generator) -> list:
    """Draws from N(eta*, H^-1); the mode itself is not included."""
    if count <= 0:
        return []
    eta = mode.hyper.eta
    chol = None
    if mode.hessian is not None:
        for jitter in (0.0, PD_JITTER):
            try:
                chol = np.linalg.cholesky(mode.hessian + jitter * np.eye(eta.size))
                break
            except np.linalg.LinAlgError:
                continue
    out = []
    for _ in range(count):
        z = rng.standard_normal(eta.size)
        fallback = HyperVector(eta + math.sqrt(FALLBACK_VAR) * z, mode.hyper.template)
        if chol is None:
            out.append(fallback)
            continue
        hv = HyperVector(eta + np.linalg.solve(chol.T, z), mode.hyper.template)
        # a nearly flat evidence direction survives the jitter with a huge
        # variance; draws that overflow the transforms use the fallback instead
        out.append(hv if _constrains(hv) else fallback)
    return out


def _constrains(hv: HyperVector) -> bool:
    try:
        with np.errstate(all="raise"):
            _, prior_var, noise_var = hv.constrain()
    except (ValueError, OverflowError, FloatingPointError):
        return False
    return 0 < prior_var < math.inf and 0 < noise_var < math.inf


def initial_lengthscales(X, s: float) -> np.ndarray:
    """l_d = s * (max x_d - min x_d) over the pretraining inputs."""
    X = np.asarray(X, dtype=float)
    span = X.max(axis=0) - X.min(axis=0)
    span[span <= 0] = 1.0
    return s * span


def family_templates(fam: FamilyConfig, X, rng: np.random.Generator):
    """Yields ``(label, template basis)`` for each start of a family."""
    X = np.asarray(X, dtype=float)
    D = X.shape[1]
    if fam.kind == bases.LINEAR:
        yield "linear", bases.build_linear(D, fam.intercept)
        return
    if fam.kind == bases.POLYNOMIAL:
        for p in fam.degrees:
            yield f"poly{p}", bases.build_polynomial_additive(D, p)
        return
    if fam.kind == bases.RBF:
        centers = bases.kmeans(X, min(fam.centers, X.shape[0]), rng)
        for s in fam.s_grid:
            yield f"rbf[s={s:g}]", bases.RBFBasis(centers, initial_lengthscales(X, s))
        return
    if fam.kind == bases.RFF:
        draws = None
        for s in fam.s_grid:
            spec = KernelSpec(fam.kernel, initial_lengthscales(X, s))
            if draws is None:
                draws = bases.build_rff(spec, fam.features, rng).unit_draws
            name = "off" if fam.optimize_frequencies else "rff"
            yield f"{name}[s={s:g}]", bases.RFFBasis(spec, draws, optimize_frequencies=fam.optimize_frequencies)
        return
    if fam.kind == bases.HSGP:
        per_dim = fam.features or bases.default_hsgp_features(D)
        L = bases.hsgp_half_widths(X, fam.domain_scale)
        L[L <= 0] = fam.domain_scale
        for s in fam.s_grid:
            spec = KernelSpec(fam.kernel, initial_lengthscales(X, s))
            yield f"hsgp[s={s:g}]", bases.build_hsgp_additive(spec, per_dim, L)
        return
    raise ValueError(f"unknown family {fam.kind!r}")


def fit_family(fam: FamilyConfig, X, y, rng, prior_var=1.0, noise_var=0.25, steps=500, lr=1e-2, sample=True):
    """Fit every start of a family; modes come back sorted by evidence (best first)."""
    modes = []
    for label, template in family_templates(fam, X, rng):
        eta0 = HyperVector.unconstrain(template, prior_var, noise_var).eta
        modes.append(fit_mode(template, X, y, eta0, steps, lr, hessian=sample and fam.samples > 0, start=label))
    modes.sort(key=lambda md: md.log_evidence, reverse=True)
    return modes


def mode_experts(mode: FittedMode, count: int, rng, likelihood: str) -> list:
    hypers = [mode.hyper] + sample_hyperparams(mode, count, rng)
    experts = []
    for k, hv in enumerate(hypers):
        basis, prior_var, noise_var = hv.constrain()
        label = mode.start if k == 0 else f"{mode.start}#{k}"
        experts.append(ExpertModel.from_prior(basis, prior_var, noise_var, 0.0, likelihood, label))
    return experts


def assemble_ensemble(cfg: ExperimentConfig, X_pre, y_pre, rng=None, sample: bool = True) -> EnsembleState:
    """Fit all families on the pretraining window and wire up the ensemble mode.

    Hyperparameters are frozen afterwards; every expert starts from its prior.
    """
    X_pre = np.asarray(X_pre, dtype=float)
    y_pre = np.asarray(y_pre, dtype=float)
    if X_pre.shape[0] == 0:
        raise ValueError("pretraining window is empty")
    if not cfg.families:
        raise ValueError("config declares no basis families")
    root = np.random.SeedSequence(cfg.seed) if rng is None else rng.bit_generator.seed_seq
    fam_seqs = root.spawn(len(cfg.families))
    experts = []
    for fam, seq in zip(cfg.families, fam_seqs):
        fit_rng, sample_rng = (np.random.default_rng(s) for s in seq.spawn(2))
        modes = fit_family(fam, X_pre, y_pre, fit_rng, cfg.prior_var, cfg.noise_var,
                           cfg.optimizer.steps, cfg.optimizer.lr, sample)
        for mode in modes:
            log.info("%s: log evidence %.3f", mode.start, mode.log_evidence)
            experts.extend(mode_experts(mode, fam.samples if sample else 0, sample_rng, cfg.likelihood))
    return wire_ensemble(experts, cfg)


def wire_ensemble(experts: list, cfg: ExperimentConfig) -> EnsembleState:
    dynamic = next((v for v in cfg.sigma_rw if v > 0), 0.0)
    if cfg.mode == "oebe":
        members = [e.copy(drift_var=0.0) for e in experts]
        return EnsembleState(members, weight_floor=cfg.weight_floor)
    if cfg.mode == "doebe":
        members = [e.copy(drift_var=dynamic) for e in experts]
        return EnsembleState(members, weight_floor=cfg.weight_floor)
    if cfg.mode == "sdoebe":
        members = [e.copy(drift_var=dynamic) for e in experts]
        Q = uniform_switching_matrix(len(members), cfg.delta)
        return EnsembleState(members, switching=Q, weight_floor=cfg.weight_floor)
    levels = [v for v in cfg.sigma_rw if v > 0] + [0.0]
    return build_edoebe(experts, levels, cfg.delta, cfg.weight_floor)
