"""Online Bayesian model averaging over basis-expansion experts.

One call to :func:`step` performs, in order:

1. weight switching ``w~ = Q w`` (identity when no switching matrix is set),
2. random-walk drift of every expert,
3. per-expert prediction and the mixture prediction under ``w~``,
4. multiplicative weight update ``w ~ w~ * p_m(y)`` in the log domain, then
   zeroing of weights below the floor and renormalization,
5. per-expert correction on ``(x, y)``.

Zero-weight experts are still drifted and corrected so that a switching matrix
can revive them with a current posterior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import basis_from_dict
from .bayes_linear import ExpertModel, GaussianPosterior, NumericalError

WEIGHT_FLOOR = 1e-16
CHECKPOINT_VERSION = 1


class WeightUnderflowError(FloatingPointError):
    """Every ensemble weight vanished in the same step."""


@dataclass
class MixturePrediction:
    mean: float
    var: float
    log_density: float = float("nan")
    expert_means: np.ndarray = field(default=None, repr=False)
    expert_vars: np.ndarray = field(default=None, repr=False)
    expert_loglik: np.ndarray = field(default=None, repr=False)
    prob: float | None = None


@dataclass
class EnsembleState:
    experts: list
    weights: np.ndarray = None
    switching: np.ndarray | None = None
    weight_floor: float = WEIGHT_FLOOR
    t: int = 0
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        M = len(self.experts)
        if M == 0:
            raise ValueError("ensemble needs at least one expert")
        if self.weights is None:
            self.weights = np.full(M, 1.0 / M)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (M,):
            raise ValueError("one weight per expert required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        if self.switching is not None:
            self.switching = np.asarray(self.switching, dtype=float)
            check_switching_matrix(self.switching, M)

    @property
    def size(self) -> int:
        return len(self.experts)

    def post_switch_weights(self) -> np.ndarray:
        if self.switching is None:
            return self.weights.copy()
        return self.switching @ self.weights


def check_switching_matrix(Q: np.ndarray, M: int | None = None, tol: float = 1e-12):
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or (M is not None and Q.shape[0] != M):
        raise ValueError(f"switching matrix must be {M}x{M}")
    if np.any(Q < 0) or np.any(Q > 1):
        raise ValueError("switching matrix entries must lie in [0, 1]")
    if np.max(np.abs(Q.sum(axis=0) - 1.0)) > tol:
        raise ValueError("switching matrix must be column-stochastic")


def block_switching_matrix(n_models: int, n_blocks: int, delta: float) -> np.ndarray:
    """``(1 - (R-1) delta) I`` on diagonal blocks and ``delta I`` elsewhere."""
    R = int(n_blocks)
    if R < 1 or n_models < 1:
        raise ValueError("need at least one block and one model")
    if delta < 0 or delta * (R - 1) >= 1:
        raise ValueError(f"delta={delta} invalid for {R} blocks")
    blocks = np.full((R, R), float(delta))
    np.fill_diagonal(blocks, 1.0 - (R - 1) * delta)
    return np.kron(blocks, np.eye(n_models))


def uniform_switching_matrix(n_models: int, delta: float) -> np.ndarray:
    """Stay with probability 1 - delta, otherwise jump uniformly to another expert."""
    if n_models == 1:
        return np.eye(1)
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    Q = np.full((n_models, n_models), delta / (n_models - 1))
    np.fill_diagonal(Q, 1.0 - delta)
    return Q


def build_edoebe(experts, drift_levels, delta: float, weight_floor: float = WEIGHT_FLOOR) -> EnsembleState:
    """Replicate ``experts`` once per drift level and couple the copies.

    Block ``r`` holds copies of all experts with random-walk variance
    ``drift_levels[r]`` (0 for a static block).  Weights start uniform.
    """
    drift_levels = list(drift_levels)
    if not drift_levels:
        raise ValueError("need at least one drift level")
    members = []
    for level in drift_levels:
        tag = "static" if level == 0 else f"rw={level:g}"
        members.extend(e.copy(drift_var=level, label=f"{e.label}|{tag}") for e in experts)
    Q = block_switching_matrix(len(experts), len(drift_levels), delta)
    return EnsembleState(members, switching=Q, weight_floor=weight_floor)


def _expert_predictions(state: EnsembleState, x, active=None):
    cache = {}
    preds = [None] * state.size
    feats = [None] * state.size
    failed = []
    for m, expert in enumerate(state.experts):
        if active is not None and not active[m]:
            continue
        key = id(expert.basis)
        if key not in cache:
            cache[key] = expert.basis.featurize(x)
        feats[m] = cache[key]
        try:
            preds[m] = expert.predict(feats[m])
        except NumericalError as exc:
            failed.append((m, str(exc)))
    return preds, feats, failed


def _mixture_moments(weights, preds):
    idx = [m for m, p in enumerate(preds) if p is not None and weights[m] > 0]
    w = weights[idx]
    w = w / w.sum()
    means = np.array([preds[m].mean for m in idx])
    variances = np.array([preds[m].var for m in idx])
    mu = float(w @ means)
    var = float(w @ (variances + (mu - means) ** 2))
    return mu, var


def _mixture_prob(weights, preds):
    live = [(m, p) for m, p in enumerate(preds) if p is not None]
    if not live or not hasattr(live[0][1], "prob"):
        return None
    return float(sum(weights[m] * p.prob for m, p in live) / sum(weights[m] for m, _ in live))


def ensemble_predict(state: EnsembleState, x, weights=None) -> MixturePrediction:
    """MMSE mixture moments; experts with zero weight are not evaluated."""
    w = state.post_switch_weights() if weights is None else np.asarray(weights, dtype=float)
    preds, _, _ = _expert_predictions(state, x, active=w > 0)
    mu, var = _mixture_moments(w, preds)
    means = np.array([np.nan if p is None else p.mean for p in preds])
    variances = np.array([np.nan if p is None else p.var for p in preds])
    return MixturePrediction(mu, var, expert_means=means, expert_vars=variances, prob=_mixture_prob(w, preds))


def update_weights(prior_weights, loglik, floor: float = WEIGHT_FLOOR):
    """Posterior simplex weights and the mixture log density of the observation."""
    with np.errstate(divide="ignore"):
        logw = np.log(prior_weights) + loglik
    top = logw.max()
    if not np.isfinite(top):
        raise WeightUnderflowError("all expert weights underflowed")
    # max-shifted log-sum-exp; scipy's version costs ~100x more per call here
    w = np.exp(logw - top)
    total = top + math.log(w.sum())
    w /= w.sum()
    w[w < floor] = 0.0
    s = w.sum()
    if s <= 0:
        raise WeightUnderflowError("all expert weights fell below the floor")
    return w / s, float(total)


def step(state: EnsembleState, x, y: float) -> MixturePrediction:
    """Advance the ensemble by one observation; mutates ``state`` in place."""
    w_tilde = state.post_switch_weights()
    for expert in state.experts:
        expert.drift()

    preds, feats, failed = _expert_predictions(state, x)
    for m, msg in failed:
        state.diagnostics.append((state.t, m, msg))
        w_tilde[m] = 0.0
    if w_tilde.sum() <= 0:
        raise WeightUnderflowError(f"no usable expert at step {state.t}")
    w_tilde = w_tilde / w_tilde.sum()

    loglik = np.full(state.size, -np.inf)
    for m, p in enumerate(preds):
        if p is not None:
            loglik[m] = p.logpdf(y)
    mu, var = _mixture_moments(w_tilde, preds)
    new_w, log_density = update_weights(w_tilde, loglik, state.weight_floor)

    for m, expert in enumerate(state.experts):
        if preds[m] is None:
            continue
        try:
            expert.correct(feats[m], y, preds[m])
        except NumericalError as exc:
            state.diagnostics.append((state.t, m, str(exc)))
            new_w[m] = 0.0
    if new_w.sum() <= 0:
        raise WeightUnderflowError(f"every expert failed at step {state.t}")
    state.weights = new_w / new_w.sum()
    state.t += 1

    return MixturePrediction(
        mu,
        var,
        log_density,
        np.array([np.nan if p is None else p.mean for p in preds]),
        np.array([np.nan if p is None else p.var for p in preds]),
        loglik,
        _mixture_prob(w_tilde, preds),
    )


def revive_check(state: EnsembleState) -> dict:
    """Experts whose weight is zero now but positive after the next switch."""
    if state.switching is None:
        raise ValueError("revival requires a switching matrix")
    w_tilde = state.post_switch_weights()
    revived = [int(m) for m in np.flatnonzero((state.weights == 0) & (w_tilde > 0))]
    return {"revived": revived, "post_switch": w_tilde}


def save_checkpoint(path, state: EnsembleState, meta: dict | None = None):
    arrays = {"weights": state.weights}
    if state.switching is not None:
        arrays["switching"] = state.switching
    experts = []
    for m, e in enumerate(state.experts):
        arrays[f"mean_{m}"] = e.posterior.mean
        arrays[f"cov_{m}"] = e.posterior.cov
        experts.append(
            {
                "basis_ref": None,
                "noise_var": e.noise_var,
                "drift_var": e.drift_var,
                "likelihood": e.likelihood,
                "prior_var": e.prior_var,
                "label": e.label,
            }
        )
    # experts sharing a basis object keep sharing it after a reload
    bases, refs = [], {}
    for spec, e in zip(experts, state.experts):
        key = id(e.basis)
        if key not in refs:
            refs[key] = len(bases)
            d = e.basis.to_dict()
            if hasattr(e.basis, "out_of_domain"):
                d["out_of_domain"] = e.basis.out_of_domain
            bases.append(d)
        spec["basis_ref"] = refs[key]
    header = {
        "version": CHECKPOINT_VERSION,
        "t": state.t,
        "weight_floor": state.weight_floor,
        "experts": experts,
        "bases": bases,
        "meta": meta or {},
    }
    arrays["header"] = np.array(json.dumps(header))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(state, meta)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        bases = []
        for d in header["bases"]:
            b = basis_from_dict(d)
            if "out_of_domain" in d:
                b.out_of_domain = d["out_of_domain"]
            bases.append(b)
        experts = []
        for m, spec in enumerate(header["experts"]):
            post = GaussianPosterior(data[f"mean_{m}"].copy(), data[f"cov_{m}"].copy())
            experts.append(
                ExpertModel(
                    bases[spec["basis_ref"]],
                    post,
                    spec["noise_var"],
                    spec["drift_var"],
                    spec["likelihood"],
                    spec["prior_var"],
                    spec["label"],
                )
            )
        switching = data["switching"].copy() if "switching" in data else None
        weights = data["weights"].copy()
    state = EnsembleState(experts, weights, switching, header["weight_floor"], header["t"])
    return state, header["meta"]
