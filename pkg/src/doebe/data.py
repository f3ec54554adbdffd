"""Stream ingestion, standardization, synthetic generators and running metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PRETRAIN = 1000


@dataclass(frozen=True)
class StreamRecord:
    x: np.ndarray
    y: float
    t: int


@dataclass
class Stream:
    """A finite stream held as arrays; iteration yields :class:`StreamRecord`."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.shape[0] != self.y.size:
            raise ValueError("inputs and targets differ in length")

    def __len__(self):
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __iter__(self):
        for t in range(len(self)):
            yield StreamRecord(self.X[t], float(self.y[t]), t)

    def head(self, n: int) -> "Stream":
        return Stream(self.X[:n], self.y[:n])


class CSVFormatError(ValueError):
    pass


def load_csv(path, target=-1, header: bool | None = None) -> Stream:
    """Read a numeric CSV in file order.

    ``target`` is a column index or, when the file has a header row, a name.
    ``header=None`` sniffs whether the first row is non-numeric.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        return Stream(np.zeros((0, 0)), np.zeros(0))
    names = None
    if header is None:
        header = not _numeric_row(rows[0])
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            return Stream(np.zeros((0, len(names) - 1)), np.zeros(0))
    width = len(rows[0])
    if isinstance(target, str):
        if names is None or target not in names:
            raise CSVFormatError(f"target column {target!r} not found")
        target = names.index(target)
    target = int(target) % width
    data = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + 1 + int(bool(header))
        if len(row) != width:
            raise CSVFormatError(f"{path}: line {line} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan"):
                raise CSVFormatError(f"{path}: missing value at line {line}, column {j + 1}")
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise CSVFormatError(f"{path}: non-numeric value {cell!r} at line {line}, column {j + 1}") from None
    X = np.delete(data, target, axis=1)
    return Stream(X, data[:, target])


def _numeric_row(row) -> bool:
    """False when any non-blank cell fails to parse; blanks are left for the missing-value check."""
    try:
        [float(c) for c in row if c.strip()]
    except ValueError:
        return False
    return True


def write_csv(path, stream: Stream, header: bool = True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{d}" for d in range(stream.dim)] + ["y"])
        for x, y in zip(stream.X, stream.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


@dataclass(frozen=True)
class Standardizer:
    """Affine maps fitted once on the pretraining window."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    keep: np.ndarray  # indices of retained input columns

    def transform_x(self, X):
        X = np.asarray(X, dtype=float)
        return (X[..., self.keep] - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def transform(self, stream: Stream) -> Stream:
        return Stream(self.transform_x(stream.X), self.transform_y(stream.y))

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "keep": self.keep.tolist(),
        }


def fit_standardizer(stream: Stream, n_pretrain: int = PRETRAIN, standardize_y: bool = True) -> Standardizer:
    n = len(stream)
    if n == 0:
        raise ValueError("cannot standardize an empty stream")
    if n < n_pretrain:
        log.warning("stream has %d records, fewer than the %d-record pretraining window", n, n_pretrain)
        n_pretrain = n
    head = stream.X[:n_pretrain]
    std = head.std(axis=0)
    keep = np.flatnonzero(std > 0)
    y_head = stream.y[:n_pretrain]
    y_mean, y_std = (float(y_head.mean()), float(y_head.std())) if standardize_y else (0.0, 1.0)
    if y_std == 0:
        y_std = 1.0
    return Standardizer(head.mean(axis=0)[keep], std[keep], y_mean, y_std, keep)


def standardize(stream: Stream, n_pretrain: int = PRETRAIN, standardize_y: bool = True):
    """Returns ``(standardized stream, standardizer)``; constant input columns are dropped."""
    st = fit_standardizer(stream, n_pretrain, standardize_y)
    return st.transform(stream), st


# --------------------------------------------------------------------------
# synthetic streams


def gen_friedman(variant: int, n: int, seed=None, noise: float | None = None) -> Stream:
    """Friedman (1991), "Multivariate adaptive regression splines", Ann. Statist. 19(1).

    #1: x ~ U[0, 1]^10,
        y = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 + e, e ~ N(0, 1)
        (x6..x10 are inert).
    #2: x1 ~ U[0, 100], x2 ~ U[40 pi, 560 pi], x3 ~ U[0, 1], x4 ~ U[1, 11],
        y = sqrt(x1^2 + (x2 x3 - 1 / (x2 x4))^2) + e, e ~ N(0, 125^2)
        (noise level giving the original 3:1 signal-to-noise ratio).
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if variant == 1:
        X = rng.uniform(size=(n, 10))
        f = 10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2 + 10 * X[:, 3] + 5 * X[:, 4]
        sd = 1.0 if noise is None else noise
    elif variant == 2:
        X = np.column_stack(
            [
                rng.uniform(0, 100, n),
                rng.uniform(40 * np.pi, 560 * np.pi, n),
                rng.uniform(0, 1, n),
                rng.uniform(1, 11, n),
            ]
        )
        f = np.sqrt(X[:, 0] ** 2 + (X[:, 1] * X[:, 2] - 1 / (X[:, 1] * X[:, 3])) ** 2)
        sd = 125.0 if noise is None else noise
    else:
        raise ValueError(f"unknown Friedman variant {variant}")
    return Stream(X, f + sd * rng.standard_normal(n))


def constant_schedule(theta, n: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.broadcast_to(theta, (n, theta.size)).copy()


def random_walk_schedule(theta0, n: int, drift_var: float, rng, onset: int = 0) -> np.ndarray:
    """theta_t = theta_{t-1} + N(0, drift_var I) for t > onset, constant before."""
    theta0 = np.asarray(theta0, dtype=float)
    steps = np.sqrt(drift_var) * rng.standard_normal((n, theta0.size))
    steps[: onset + 1] = 0.0
    return theta0 + np.cumsum(steps, axis=0)


def piecewise_schedule(thetas, breakpoints, n: int) -> np.ndarray:
    """``thetas[k]`` holds on ``[breakpoints[k-1], breakpoints[k])``."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(breakpoints) != len(thetas) - 1:
        raise ValueError("need one breakpoint between consecutive parameter vectors")
    idx = np.searchsorted(np.asarray(breakpoints), np.arange(n), side="right")
    return thetas[idx]


def gen_drift(features, schedule, noise_var: float, seed=None, dim: int | None = None, x_sampler=None):
    """y_t = phi(x_t) . theta_t + N(0, noise_var).

    ``features`` is a basis (or any callable mapping (N, D) -> (N, F)),
    ``schedule`` an (N, F) array of parameter vectors.  Inputs default to
    standard normal draws.  Returns ``(stream, schedule)``.
    """
    rng = np.random.default_rng(seed)
    schedule = np.asarray(schedule, dtype=float)
    n = schedule.shape[0]
    if dim is None:
        dim = features.dim
    X = x_sampler(rng, n) if x_sampler is not None else rng.standard_normal((n, dim))
    Phi = features(X)
    y = np.einsum("nf,nf->n", Phi, schedule) + math.sqrt(noise_var) * rng.standard_normal(n)
    return Stream(X, y), schedule


def gen_interleaved(n: int, seed=None, noise: float = 0.15, ordered: bool = False) -> Stream:
    """Two interleaved half-moons with labels in {-1, +1}.

    ``ordered`` sorts the stream by the first input coordinate so the classes
    are revealed left to right.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    angle = rng.uniform(0, np.pi, n)
    X = np.where(
        labels[:, None] == 0,
        np.column_stack([np.cos(angle), np.sin(angle)]),
        np.column_stack([1 - np.cos(angle), 0.5 - np.sin(angle)]),
    )
    X = X + noise * rng.standard_normal((n, 2))
    y = 2.0 * labels - 1.0
    if ordered:
        order = np.argsort(X[:, 0], kind="stable")
        X, y = X[order], y[order]
    return Stream(X, y)


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricTrace:
    """Running nMSE / PLL; ``target_var`` is Var(y_1:T) (population) of the whole stream."""

    target_var: float
    sq_err: float = 0.0
    log_lik: float = 0.0
    errors: int = 0
    count: int = 0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.target_var > 0:
            raise ValueError("target variance must be positive for nMSE")

    @classmethod
    def for_stream(cls, y) -> "MetricTrace":
        return cls(float(np.var(np.asarray(y, dtype=float))))

    def update(self, mean: float, log_density: float, y: float, label_pred: float | None = None):
        self.sq_err += (mean - y) ** 2
        self.log_lik += log_density
        if label_pred is not None:
            self.errors += int(np.sign(label_pred) != np.sign(y))
        self.count += 1
        return self

    def read(self):
        """``(nMSE_t, PLL_t)``."""
        if self.count == 0:
            return float("nan"), float("nan")
        return self.sq_err / (self.count * self.target_var), self.log_lik / self.count

    @property
    def error_rate(self) -> float:
        return self.errors / self.count if self.count else float("nan")


def metrics_update(trace: MetricTrace, prediction, y: float) -> MetricTrace:
    """Accepts a mixture prediction or any single predictive with ``logpdf``."""
    label = None
    if getattr(prediction, "prob", None) is not None:
        label = 1.0 if prediction.prob >= 0.5 else -1.0
    log_density = getattr(prediction, "log_density", None)
    if log_density is None:
        log_density = prediction.logpdf(y)
    return trace.update(prediction.mean, log_density, y, label)


def metrics_read(trace: MetricTrace):
    return trace.read()


def compute_regret_bound(n_features: int, prior_var: float, horizon: int, curvature: float, n_experts: int, theta_star) -> float:
    """|theta*|^2 / (2 s2) + (F/2) log(1 + T c s2 / F) + log M."""
    theta_star = np.asarray(theta_star, dtype=float)
    return float(
        theta_star @ theta_star / (2.0 * prior_var)
        + 0.5 * n_features * math.log1p(horizon * curvature * prior_var / n_features)
        + math.log(n_experts)
    )
