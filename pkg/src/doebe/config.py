"""Experiment configuration: JSON files validated into dataclasses.

Unknown keys are rejected at every level so that typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

from .basis import HSGP, HSGP_SCALE, LINEAR, POLYNOMIAL, RBF, RFF
from .bayes_linear import GAUSSIAN, LOGISTIC
from .ensemble import WEIGHT_FLOOR

SIGMA_RW = 1e-3
S_GRID = (0.1, 1.0, 10.0)
RFF_FEATURES = 100  # 50 frequency pairs
HSGP_BUDGET = 100  # floor(budget / D) features per dimension
RBF_CENTERS = 100
DELTA = 0.05
PRIOR_VAR = 1.0
NOISE_VAR = 0.25
SAMPLES_PER_MODE = 9  # plus the mode itself: 10 experts per mode
PRETRAIN = 1000
OPT_STEPS = 500
OPT_LR = 1e-2

MODES = ("oebe", "doebe", "sdoebe", "edoebe")
KINDS = (LINEAR, POLYNOMIAL, RBF, RFF, HSGP)


class ConfigError(ValueError):
    pass


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


@dataclass
class FamilyConfig:
    kind: str
    features: int | None = None  # RFF: total F; HSGP: per dimension (None = floor(100 / D))
    kernel: str = "se"
    s_grid: list = field(default_factory=lambda: list(S_GRID))
    samples: int = SAMPLES_PER_MODE
    degrees: list = field(default_factory=lambda: [2, 3, 4])
    centers: int = RBF_CENTERS
    domain_scale: float = HSGP_SCALE
    intercept: bool = True
    optimize_frequencies: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown basis kind {self.kind!r}; choose from {KINDS}")
        if self.kind == RFF and self.features is None:
            self.features = RFF_FEATURES
        if self.samples < 0:
            raise ConfigError("samples must be >= 0")
        if not self.s_grid:
            raise ConfigError("s_grid must not be empty")


@dataclass
class DataConfig:
    csv: str | None = None
    target: int | str = -1
    header: bool | None = None
    generator: str | None = None  # friedman1 | friedman2 | drift | interleaved
    n: int = 5000
    seed: int = 0
    noise: float | None = None
    drift_var: float = SIGMA_RW
    onset: int = 0
    features: int = 20
    ordered: bool = False

    def __post_init__(self):
        if (self.csv is None) == (self.generator is None):
            raise ConfigError("data needs exactly one of 'csv' or 'generator'")


@dataclass
class OptimizerConfig:
    steps: int = OPT_STEPS
    lr: float = OPT_LR


@dataclass
class ExperimentConfig:
    data: DataConfig
    families: list
    mode: str = "edoebe"
    pretrain: int = PRETRAIN
    sigma_rw: list = field(default_factory=lambda: [SIGMA_RW])
    delta: float = DELTA
    weight_floor: float = WEIGHT_FLOOR
    prior_var: float = PRIOR_VAR
    noise_var: float = NOISE_VAR
    likelihood: str = GAUSSIAN
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    name: str = "run"
    out_dir: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = _build(DataConfig, self.data, "data")
        if isinstance(self.optimizer, dict):
            self.optimizer = _build(OptimizerConfig, self.optimizer, "optimizer")
        fams = []
        for i, f in enumerate(self.families or []):
            fams.append(_build(FamilyConfig, f, f"families[{i}]") if isinstance(f, dict) else f)
        if not fams:
            raise ConfigError("at least one basis family is required")
        self.families = fams
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.likelihood not in (GAUSSIAN, LOGISTIC):
            raise ConfigError(f"unknown likelihood {self.likelihood!r}")
        if isinstance(self.sigma_rw, (int, float)):
            self.sigma_rw = [float(self.sigma_rw)]
        if any(v < 0 for v in self.sigma_rw):
            raise ConfigError("sigma_rw levels must be non-negative")
        if self.mode in ("doebe", "sdoebe", "edoebe") and not any(v > 0 for v in self.sigma_rw):
            raise ConfigError(f"mode {self.mode} needs a positive sigma_rw level")
        if self.pretrain < 1:
            raise ConfigError("pretrain window must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(cls, raw, "config")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        d = self.to_dict()
        d.pop("out_dir", None)
        d.pop("checkpoint_every", None)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(raw)


def shipped_configs() -> dict:
    """Bundled example configs by file stem."""
    out = {}
    for entry in resources.files("doebe.configs").iterdir():
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = json.loads(entry.read_text())
    return out
