"""Streaming experiment driver: pretrain, stream, record, checkpoint."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from . import data as streams
from .basis import HSGPBasis, build_rff
from .bayes_linear import LOGISTIC
from .config import ExperimentConfig
from .ensemble import load_checkpoint, save_checkpoint, step
from .hyperopt import assemble_ensemble
from .kernels import KernelSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUT_ENV = "DOEBE_OUT"


class ResumeError(RuntimeError):
    pass


class StepError(RuntimeError):
    def __init__(self, t, exc):
        super().__init__(f"numerical failure at step {t}: {exc}")
        self.t = t


def load_stream(cfg: ExperimentConfig) -> streams.Stream:
    dc = cfg.data
    if dc.csv is not None:
        return streams.load_csv(dc.csv, dc.target, dc.header)
    g = dc.generator
    if g in ("friedman1", "friedman2"):
        return streams.gen_friedman(int(g[-1]), dc.n, dc.seed, dc.noise)
    if g == "interleaved":
        return streams.gen_interleaved(dc.n, dc.seed, 0.15 if dc.noise is None else dc.noise, dc.ordered)
    if g == "drift":
        rng = np.random.default_rng(dc.seed)
        feats = build_rff(KernelSpec("se", [1.0, 1.0]), dc.features, rng)
        theta0 = rng.standard_normal(feats.n_features)
        sched = streams.random_walk_schedule(theta0, dc.n, dc.drift_var, rng, dc.onset)
        noise = 0.5 if dc.noise is None else dc.noise
        stream, _ = streams.gen_drift(feats, sched, noise**2, rng.integers(2**32))
        return stream
    raise ValueError(f"unknown generator {g!r}")


def prepare(cfg: ExperimentConfig):
    """Standardized stream plus the pretraining slice; labels stay in {-1, +1}."""
    raw = load_stream(cfg)
    if len(raw) == 0:
        raise ValueError("data source is empty")
    stream, standardizer = streams.standardize(raw, cfg.pretrain, standardize_y=cfg.likelihood != LOGISTIC)
    n_pre = min(cfg.pretrain, len(stream))
    return stream, standardizer, n_pre


def _paths(out_dir: Path, name: str):
    return {
        "metrics": out_dir / f"{name}.metrics.csv",
        "summary": out_dir / f"{name}.summary.json",
        "checkpoint": out_dir / f"{name}.ckpt.npz",
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume=None, stop_after: int | None = None) -> dict:
    """Run (or resume) one experiment and return the summary dict.

    ``stop_after`` ends the stream early after that many total steps and
    leaves a checkpoint behind; used to exercise resumption.
    """
    out_dir = Path(out_dir or cfg.out_dir or os.environ.get(OUT_ENV, "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _paths(out_dir, cfg.name)
    digest = cfg.digest()
    started = time.perf_counter()

    stream, standardizer, n_pre = prepare(cfg)
    if resume is not None:
        state, meta = load_checkpoint(resume)
        if meta.get("config_hash") != digest:
            raise ResumeError(f"checkpoint {resume} was written by a different config")
        trace = streams.MetricTrace(**meta["trace"])
        _truncate_metrics(paths["metrics"], state.t)
        mode = "a"
    else:
        state = assemble_ensemble(cfg, stream.X[:n_pre], stream.y[:n_pre])
        trace = streams.MetricTrace.for_stream(stream.y)
        mode = "w"

    logistic = cfg.likelihood == LOGISTIC
    T = len(stream) if stop_after is None else min(len(stream), stop_after)
    with open(paths["metrics"], mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["t", "nmse", "pll", "top_weight_index"] + [f"w{m}" for m in range(state.size)])
        for t in range(state.t, T):
            x, y = stream.X[t], float(stream.y[t])
            try:
                pred = step(state, x, y)
            except (ArithmeticError, np.linalg.LinAlgError) as exc:
                raise StepError(t, exc) from exc
            streams.metrics_update(trace, pred, y)
            nmse, pll = trace.read()
            writer.writerow([t + 1, repr(nmse), repr(pll), int(np.argmax(state.weights))] + [repr(float(w)) for w in state.weights])
            if cfg.checkpoint_every and state.t % cfg.checkpoint_every == 0:
                fh.flush()
                _checkpoint(paths["checkpoint"], state, trace, digest, cfg.seed)
    if stop_after is not None and state.t < len(stream):
        _checkpoint(paths["checkpoint"], state, trace, digest, cfg.seed)

    nmse, pll = trace.read()
    ood = sum(b.out_of_domain for b in {id(e.basis): e.basis for e in state.experts}.values() if isinstance(b, HSGPBasis))
    summary = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "mode": cfg.mode,
        "config_hash": digest,
        "seed": cfg.seed,
        "steps": state.t,
        "complete": state.t == len(stream),
        "n_experts": state.size,
        "final_nmse": nmse,
        "final_pll": pll,
        "error_rate": trace.error_rate if logistic else None,
        "top_weight_index": int(np.argmax(state.weights)),
        "top_weight_label": state.experts[int(np.argmax(state.weights))].label,
        "diagnostics": len(state.diagnostics),
        "out_of_domain": ood,
        "input_dim": stream.dim,
    }
    log.info("%s: %d steps in %.1fs", cfg.name, state.t, time.perf_counter() - started)
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _checkpoint(path, state, trace, digest, seed):
    meta = {
        "config_hash": digest,
        "seed": seed,
        "trace": {
            "target_var": trace.target_var,
            "sq_err": trace.sq_err,
            "log_lik": trace.log_lik,
            "errors": trace.errors,
            "count": trace.count,
        },
    }
    save_checkpoint(path, state, meta)


def _truncate_metrics(path: Path, t: int):
    """Keep the header and the first ``t`` metric rows."""
    if not path.exists():
        raise ResumeError(f"metrics file {path} missing; cannot resume")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows[: t + 1])


def load_summary(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"result file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def compare(paths) -> str:
    """Plain-text table of final metrics; best entries per column get a ``*``."""
    rows = [load_summary(p) for p in paths]
    if not rows:
        raise ValueError("no result files given")
    versions = {r.get("schema_version") for r in rows}
    if len(versions) != 1:
        raise ValueError(f"result files mix schema versions {sorted(map(str, versions))}")
    cols = [("final_nmse", min), ("final_pll", max)]
    if any(r.get("error_rate") is not None for r in rows):
        cols.append(("error_rate", min))
    best = {}
    for key, pick in cols:
        vals = [r[key] for r in rows if r.get(key) is not None]
        best[key] = pick(vals) if vals else None
    header = ["name", "mode"] + [k for k, _ in cols]
    lines = [header]
    for r in rows:
        line = [str(r.get("name")), str(r.get("mode"))]
        for key, _ in cols:
            v = r.get(key)
            cell = "-" if v is None else f"{v:.4f}" + ("*" if v == best[key] else "")
            line.append(cell)
        lines.append(line)
    widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
    out = ["  ".join(c.ljust(w) for c, w in zip(l, widths)) for l in lines]
    out.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(out)
