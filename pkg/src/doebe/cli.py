"""Command-line entry point: ``doebe run | compare | gen``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import data as streams
from .config import MODES, ConfigError, load_config
from .runner import ResumeError, StepError, compare, run_experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doebe", description="Online ensembles of basis expansions.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a streaming experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default: $DOEBE_OUT or ./results)")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--sigma-rw", type=float, nargs="+", dest="sigma_rw")
    r.add_argument("--delta", type=float)
    r.add_argument("--name")
    r.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint file")
    r.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    r.add_argument("--report", action="store_true", help="print a summary table")

    c = sub.add_parser("compare", help="tabulate result summaries")
    c.add_argument("files", nargs="+")

    g = sub.add_parser("gen", help="write a synthetic stream to CSV")
    g.add_argument("--variant", required=True, choices=["friedman1", "friedman2", "interleaved", "interleaved-ordered"])
    g.add_argument("--n", type=int, default=40000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    for key in ("seed", "mode", "sigma_rw", "delta", "name", "checkpoint_every"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    cfg.__post_init__()
    summary = run_experiment(cfg, args.out, resume=args.resume)
    if args.report:
        print(f"{'name':<16}{'mode':<8}{'steps':>8}{'nMSE':>10}{'PLL':>10}")
        print(f"{summary['name']:<16}{summary['mode']:<8}{summary['steps']:>8}"
              f"{summary['final_nmse']:>10.4f}{summary['final_pll']:>10.4f}")
        if summary["error_rate"] is not None:
            print(f"classification error: {summary['error_rate']:.4f}")
    return 0


def _gen(args) -> int:
    if args.variant.startswith("friedman"):
        stream = streams.gen_friedman(int(args.variant[-1]), args.n, args.seed)
    else:
        stream = streams.gen_interleaved(args.n, args.seed, ordered=args.variant.endswith("ordered"))
    streams.write_csv(args.out, stream)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "compare":
            print(compare(args.files))
            return 0
        return _gen(args)
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ResumeError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
