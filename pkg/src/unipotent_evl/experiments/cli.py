"""Command line entry point.

Each subcommand either reads ``--config`` or builds a small default config
from its own flags; ``--seed``, ``--threads`` and ``--out`` override the
config. Statistical verdicts go into the reports, never into the exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..lattice import LatticeError, NormPair, SplitDims
from ..sampling import RngStream, sample
from .config import ConfigError, ExperimentConfig
from .report import write_report
from .runner import run

log = logging.getLogger("unipotent_evl")

DEFAULT_GRIDS = {
    "diag": {},
    "hits": {"L": [16.0, 64.0, 256.0]},
    "evl": {"T": [100.0, 1000.0]},
    "oracle": {"X": [0.05, 0.1, 0.5, 1.0, 2.0, 4.0]},
    "tails": {"X": [0.05, 0.1], "Y": [1.0, 1.25, 1.5, 1.75, 2.0]},
    "fkm": {"R": [1.0, 2.0, 4.0, 8.0]},
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--threads", type=int, help="worker processes (0 = all cores)")
    p.add_argument("--out", type=Path, help="output directory")


def _dims_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=int, default=None, help="rank of the action (default n-1)")
    p.add_argument("--N", type=int, default=1000, help="number of samples")
    p.add_argument("--sampler", default=None, help="sampler kind")
    p.add_argument("--outer", default="euclidean", choices=["euclidean", "sup"])
    p.add_argument("--inner", default="euclidean", choices=["euclidean", "sup"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unipotent-evl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="print random lattice bases as JSON lines")
    _common(p)
    _dims_flags(p)

    for name, helptext in [
        ("diag", "Siegel / Rogers moment diagnostics of a sampler"),
        ("hits", "first hitting times against the avoidance oracle"),
        ("evl", "extreme value statistic against the eta oracle"),
        ("oracle", "avoidance probabilities Psi_0(B_X)"),
        ("tails", "small-X and tail asymptotics report"),
        ("fkm", "cone avoidance probabilities F_{k,m}(R)"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _dims_flags(p)

    p = sub.add_parser("report", help="summarise existing result directories")
    _common(p)
    p.add_argument("dirs", nargs="+", type=Path)
    p.add_argument("--format", choices=["md", "html"], default="md")
    return ap


def _default_config(args, kind: str) -> ExperimentConfig:
    k = args.k if args.k is not None else args.n - 1
    dims = SplitDims(args.n, k, args.n - k - 1)
    sampler = args.sampler or ("haar-exact-n2" if args.n == 2 else "haar-mixing-push")
    if kind == "hits":
        sampler = args.sampler or "ac-gaussian"
    return ExperimentConfig(kind=kind, dims=dims, norms=NormPair(args.outer, args.inner),
                            sampler={"kind": sampler}, grids=dict(DEFAULT_GRIDS.get(kind, {})),
                            Nsamples=args.N)


def _load(args, kind: str) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.kind != kind and not (kind == "hits" and cfg.kind in ("joint-counts", "impact")) \
                and not (kind == "evl" and cfg.kind == "loglaw"):
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {kind!r}")
    else:
        cfg = _default_config(args, kind)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = str(args.out)
    cfg.validate()
    return cfg


def _cmd_sample(args) -> int:
    cfg = _load(args, "diag")
    spec = cfg.sampler_spec()
    for i in range(cfg.Nsamples):
        x = sample(spec, RngStream(cfg.seed, i))
        print(json.dumps({"i": i, "basis": x.basis.tolist()}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "report":
            path = write_report(args.dirs, args.out or Path("."), args.format)
            print(path)
            return 0
        cfg = _load(args, args.command)
        out = run(cfg)
        print(out)
        return 0
    except (ConfigError, LatticeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
