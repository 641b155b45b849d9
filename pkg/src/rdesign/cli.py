"""Command-line entry point: ``rdesign {run,plot-data,gen,validate}``.

Exit codes: 0 success, 1 validation error, 2 some cells failed.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from . import datagen as dg
from .config import ConfigError, parse_config
from .experiment import PLOT_KINDS, emit_plot_data, load_bundle, run_experiment

OK, INVALID, PARTIAL = 0, 1, 2

_SIM = re.compile(r"^sim([1-8])$")
_MV = re.compile(r"^mv(\d+)(-shift)?$")


def resolve_env(spec: str) -> dg.GroundTruthEnv:
    """``sim1``..``sim8``, ``mv<d>``, ``mv<d>-shift`` or an experiment config path."""
    m = _SIM.match(spec)
    if m:
        return dg.univariate_env(int(m.group(1)))
    m = _MV.match(spec)
    if m:
        return dg.multivariate_env(int(m.group(1)), shift=bool(m.group(2)))
    if Path(spec).is_file():
        return parse_config(spec).environment()
    raise ConfigError(f"env-spec: expected sim1..sim8, mv<d>[-shift] or a config file, got {spec!r}")


def _cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    cfg.environment()
    n = len(cfg.methods) * len(cfg.seeds)
    print(f"{args.config}: ok ({len(cfg.methods)} methods x {len(cfg.seeds)} seeds = {n} cells)")
    return OK


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    cfg.environment()
    bundle = run_experiment(cfg)
    done = len(bundle.traces)
    print(f"{done} traces in {cfg.outdir}")
    for (label, seed), msg in sorted(bundle.failures.items()):
        print(f"FAILED {label} seed {seed}: {msg}", file=sys.stderr)
    return PARTIAL if bundle.failures else OK


def _cmd_plot(args) -> int:
    bundle = load_bundle(args.outdir)
    print(emit_plot_data(bundle, args.kind))
    return OK


def _cmd_gen(args) -> int:
    env = resolve_env(args.env_spec)
    rng = np.random.default_rng(args.seed)
    if args.source == "obs":
        ds = dg.sample_observational(env, args.n, rng)
    else:
        X = dg.sample_pool(env, args.n, rng)
        t = rng.integers(0, 2, size=args.n)
        ds = dg.CausalDataset(X, t, dg.query_outcome(env, X, t, rng), dg.EXPERIMENTAL)
    ds.to_csv(args.out)
    if args.offsets:
        from .models import BaseModel

        BaseModel(lambda Q: env.mu_obs(Q, 0), lambda Q: env.mu_obs(Q, 1), "oracle").save_offsets_csv(args.offsets, ds.X)
    print(f"{len(ds)} rows -> {args.out}")
    return OK


class _Parser(argparse.ArgumentParser):
    # usage mistakes are validation errors, not partial failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rdesign", description="Observationally informed adaptive causal experimental design.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every (method, seed) cell of a config")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    pd = sub.add_parser("plot-data", help="write long-format plot CSVs from a results directory")
    pd.add_argument("outdir")
    pd.add_argument("kind", help=", ".join(PLOT_KINDS))
    pd.set_defaults(func=_cmd_plot)

    g = sub.add_parser("gen", help="export a sampled dataset as x_0..x_{d-1},t,y,s")
    g.add_argument("env_spec")
    g.add_argument("out")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--source", choices=("obs", "trial"), default="obs", help="confounded observational rows or a randomized trial")
    g.add_argument("--offsets", help="also write the true observational surfaces as an offsets CSV")
    g.set_defaults(func=_cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "n", 1) < 1:
        print("error: --n: must be positive", file=sys.stderr)
        return INVALID
    try:
        return args.func(args)
    except (ConfigError, dg.DataError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
