"""Compiled vs numpy scoring kernels on a |pool| x |targets| block.

    python3 benchmarks/bench_scoring.py [--pool 1000] [--targets 500] [--repeat 3]

Inputs are drawn from a valid joint Gaussian so every kernel does real work.
Also times a full score table for each targeted criterion with whichever
backend the package selected at import.
"""

import argparse
import time

import numpy as np

from rdesign import _scoring_py, datagen, models
from rdesign._backend import BACKEND
from rdesign.acquisition import AcquisitionSpec, build_score_table, gauss_hermite

try:
    from rdesign import _scoring
except ImportError:  # extension not built
    _scoring = None


def _inputs(m, k, rng):
    var_y = rng.uniform(0.5, 2.0, m)
    var_t = rng.uniform(0.5, 2.0, k)
    rho = rng.uniform(-0.6, 0.6, (m, k))
    cov = np.ascontiguousarray(rho * np.sqrt(var_y[:, None] * var_t[None, :]))
    c1 = np.ascontiguousarray(rng.uniform(-0.6, 0.6, (m, k)) * np.sqrt(var_y[:, None] * var_t[None, :]))
    c01 = 0.3 * np.sqrt(var_t * var_t)
    mean_t = rng.normal(size=k)
    nodes, weights = gauss_hermite(96)
    return {
        "repig_tau": (var_y, cov, var_t, 1 - 1e-10),
        "repig_mu": (var_y, cov, c1, var_t, var_t, c01, 1e-10, 1 - 1e-10),
        "epig": (var_y, cov, c1, var_t, var_t, 1 - 1e-10),
        "repig_pi": (var_y, cov, var_t, mean_t, nodes, weights, 1 - 1e-10),
    }


def _best(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def kernels(m, k, repeat, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for name, args in _inputs(m, k, rng).items():
        t_py, ref = _best(getattr(_scoring_py, name), args, repeat)
        if _scoring is None:
            rows.append((name, t_py, float("nan"), float("nan")))
            continue
        t_cy, out = _best(getattr(_scoring, name), args, repeat)
        rows.append((name, t_py, t_cy, float(np.max(np.abs(out - ref)))))
    return rows


def tables(m, k, seed=0):
    env = datagen.multivariate_env(6)
    rng = np.random.default_rng(seed)
    obs = datagen.sample_observational(env, 600, rng)
    base = models.fit_base(obs, "gp", rng=rng, restarts=1)
    pool = datagen.sample_pool(env, m + 100, rng)
    t = rng.integers(0, 2, 100)
    trial = datagen.CausalDataset(pool[:100], t, datagen.query_outcome(env, pool[:100], t, rng), datagen.EXPERIMENTAL)
    model = models.update(models.make_model("TSR", 6, base, models.ModelSettings(restarts=1)), trial, rng=rng)
    targets = datagen.sample_targets(env, k, rng)
    out = []
    for name in ("REPIGTau", "REPIGMu", "REPIGPi", "EPIG"):
        t0 = time.perf_counter()
        build_score_table(model, pool[100:], AcquisitionSpec(name, target_subsample_size=k), targets, rng=0)
        out.append((name, time.perf_counter() - t0))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pool", type=int, default=1000)
    ap.add_argument("--targets", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()

    print(f"kernels on {a.pool} x {a.targets} (best of {a.repeat})")
    print(f"{'kernel':<10} {'numpy s':>9} {'cython s':>9} {'speedup':>8} {'max |diff|':>11}")
    for name, t_py, t_cy, diff in kernels(a.pool, a.targets, a.repeat):
        print(f"{name:<10} {t_py:9.4f} {t_cy:9.4f} {t_py / t_cy:8.1f} {diff:11.2e}")
    print(f"\nfull score tables, backend={BACKEND}")
    for name, sec in tables(a.pool, a.targets):
        print(f"{name:<10} {sec:9.3f} s")


if __name__ == "__main__":
    main()
