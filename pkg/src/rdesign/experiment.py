"""Seeded replications over a method matrix, with resumable on-disk traces.

Layout under ``outdir``::

    manifest.json                 methods, seeds and metrics of the run
    <arch>-<acq>/<seed>.json      full trace
    <arch>-<acq>/<seed>.csv       flat trace for plotting
    <arch>-<acq>/<seed>.error     traceback of a failed cell
    aggregate_<metric>.csv        method,step,acquired,n,mean,std
"""

from __future__ import annotations

import csv
import io
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import loop
from .config import METRICS, ConfigError, ExperimentConfig

WORKERS_ENV = "RDESIGN_WORKERS"
PLOT_KINDS = {
    "pehe_curve": "sqrt_pehe_test",
    "pehe_train_curve": "sqrt_pehe_train",
    "ape_curve": "ape",
    "regret_curve": "regret",
    "final": None,
}


def method_label(method) -> str:
    return "-".join(method)


@dataclass
class ResultsBundle:
    outdir: Path
    methods: list
    seeds: list
    traces: dict = field(default_factory=dict)  # (label, seed) -> ExperimentTrace
    failures: dict = field(default_factory=dict)  # (label, seed) -> message

    def by_method(self, label: str) -> list:
        return [self.traces[(label, s)] for s in self.seeds if (label, s) in self.traces]

    def aggregate(self, metric: str) -> list:
        """Rows ``(method, step, acquired, n, mean, std)`` across seeds.

        ``std`` is the population standard deviation, so one seed gives 0.
        """
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        rows = []
        for label in self.methods:
            traces = self.by_method(label)
            n_steps = max((len(t.steps) for t in traces), default=0)
            for k in range(n_steps):
                here = [t.steps[k] for t in traces if len(t.steps) > k]
                vals = np.array([getattr(s, metric) for s in here], dtype=float)
                rows.append((label, k, here[0].acquired, len(vals), float(vals.mean()), float(vals.std())))
        return rows


def _cell_paths(outdir: Path, label: str, seed: int):
    d = outdir / label
    return d / f"{seed}.json", d / f"{seed}.csv", d / f"{seed}.error"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _load_trace(path: Path):
    try:
        return loop.ExperimentTrace.from_json(path)
    except (OSError, ValueError, KeyError, TypeError):
        return None


def _run_cell(cfg_data: dict, base_dir: str, method: tuple, seed: int):
    """Worker entry: run one cell, write its files, report status."""
    cfg = ExperimentConfig(cfg_data, Path(base_dir))
    label = method_label(method)
    jpath, cpath, epath = _cell_paths(cfg.outdir, label, seed)
    jpath.parent.mkdir(parents=True, exist_ok=True)
    try:
        env = cfg.environment()
        data = loop.make_datasets(env, cfg_data["n_obs"], cfg_data["n_pool"], cfg_data["n_test"], seed)
        trace = loop.run(env, data, cfg.loop_config(method, seed))
        _atomic_write(cpath, trace.csv_text())
        _atomic_write(jpath, json.dumps(trace.to_dict(), indent=1, sort_keys=True) + "\n")
        if epath.exists():
            epath.unlink()
        return label, seed, None
    except Exception:  # noqa: BLE001 - a failed cell must not stop the others
        msg = traceback.format_exc()
        _atomic_write(epath, msg)
        return label, seed, msg.strip().splitlines()[-1]


def worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV, "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}: expected a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV}: expected a positive integer, got {env!r}")
        return n
    return cfg.data["workers"] or os.cpu_count() or 1


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _write_if_changed(path: Path, text: str) -> None:
    if path.exists() and path.read_text(encoding="utf-8") == text:
        return
    _atomic_write(path, text)


def write_aggregates(bundle: ResultsBundle, metrics) -> list:
    paths = []
    with FileLock(str(bundle.outdir / ".aggregate.lock")):
        for m in metrics:
            p = bundle.outdir / f"aggregate_{m}.csv"
            _write_if_changed(p, _csv_text(("method", "step", "acquired", "n", "mean", "std"), bundle.aggregate(m)))
            paths.append(p)
    return paths


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ResultsBundle:
    """Run every (method, seed) cell not already on disk, then aggregate."""
    outdir = cfg.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    labels = [method_label(m) for m in cfg.methods]
    manifest = {"methods": labels, "seeds": cfg.seeds, "metrics": cfg.metrics, "config": cfg.to_dict()}
    _write_if_changed(outdir / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    todo = []
    for m in cfg.methods:
        for s in cfg.seeds:
            if _load_trace(_cell_paths(outdir, method_label(m), s)[0]) is None:
                todo.append((m, s))
    n_workers = min(workers or worker_count(cfg), max(len(todo), 1))
    args = [(cfg.data, str(cfg.base_dir), m, s) for m, s in todo]
    if n_workers <= 1:
        results = [_run_cell(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_cell, *zip(*args)))

    bundle = load_bundle(outdir)
    bundle.failures = {(label, seed): msg for label, seed, msg in results if msg is not None}
    write_aggregates(bundle, cfg.metrics)
    return bundle


def load_bundle(outdir) -> ResultsBundle:
    """Collect every completed trace under ``outdir``."""
    outdir = Path(outdir)
    mpath = outdir / "manifest.json"
    if mpath.exists():
        man = json.loads(mpath.read_text(encoding="utf-8"))
        labels, seeds = man["methods"], man["seeds"]
    else:
        labels = sorted(p.name for p in outdir.iterdir() if p.is_dir()) if outdir.is_dir() else []
        seeds = sorted({int(p.stem) for lab in labels for p in (outdir / lab).glob("*.json") if p.stem.isdigit()})
    bundle = ResultsBundle(outdir, labels, seeds)
    for label in labels:
        for s in seeds:
            tr = _load_trace(_cell_paths(outdir, label, s)[0])
            if tr is not None:
                bundle.traces[(label, s)] = tr
    return bundle


def emit_plot_data(bundle: ResultsBundle, kind: str) -> Path:
    """Write ``plot_<kind>.csv``.

    Curve kinds give ``method,step,mean,std`` with ``step`` the number of
    acquisitions so far; ``final`` gives ``method,metric,mean,std`` over the
    last evaluation of each seed.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    if not bundle.traces:
        raise ValueError(f"no completed traces under {bundle.outdir}")
    path = bundle.outdir / f"plot_{kind}.csv"
    metric = PLOT_KINDS[kind]
    if metric is not None:
        rows = [(label, acq, mean, std) for label, _, acq, _, mean, std in bundle.aggregate(metric)]
        text = _csv_text(("method", "step", "mean", "std"), rows)
    else:
        rows = []
        for label in bundle.methods:
            traces = bundle.by_method(label)
            if not traces:
                continue
            for m in METRICS:
                v = np.array([getattr(t.steps[-1], m) for t in traces], dtype=float)
                rows.append((label, m, float(v.mean()), float(v.std())))
        text = _csv_text(("method", "metric", "mean", "std"), rows)
    _atomic_write(path, text)
    return path
