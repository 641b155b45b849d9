"""Budgeted sequential design loop with softmax batch selection.

Seeding: every random draw in a run derives from ``config.seed`` through a
fixed tag, so a run is reproducible and its acquisition sequence can be
replayed.  Outcome noise for the k-th acquisition uses the stream
``(seed, OUTCOME, k)`` regardless of which unit or arm was picked.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datagen as dg
from . import metrics as mt
from .acquisition import AcquisitionSpec, ScoreTable, build_score_table
from .models import ModelSettings, fit_base, load_offsets_csv, make_model, predict_cate, update

# stream tags
_DATA, _BASE, _WARM, _ROUND, _FIT, _OUTCOME, _SCORE = range(7)


class LoopInputError(ValueError):
    pass


@dataclass(frozen=True)
class LoopConfig:
    budget: int = 240
    batch_size: int = 10
    warm_start_size: int = 50
    temperature: float = 1.0
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    architecture: str = "TSR"
    eval_every: int | None = None
    seed: int = 0
    base_learner: str = "gp"
    kernel: str = "RBF"
    restarts: int = 5
    freeze_hypers: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise LoopInputError("temperature must be positive")
        for name in ("budget", "batch_size"):
            if getattr(self, name) < 1:
                raise LoopInputError(f"{name} must be positive")
        if self.warm_start_size < 0:
            raise LoopInputError("warm_start_size must be non-negative")
        if self.eval_every is not None and self.eval_every < 1:
            raise LoopInputError("eval_every must be positive")

    @property
    def cadence(self) -> int:
        return self.eval_every or self.batch_size

    def settings(self) -> ModelSettings:
        return ModelSettings(self.kernel, self.restarts, self.freeze_hypers)


@dataclass(frozen=True)
class Datasets:
    """Observational data, trial pool, acquisition targets and evaluation points."""

    obs: dg.CausalDataset
    pool: np.ndarray
    targets: np.ndarray
    test: np.ndarray


def make_datasets(env: dg.GroundTruthEnv, n_obs: int, n_pool: int, n_test: int = 1000, seed: int = 0) -> Datasets:
    rng = np.random.default_rng([int(seed), _DATA])
    obs = dg.sample_observational(env, n_obs, rng)
    pool = dg.sample_pool(env, n_pool, rng)
    test = dg.sample_targets(env, n_test, rng)
    return Datasets(obs, pool, obs.X, test)


@dataclass
class StepRecord:
    step: int
    acquired: int
    indices: list
    arms: list
    outcomes: list
    sqrt_pehe_train: float
    sqrt_pehe_test: float
    ape: float
    regret: float
    seconds: float


@dataclass
class ExperimentTrace:
    config: dict
    env: str
    steps: list = field(default_factory=list)
    stopped_early: bool = False

    CSV_FIELDS = ("step", "acquired", "sqrt_pehe_test", "ape", "regret", "seconds")

    @property
    def acquisitions(self):
        """All (pool index, arm, outcome) triples in acquisition order."""
        out = []
        for s in self.steps:
            out.extend(zip(s.indices, s.arms, s.outcomes))
        return out

    def curve(self, metric: str = "sqrt_pehe_test"):
        return [(s.acquired, getattr(s, metric)) for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "env": self.env,
            "stopped_early": self.stopped_early,
            "steps": [asdict(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentTrace:
        return cls(d["config"], d["env"], [StepRecord(**s) for s in d["steps"]], d["stopped_early"])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> ExperimentTrace:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        for s in self.steps:
            w.writerow([s.step, s.acquired, repr(s.sqrt_pehe_test), repr(s.ape), repr(s.regret), f"{s.seconds:.6f}"])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8", newline="\n")


def config_to_dict(config: LoopConfig) -> dict:
    d = asdict(config)
    d["acquisition"] = asdict(config.acquisition)
    return d


def warm_start(pool_idx, size: int, rng: np.random.Generator):
    """Uniform units without replacement, each with a fair-coin arm."""
    pool_idx = np.asarray(pool_idx)
    if size > len(pool_idx):
        raise LoopInputError(f"warm start of {size} exceeds pool of {len(pool_idx)}")
    if size < 0:
        raise LoopInputError("warm start size must be non-negative")
    pos = rng.choice(len(pool_idx), size=size, replace=False)
    arms = rng.integers(0, 2, size=size)
    keep = np.ones(len(pool_idx), dtype=bool)
    keep[pos] = False
    return pool_idx[pos], arms, pool_idx[keep]


def softmax_batch_sample(table: ScoreTable, temperature: float, n_b: int, rng: np.random.Generator):
    """Draw ``n_b`` units without replacement, P(unit) ~ exp(max_score / T).

    Probabilities are renormalised over the remaining units after each draw.
    Returns table positions and the table's chosen arm for each.
    """
    s = np.asarray(table.max_score, dtype=float)
    if not np.all(np.isfinite(s)):
        raise LoopInputError("scores must be finite")
    if n_b > len(s):
        raise LoopInputError(f"batch of {n_b} exceeds {len(s)} remaining units")
    if temperature <= 0:
        raise LoopInputError("temperature must be positive")
    logits = s / temperature
    alive = np.ones(len(s), dtype=bool)
    picked = []
    for _ in range(n_b):
        z = np.where(alive, logits, -np.inf)
        w = np.exp(z - z.max())
        j = int(rng.choice(len(s), p=w / w.sum()))
        picked.append(j)
        alive[j] = False
    picked = np.array(picked, dtype=int)
    return picked, table.chosen[picked]


def _make_base(data: Datasets, config: LoopConfig):
    if config.architecture == "PureRCT":
        return None
    if config.base_learner.endswith(".csv"):
        return load_offsets_csv(config.base_learner)
    return fit_base(data.obs, config.base_learner, rng=_stream(config.seed, _BASE), family=config.kernel)


def _stream(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng([int(seed), *tags])


def _evaluate(model, data: Datasets, grid_test, grid_train):
    tau_test = predict_cate(model, data.test)[0]
    tau_train = predict_cate(model, data.targets)[0]
    return (
        float(np.sqrt(mt.pehe(tau_train, grid_train))),
        float(np.sqrt(mt.pehe(tau_test, grid_test))),
        mt.ape(tau_test, grid_test),
        mt.avg_regret(tau_test, grid_test),
    )


def run(env: dg.GroundTruthEnv, data: Datasets, config: LoopConfig) -> ExperimentTrace:
    """Execute one (architecture, acquisition, seed) cell."""
    seed = config.seed
    n_pool = len(data.pool)
    if config.warm_start_size > n_pool:
        raise LoopInputError("warm start exceeds pool size")
    if config.budget > config.warm_start_size and config.warm_start_size + config.batch_size > n_pool:
        raise LoopInputError("warm_start_size + batch_size exceeds pool size")
    t0 = time.perf_counter()
    base = _make_base(data, config)
    model = make_model(config.architecture, env.dim, base, config.settings())
    grid_test = mt.EvalGrid.from_env(env, data.test)
    grid_train = mt.EvalGrid.from_env(env, data.targets)
    trace = ExperimentTrace(config_to_dict(config), env.name)

    remaining = np.arange(n_pool)
    acquired = 0
    round_no = 0
    pending_idx, pending_arm, pending_y = [], [], []

    def acquire(idx, arms):
        nonlocal acquired
        ys = []
        for i, a in zip(idx, arms):
            ys.append(dg.query_outcome(env, data.pool[i], int(a), _stream(seed, _OUTCOME, acquired)))
            acquired += 1
        return dg.CausalDataset(data.pool[idx].reshape(len(idx), env.dim), arms, ys, dg.EXPERIMENTAL), ys

    def record():
        tr, te, ape, reg = _evaluate(model, data, grid_test, grid_train)
        trace.steps.append(
            StepRecord(
                len(trace.steps),
                acquired,
                [int(i) for i in pending_idx],
                [int(a) for a in pending_arm],
                [float(y) for y in pending_y],
                tr,
                te,
                ape,
                reg,
                time.perf_counter() - t0,
            )
        )
        pending_idx.clear()
        pending_arm.clear()
        pending_y.clear()

    warm = min(config.warm_start_size, config.budget)
    idx, arms, remaining = warm_start(remaining, warm, _stream(seed, _WARM))
    batch, ys = acquire(idx, arms)
    model = update(model, batch, rng=_stream(seed, _FIT, 0))
    pending_idx += list(idx)
    pending_arm += list(arms)
    pending_y += ys
    record()
    last_eval = acquired

    while acquired < config.budget and len(remaining):
        round_no += 1
        rng = _stream(seed, _ROUND, round_no)
        n_b = min(config.batch_size, config.budget - acquired, len(remaining))
        table = build_score_table(model, data.pool[remaining], config.acquisition, data.targets, rng=_stream(seed, _SCORE, round_no))
        pos, arms = softmax_batch_sample(table, config.temperature, n_b, rng)
        idx = remaining[pos]
        remaining = np.delete(remaining, pos)
        batch, ys = acquire(idx, arms)
        model = update(model, batch, rng=_stream(seed, _FIT, round_no))
        pending_idx += list(idx)
        pending_arm += list(arms)
        pending_y += ys
        if acquired - last_eval >= config.cadence or acquired >= config.budget:
            record()
            last_eval = acquired
    if pending_idx:
        record()
    trace.stopped_early = acquired < config.budget
    return trace


def replay(trace: ExperimentTrace, env: dg.GroundTruthEnv, data: Datasets, config: LoopConfig) -> list:
    """Refit the recorded acquisition sequence and recompute every step's metrics."""
    seed = config.seed
    base = _make_base(data, config)
    model = make_model(config.architecture, env.dim, base, config.settings())
    grid_test = mt.EvalGrid.from_env(env, data.test)
    grid_train = mt.EvalGrid.from_env(env, data.targets)
    out = []
    # step 0 is exactly the warm start; later steps hold whole rounds of batch_size
    fit_no = 0
    for step in trace.steps:
        k = 0
        while k < len(step.indices) or (step.step == 0 and fit_no == 0):
            n = len(step.indices) if step.step == 0 else min(config.batch_size, len(step.indices) - k)
            sl = slice(k, k + n)
            X = data.pool[np.asarray(step.indices[sl], dtype=int)].reshape(n, env.dim)
            batch = dg.CausalDataset(X, step.arms[sl], step.outcomes[sl], dg.EXPERIMENTAL)
            model = update(model, batch, rng=_stream(seed, _FIT, fit_no))
            fit_no += 1
            k += n
        out.append(_evaluate(model, data, grid_test, grid_train))
    return out
