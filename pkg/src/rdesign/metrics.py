"""Evaluation of CATE estimates against ground truth.

Policy metrics treat an estimate of exactly zero as "assign control": the
policy is ``1{tau > 0}`` with a strict inequality on both sides.

Average regret is the per-decision population form
``mean(|tau(x)| * 1{policy(x) != optimal(x)})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGRET_DEFINITION = "avg_regret = mean(|tau| * 1{1[tau_hat>0] != 1[tau>0]})"


@dataclass(frozen=True)
class EvalGrid:
    X: np.ndarray
    tau: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray

    @classmethod
    def from_env(cls, env, X) -> EvalGrid:
        X = np.asarray(X, dtype=float)
        mu0 = env.mu(X, 0)
        mu1 = env.mu(X, 1)
        return cls(X, mu1 - mu0, mu0, mu1)

    def __len__(self):
        return len(self.tau)


@dataclass(frozen=True)
class MetricReport:
    sqrt_pehe: float
    ape: float
    avg_regret: float
    n_eval: int


def _pair(tau_hat, grid):
    truth = grid.tau if isinstance(grid, EvalGrid) else np.asarray(grid, dtype=float)
    tau_hat = np.asarray(tau_hat, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if len(truth) == 0:
        raise ValueError("evaluation grid is empty")
    if tau_hat.shape != truth.shape:
        raise ValueError(f"length mismatch: {tau_hat.shape[0]} estimates for {truth.shape[0]} points")
    return tau_hat, truth


def pehe(tau_hat, grid) -> float:
    tau_hat, truth = _pair(tau_hat, grid)
    return float(np.mean((tau_hat - truth) ** 2))


def ape(tau_hat, grid) -> float:
    tau_hat, truth = _pair(tau_hat, grid)
    return float(np.mean((tau_hat > 0) != (truth > 0)))


def avg_regret(tau_hat, grid) -> float:
    tau_hat, truth = _pair(tau_hat, grid)
    return float(np.mean(np.abs(truth) * ((tau_hat > 0) != (truth > 0))))


def report(tau_hat, grid) -> MetricReport:
    return MetricReport(
        sqrt_pehe=float(np.sqrt(pehe(tau_hat, grid))),
        ape=ape(tau_hat, grid),
        avg_regret=avg_regret(tau_hat, grid),
        n_eval=len(np.asarray(tau_hat).reshape(-1)),
    )


def normalized_auc(curve, anchor: float | None = None) -> float:
    """Trapezoidal area under a learning curve, normalised so a flat curve is 1.

    ``curve`` is a sequence of ``(acquired, metric)`` pairs.  The denominator
    is ``span * anchor`` with ``anchor`` defaulting to the first metric value;
    pass another method's first value to compare against a baseline.
    """
    pts = np.asarray(curve, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("normalized_auc needs at least two (acquired, metric) points")
    x, v = pts[:, 0], pts[:, 1]
    if np.any(np.diff(x) <= 0):
        raise ValueError("acquired counts must be strictly increasing")
    ref = v[0] if anchor is None else float(anchor)
    area = float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(x)))
    return area / ((x[-1] - x[0]) * ref)
