"""Synthetic ground-truth environments and dataset containers.

Every environment exposes the experimental surfaces ``mu(x, t)`` and
``tau(x)``, a confounding bias ``eta(x)`` that shifts observational outcomes
by ``(2t - 1) * eta(x)``, and samplers for the observational, pool and target
covariate populations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np
from scipy.special import expit

OBSERVATIONAL = "o"
EXPERIMENTAL = "e"


class DataError(ValueError):
    """Malformed environment specification or input file."""


class CausalSample(NamedTuple):
    x: np.ndarray
    t: int
    y: float
    s: str


@dataclass(frozen=True)
class CausalDataset:
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = len(X)
        t = np.asarray(self.t, dtype=int).reshape(n)
        y = np.asarray(self.y, dtype=float).reshape(n)
        s = np.asarray(self.s, dtype="<U1")
        if s.ndim == 0:
            s = np.full(n, str(s))
        s = s.reshape(n)
        for name, arr in zip("Xtys", (X, t, y, s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, d: int, source: str = EXPERIMENTAL) -> CausalDataset:
        return cls(np.zeros((0, d)), np.zeros(0, int), np.zeros(0), np.full(0, source))

    @classmethod
    def from_samples(cls, samples, d: int) -> CausalDataset:
        samples = list(samples)
        if not samples:
            return cls.empty(d)
        return cls(
            np.array([np.atleast_1d(s.x) for s in samples], dtype=float),
            [s.t for s in samples],
            [s.y for s in samples],
            [s.s for s in samples],
        )

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[CausalSample]:
        for i in range(len(self)):
            yield CausalSample(self.X[i], int(self.t[i]), float(self.y[i]), str(self.s[i]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def concat(self, other: CausalDataset) -> CausalDataset:
        return CausalDataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.t, other.t]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.s, other.s]),
        )

    def arm(self, t: int) -> CausalDataset:
        m = self.t == t
        return CausalDataset(self.X[m], self.t[m], self.y[m], self.s[m])

    def to_csv(self, path) -> None:
        d = self.dim
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j}" for j in range(d)] + ["t", "y", "s"])
            for i in range(len(self)):
                w.writerow([repr(float(v)) for v in self.X[i]] + [int(self.t[i]), repr(float(self.y[i])), self.s[i]])


Surface = Callable[[np.ndarray], np.ndarray]
Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class GroundTruthEnv:
    name: str
    dim: int
    baseline: Surface
    effect: Surface
    bias: Surface
    propensity: Surface
    obs_sampler: Sampler
    pool_sampler: Sampler
    target_sampler: Sampler
    noise_sd: float = 1.0
    participation: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def _X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.dim == 1 else X[None, :]
        if X.shape[1] != self.dim:
            raise DataError(f"expected {self.dim} covariates, got {X.shape[1]}")
        return X

    def mu(self, X, t) -> np.ndarray:
        X = self._X(X)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
        return self.baseline(X) + t * self.effect(X)

    def tau(self, X) -> np.ndarray:
        return self.effect(self._X(X))

    def eta(self, X) -> np.ndarray:
        return self.bias(self._X(X))

    def mu_obs(self, X, t) -> np.ndarray:
        X = self._X(X)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
        return self.mu(X, t) + (2.0 * t - 1.0) * self.bias(X)

    def with_noise(self, noise_sd: float) -> GroundTruthEnv:
        from dataclasses import replace

        return replace(self, noise_sd=float(noise_sd))


# ---------------------------------------------------------------------------
# univariate scenarios

_TAU = {
    "simple": lambda x: 1.0 - x,
    "complex": lambda x: 1.0 + x - x**2,
}
_MU0 = {
    "simple": lambda x: 0.8 * x**3 - x,
    "complex": lambda x: 2.0 * np.sin(3.0 * np.pi * x) - 1.5 * np.exp(1.5 * (x - 0.8)),
}
_ETA = {
    "simple": lambda x: 2.0 * np.exp(-0.8 * (x + 2.0)),
    "complex": lambda x: 5.0 * np.exp(-((x + 3.0) ** 2) / 12.5) * (1.0 + 0.2 * np.cos(x)),
}

# scenario index -> (eta, mu0, tau) complexity, in table order
SCENARIOS = {
    1: ("simple", "simple", "simple"),
    2: ("simple", "simple", "complex"),
    3: ("simple", "complex", "simple"),
    4: ("simple", "complex", "complex"),
    5: ("complex", "simple", "simple"),
    6: ("complex", "simple", "complex"),
    7: ("complex", "complex", "simple"),
    8: ("complex", "complex", "complex"),
}


def scenario_index(eta: str, mu0: str, tau: str) -> int:
    key = (eta.lower(), mu0.lower(), tau.lower())
    for k, v in SCENARIOS.items():
        if v == key:
            return k
    raise DataError(f"no scenario with components {key}")


def _uniform(low, high, d):
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(low, high, size=(n, d))

    return draw


def _col(f):
    return lambda X: f(X[:, 0])


def univariate_env(
    scenario: int,
    *,
    beta0: float = 0.0,
    beta1: float = 1.0,
    noise_sd: float = 1.0,
) -> GroundTruthEnv:
    """One of the eight 1-D scenarios; covariates live on [-2, 2]."""
    if scenario not in SCENARIOS:
        raise DataError(f"scenario must be in 1..8, got {scenario!r}")
    eta_c, mu_c, tau_c = SCENARIOS[scenario]
    uniform = _uniform(-2.0, 2.0, 1)
    return GroundTruthEnv(
        name=f"sim{scenario}",
        dim=1,
        baseline=_col(_MU0[mu_c]),
        effect=_col(_TAU[tau_c]),
        bias=_col(_ETA[eta_c]),
        propensity=lambda X: expit(X[:, 0]),
        obs_sampler=uniform,
        pool_sampler=uniform,
        target_sampler=uniform,
        noise_sd=noise_sd,
        participation=(beta0, beta1),
        meta={"scenario": scenario, "components": SCENARIOS[scenario]},
    )


# ---------------------------------------------------------------------------
# multivariate generator


def _random_mlp(rng: np.random.Generator, fan_in: int, width: int = 32) -> Surface:
    W1 = rng.normal(size=(fan_in, width)) / math.sqrt(fan_in)
    b1 = rng.normal(size=width) / math.sqrt(fan_in)
    W2 = rng.normal(size=(width, width)) / math.sqrt(width)
    b2 = rng.normal(size=width) / math.sqrt(width)
    w3 = rng.normal(size=width) / math.sqrt(width)

    def f(Z: np.ndarray) -> np.ndarray:
        h = np.tanh(Z @ W1 + b1)
        h = np.tanh(h @ W2 + b2)
        return h @ w3

    return f


def feature_groups(d: int) -> dict[str, np.ndarray]:
    """Confounder / prognostic / noise column indices for dimension ``d``."""
    if d < 6 or d % 3:
        raise DataError(f"multivariate dimension must be >= 6 and divisible by 3, got {d}")
    g = d // 3
    return {
        "C": np.arange(0, g),
        "P": np.arange(g, 2 * g),
        "N": np.arange(2 * g, d),
    }


def multivariate_env(
    d: int = 6,
    shift: bool = False,
    seed: int = 0,
    *,
    noise_sd: float = 1.0,
) -> GroundTruthEnv:
    groups = feature_groups(d)
    C, P = groups["C"], groups["P"]
    mlp_rng = np.random.default_rng([int(seed), 0x6D6C70])
    f_mu = _random_mlp(mlp_rng, len(C) + len(P))
    f_prop = _random_mlp(mlp_rng, len(C))
    CP = np.concatenate([C, P])
    c1, c2 = C[0], C[1]

    def baseline(X):
        return f_mu(X[:, CP]) + 0.5 * np.sin(3 * np.pi * X[:, c1]) * np.cos(np.pi * X[:, c2])

    def effect(X):
        return 1.0 + 2.0 * np.sin(2 * np.pi * X[:, 0]) + 0.5 * np.cos(np.pi * X[:, 1])

    def bias(X):
        return 1.5 + (X[:, c1] + X[:, c2]) + 0.5 * X[:, c1] ** 2

    def propensity(X):
        xc = X[:, C]
        return expit(f_prop(xc) + 0.2 * np.tanh(xc.sum(1)))

    base = _uniform(-2.0, 2.0, d)
    return GroundTruthEnv(
        name=f"mv{d}{'-shift' if shift else ''}",
        dim=d,
        baseline=baseline,
        effect=effect,
        bias=bias,
        propensity=propensity,
        obs_sampler=base,
        pool_sampler=_uniform(-4.0, 2.0, d) if shift else base,
        target_sampler=base,
        noise_sd=noise_sd,
        meta={"d": d, "shift": shift, "seed": seed, "groups": {k: v.tolist() for k, v in groups.items()}},
    )


# ---------------------------------------------------------------------------
# covariate files with a configurable surface


def load_covariates_csv(path) -> np.ndarray:
    """Read a header-first numeric CSV into an ``(n, d)`` float array."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    for j, name in enumerate(header):
        try:
            float(name)
        except ValueError:
            continue
        raise DataError(f"{path}: missing header row (row 1, column {j + 1} is numeric)")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        vals = []
        for j, cell in enumerate(row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell!r} at row {i}, column {j + 1}"
                ) from None
        out.append(vals)
    if not out:
        raise DataError(f"{path}: no data rows")
    return np.array(out, dtype=float)


def write_covariates_csv(path, X) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{j}" for j in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class SurfaceParams:
    """Linear baseline and effect plus the quadratic bias used for covariate files.

    ``eta(x) = eta_gamma * (1 + c1 x_1 + c2 x_2 + c3 x_1^2)`` on the first two
    columns; propensity is ``sigmoid(propensity_coef . x)``.
    """

    mu0_intercept: float = 0.0
    mu0_coef: tuple[float, ...] = ()
    tau_intercept: float = 1.0
    tau_coef: tuple[float, ...] = ()
    eta_gamma: float = 1.5
    eta_c: tuple[float, float, float] = (0.5, 0.5, 0.25)
    propensity_coef: tuple[float, ...] = ()


def csv_env(X_pop: np.ndarray, params: SurfaceParams = SurfaceParams(), *, noise_sd: float = 1.0, name: str = "csv") -> GroundTruthEnv:
    X_pop = np.atleast_2d(np.asarray(X_pop, dtype=float))
    n, d = X_pop.shape

    def vec(coef):
        v = np.zeros(d)
        coef = np.asarray(coef, dtype=float)
        if len(coef) > d:
            raise DataError(f"{len(coef)} coefficients for {d} covariates")
        v[: len(coef)] = coef
        return v

    a, b, w = vec(params.mu0_coef), vec(params.tau_coef), vec(params.propensity_coef)
    c1, c2, c3 = params.eta_c
    x2 = 1 if d > 1 else 0

    def resample(rng, m):
        return X_pop[rng.integers(0, n, size=m)]

    return GroundTruthEnv(
        name=name,
        dim=d,
        baseline=lambda X: params.mu0_intercept + X @ a,
        effect=lambda X: params.tau_intercept + X @ b,
        bias=lambda X: params.eta_gamma * (1 + c1 * X[:, 0] + (c2 * X[:, x2] if d > 1 else 0.0) + c3 * X[:, 0] ** 2),
        propensity=lambda X: expit(X @ w),
        obs_sampler=resample,
        pool_sampler=resample,
        target_sampler=resample,
        noise_sd=noise_sd,
    )


# ---------------------------------------------------------------------------
# sampling


def sample_observational(env: GroundTruthEnv, n: int, rng: np.random.Generator) -> CausalDataset:
    if n < 1:
        raise DataError("n must be positive")
    X = env.obs_sampler(rng, n)
    t = (rng.random(n) < env.propensity(X)).astype(int)
    y = env.mu_obs(X, t) + env.noise_sd * rng.standard_normal(n)
    return CausalDataset(X, t, y, OBSERVATIONAL)


MAX_REJECTIONS = 10**6


def sample_pool(env: GroundTruthEnv, n: int, rng: np.random.Generator) -> np.ndarray:
    """Trial pool covariates; filtered by the participation model when set."""
    if n < 1:
        raise DataError("n must be positive")
    if env.participation is None:
        return env.pool_sampler(rng, n)
    b0, b1 = env.participation
    accepted, rejected = [], 0
    have = 0
    while have < n:
        m = max(2 * (n - have), 64)
        cand = env.pool_sampler(rng, m)
        keep = rng.random(m) < expit(b0 + b1 * cand[:, 0])
        rejected += int((~keep).sum())
        if rejected > MAX_REJECTIONS:
            raise ArithmeticError("participation filter stalled: too many rejections")
        accepted.append(cand[keep])
        have += int(keep.sum())
    return np.vstack(accepted)[:n]


def sample_targets(env: GroundTruthEnv, n: int, rng: np.random.Generator) -> np.ndarray:
    return env.target_sampler(rng, n)


def query_outcome(env: GroundTruthEnv, x, t, rng: np.random.Generator):
    """Unconfounded experimental outcome(s) ``mu(x, t) + eps``."""
    t_arr = np.asarray(t)
    if not np.isin(t_arr, (0, 1)).all():
        raise DataError("treatment must be 0 or 1")
    X = env._X(x)
    t_arr = np.broadcast_to(t_arr, (len(X),))
    y = env.mu(X, t_arr) + env.noise_sd * rng.standard_normal(len(X))
    return float(y[0]) if np.ndim(t) == 0 and len(X) == 1 else y
