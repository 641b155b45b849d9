"""Acquisition scores for (unit, arm) candidates.

Two routes compute the same quantities.  The per-candidate ``score_*``
functions assemble moments from :func:`rdesign.models.estimand_posterior`
and evaluate the closed forms in plain Python; :func:`build_score_table`
scores a whole pool at once from vectorised GP moments and the compiled
reductions in :mod:`rdesign._backend`.

All information quantities are in nats.  Squared correlations are capped at
``rho2_max`` so mutual information stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from ._backend import scoring
from .models import CausalModel, estimand_posterior

NAMES = (
    "Random",
    "Leverage",
    "MuBALD",
    "TauBALD",
    "RhoBALD",
    "MuRhoBALD",
    "ABC3",
    "ACE",
    "EPIG",
    "SignBALD",
    "TypeS",
    "REPIGMu",
    "REPIGTau",
    "REPIGPi",
)
RESIDUAL_CRITERIA = {"REPIGMu", "REPIGTau", "REPIGPi"}
TARGETED = {"ABC3", "EPIG"} | RESIDUAL_CRITERIA
# criteria whose score does not depend on the queried arm; the arm is drawn at random
ARM_FREE = {"MuBALD", "TauBALD", "SignBALD", "TypeS"}
VAR_FLOOR = 1e-12
SCHUR_JITTER = 1e-10
# the bulk route drops the smallest Gauss-Hermite weights up to this total
# mass; the integrand is bounded by log 2, so the error is below 1e-12 nats
_GH_DROP_MASS = 1e-12


class AcquisitionError(ValueError):
    pass


@dataclass(frozen=True)
class AcquisitionSpec:
    name: str = "REPIGTau"
    target_subsample_size: int = 500
    gh_nodes: int = 96
    rho2_max: float = 1.0 - 1e-10

    def __post_init__(self):
        if self.name not in NAMES:
            raise AcquisitionError(f"unknown acquisition {self.name!r}; choose from {NAMES}")
        if self.gh_nodes < 2:
            raise AcquisitionError("gh_nodes must be >= 2")
        if not 0.0 < self.rho2_max < 1.0:
            raise AcquisitionError("rho2_max must lie in (0, 1)")
        if self.target_subsample_size < 1:
            raise AcquisitionError("target_subsample_size must be positive")


@dataclass(frozen=True)
class ScoreTable:
    scores: np.ndarray  # (n_units, 2): score for arm 0 and arm 1
    chosen: np.ndarray

    @property
    def max_score(self) -> np.ndarray:
        return self.scores[np.arange(len(self.chosen)), self.chosen]

    def __len__(self):
        return len(self.chosen)


def _check_residual(model: CausalModel, name: str):
    if model.architecture != "TSR":
        raise AcquisitionError(f"{name} needs residual posteriors (TSR), got {model.architecture}")


def _targets_array(targets, d):
    T = np.asarray(targets, dtype=float).reshape(-1, d)
    if len(T) == 0:
        raise AcquisitionError("target set is empty")
    return T


def gaussian_mi(rho2: float, cap: float = 1.0 - 1e-10) -> float:
    """``I = -0.5 log(1 - rho^2)`` for a bivariate Gaussian."""
    return -0.5 * math.log1p(-min(rho2, cap))


def bernoulli_entropy(p: float) -> float:
    h = 0.0
    for v in (p, 1.0 - p):
        if v > 0.0:
            h -= v * math.log(v)
    return h


def gauss_hermite(n: int):
    """Probabilists' normalisation: ``sum w_k g(sqrt(2) z_k) ~= E[g(Z)]``."""
    z, w = np.polynomial.hermite.hermgauss(n)
    return z, w / math.sqrt(math.pi)


def _significant_nodes(w):
    order = np.argsort(w)
    keep = np.ones(len(w), dtype=bool)
    keep[order[np.cumsum(w[order]) <= _GH_DROP_MASS]] = False
    return keep


def policy_information(mu_total, var_tau, cov_y_tau, var_y, nodes: int = 96, cap: float = 1.0 - 1e-10) -> float:
    """Information about ``1{tau > 0}`` carried by one Gaussian observation.

    ``tau ~ N(mu_total, var_tau)`` and ``y`` has variance ``var_y`` and
    covariance ``cov_y_tau`` with ``tau``.  The expectation over ``y`` uses
    ``nodes``-point Gauss-Hermite quadrature.
    """
    if var_y <= 0:
        raise ArithmeticError("predictive variance of the candidate is zero")
    rho2 = min(cov_y_tau**2 / (var_y * var_tau), cap) if var_tau > 0 else 0.0
    sd_post2 = var_tau * (1.0 - rho2)
    if not sd_post2 > 0:
        raise ArithmeticError("conditional effect variance is not positive")
    sd_tau = math.sqrt(var_tau)
    prior = bernoulli_entropy(float(ndtr(mu_total / sd_tau)))
    z, w = gauss_hermite(nodes)
    slope = math.copysign(math.sqrt(rho2 * var_tau), cov_y_tau) * math.sqrt(2.0)
    p = ndtr((mu_total + slope * z) / math.sqrt(sd_post2))
    post = sum(wk * bernoulli_entropy(float(pk)) for wk, pk in zip(w, p))
    return max(prior - post, 0.0)


# ---------------------------------------------------------------------------
# per-candidate route


def score_repig_tau(model: CausalModel, candidate, targets, spec: AcquisitionSpec = AcquisitionSpec()) -> float:
    _check_residual(model, "R-EPIG-tau")
    T = _targets_array(targets, model.data.dim)
    post = estimand_posterior(model, candidate, T, ["tau_delta"])
    vy = post.var("y")
    if vy <= 0:
        raise ArithmeticError("predictive variance of the candidate is zero")
    total = 0.0
    for i in range(len(T)):
        lab = ("tau_delta", i)
        c = post.covariance("y", lab)
        vt = post.var(lab)
        total += gaussian_mi(c * c / (vy * vt), spec.rho2_max) if vt > 0 else 0.0
    return total / len(T)


def score_repig_mu(model: CausalModel, candidate, targets, spec: AcquisitionSpec = AcquisitionSpec()) -> float:
    _check_residual(model, "R-EPIG-mu")
    T = _targets_array(targets, model.data.dim)
    post = estimand_posterior(model, candidate, T, ["delta0", "delta1"])
    vy = post.var("y")
    if vy <= 0:
        raise ArithmeticError("predictive variance of the candidate is zero")
    total = 0.0
    for i in range(len(T)):
        labs = [("delta0", i), ("delta1", i)]
        S = post.marginal(labs).cov + SCHUR_JITTER * np.eye(2)
        c = np.array([post.covariance("y", lab) for lab in labs])
        if np.linalg.det(S) <= 0:
            raise ArithmeticError("target residual covariance is singular")
        q = float(c @ np.linalg.solve(S, c))
        total += gaussian_mi(q / vy, spec.rho2_max)
    return total / len(T)


def score_repig_pi(model: CausalModel, candidate, targets, spec: AcquisitionSpec = AcquisitionSpec()) -> float:
    _check_residual(model, "R-EPIG-pi")
    T = _targets_array(targets, model.data.dim)
    post = estimand_posterior(model, candidate, T, ["tau_delta"])
    offsets = model.offset_tau(T)
    vy = post.var("y")
    total = 0.0
    for i in range(len(T)):
        lab = ("tau_delta", i)
        total += policy_information(
            post.mean[post.index(lab)] + offsets[i],
            post.var(lab),
            post.covariance("y", lab),
            vy,
            spec.gh_nodes,
            spec.rho2_max,
        )
    return total / len(T)


def score_bald_family(model: CausalModel, candidate, variant: str) -> float:
    x, t = candidate
    post = estimand_posterior(model, None, [x], ["mu0", "mu1", "tau"])
    v = {0: post.var(("mu0", 0)), 1: post.var(("mu1", 0))}
    vtau = post.var(("tau", 0))
    v_cf = max(v[1 - t], VAR_FLOOR)
    if variant == "MuBALD":
        return max(v.values())
    if variant == "TauBALD":
        return vtau
    if variant == "RhoBALD":
        return 0.5 * math.log1p(vtau / v_cf)
    if variant == "MuRhoBALD":
        return v[t] * vtau / v_cf
    raise AcquisitionError(f"not a BALD-family criterion: {variant!r}")


def score_covariance_family(model: CausalModel, candidate, targets, variant: str, spec: AcquisitionSpec = AcquisitionSpec()) -> float:
    x, t = candidate
    d = model.data.dim
    if variant == "Leverage":
        return float(model.trial_gp.leverage(np.atleast_1d(x)[None, :].reshape(1, d), [t])[0])
    if variant == "ACE":
        post = estimand_posterior(model, None, [x], ["mu0", "mu1"])
        return abs(post.covariance(("mu0", 0), ("mu1", 0))) / max(post.var((f"mu{t}", 0)), VAR_FLOOR)
    T = _targets_array(targets, d)
    if variant == "ABC3":
        post = estimand_posterior(model, candidate, T, ["tau"])
        vy = post.var("y")
        return sum(post.covariance("y", ("tau", i)) ** 2 for i in range(len(T))) / vy
    if variant == "EPIG":
        post = estimand_posterior(model, candidate, T, ["mu0", "mu1"])
        vy = post.var("y")
        s2 = model.trial_gp.noise_variance
        total = 0.0
        for i in range(len(T)):
            for arm in (0, 1):
                lab = (f"mu{arm}", i)
                c = post.covariance("y", lab)
                total += 0.5 * gaussian_mi(c * c / (vy * (post.var(lab) + s2)), spec.rho2_max)
        return total / len(T)
    raise AcquisitionError(f"not a covariance-family criterion: {variant!r}")


def score_policy_family(model: CausalModel, x, variant: str) -> float:
    post = estimand_posterior(model, None, [x], ["tau"])
    m = float(post.mean[0])
    sd = math.sqrt(max(post.var(("tau", 0)), 0.0))
    return policy_score(m, sd, variant)


def policy_score(mean: float, sd: float, variant: str) -> float:
    if variant not in ("SignBALD", "TypeS"):
        raise AcquisitionError(f"not a policy criterion: {variant!r}")
    if sd <= 0:
        return 0.0
    if variant == "SignBALD":
        p = float(ndtr(mean / sd))
        return p * (1.0 - p)
    return float(ndtr(-abs(mean) / sd))


def score_candidate(model: CausalModel, candidate, targets, spec: AcquisitionSpec) -> float:
    """Dispatch one (x, t) candidate to its per-candidate scoring function."""
    name = spec.name
    if name == "REPIGTau":
        return score_repig_tau(model, candidate, targets, spec)
    if name == "REPIGMu":
        return score_repig_mu(model, candidate, targets, spec)
    if name == "REPIGPi":
        return score_repig_pi(model, candidate, targets, spec)
    if name in ("MuBALD", "TauBALD", "RhoBALD", "MuRhoBALD"):
        return score_bald_family(model, candidate, name)
    if name in ("Leverage", "ABC3", "ACE", "EPIG"):
        return score_covariance_family(model, candidate, targets, name, spec)
    if name in ("SignBALD", "TypeS"):
        return score_policy_family(model, candidate[0], name)
    raise AcquisitionError(f"{name} has no deterministic per-candidate score")


# ---------------------------------------------------------------------------
# vectorised route


class PoolMoments:
    """Posterior moments of the trial GP between a pool and a target set.

    ``cross(t, s)`` is Cov(f(x_c, t), f(x*, s)) with candidates along rows.
    Observation noise only enters candidate variances (``var_y``).
    """

    def __init__(self, model: CausalModel, Xc, Xt=None):
        self.model = model
        self.g = model.trial_gp
        self.Xc = np.asarray(Xc, dtype=float)
        self.Xt = None if Xt is None else np.asarray(Xt, dtype=float)
        self._cross = {}

    @cached_property
    def _Vc(self):
        return [self.g.features(self.Xc, np.full(len(self.Xc), a)) for a in (0, 1)]

    @cached_property
    def _Vt(self):
        return [self.g.features(self.Xt, np.full(len(self.Xt), a)) for a in (0, 1)]

    @cached_property
    def _cand(self):
        B = self.g.coreg.B * self.g.kernel.signal_variance
        if self.g.n:
            V0, V1 = self._Vc
            v0 = B[0, 0] - (V0 * V0).sum(0)
            v1 = B[1, 1] - (V1 * V1).sum(0)
            c01 = B[0, 1] - (V0 * V1).sum(0)
        else:
            m = len(self.Xc)
            v0, v1, c01 = np.full(m, B[0, 0]), np.full(m, B[1, 1]), np.full(m, B[0, 1])
        return np.maximum(v0, VAR_FLOOR), np.maximum(v1, VAR_FLOOR), c01

    @property
    def var_f(self):
        v0, v1, _ = self._cand
        return v0, v1

    @property
    def var_tau(self):
        v0, v1, c01 = self._cand
        return np.maximum(v0 + v1 - 2.0 * c01, VAR_FLOOR)

    @property
    def cov01(self):
        return self._cand[2]

    def var_y(self, t):
        return self.var_f[t] + self.g.noise_variance

    @cached_property
    def _target(self):
        B = self.g.coreg.B * self.g.kernel.signal_variance
        k = len(self.Xt)
        if self.g.n:
            V0, V1 = self._Vt
            v0 = B[0, 0] - (V0 * V0).sum(0)
            v1 = B[1, 1] - (V1 * V1).sum(0)
            c01 = B[0, 1] - (V0 * V1).sum(0)
        else:
            v0, v1, c01 = np.full(k, B[0, 0]), np.full(k, B[1, 1]), np.full(k, B[0, 1])
        return np.maximum(v0, VAR_FLOOR), np.maximum(v1, VAR_FLOOR), c01

    @property
    def target_var_tau(self):
        v0, v1, c01 = self._target
        return np.maximum(v0 + v1 - 2.0 * c01, VAR_FLOOR)

    @cached_property
    def target_mean_tau(self):
        mean, _ = self.g.contrast_moments(self.Xt)
        return mean + self.model.offset_tau(self.Xt)

    @cached_property
    def _kx(self):
        from .gp import input_kernel

        return input_kernel(self.g.kernel, self.g._z(self.Xc), self.g._z(self.Xt))

    def cross(self, t, s):
        key = (t, s)
        if key not in self._cross:
            C = self.g.coreg.B[t, s] * self._kx
            if self.g.n:
                C = C - self._Vc[t].T @ self._Vt[s]
            self._cross[key] = np.ascontiguousarray(C)
        return self._cross[key]

    def cross_tau(self, t):
        return np.ascontiguousarray(self.cross(t, 1) - self.cross(t, 0))


def subsample_targets(targets, size: int, rng) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    if len(targets) <= size:
        return targets
    idx = np.sort(np.random.default_rng(rng).choice(len(targets), size=size, replace=False))
    return targets[idx]


def build_score_table(model: CausalModel, pool, spec: AcquisitionSpec, targets=None, rng=None) -> ScoreTable:
    """Score both arms of every pool unit and pick an arm per unit.

    Arm-dependent criteria take the argmax arm (ties go to arm 0).  For
    arm-free criteria the two scores coincide and the arm is drawn uniformly.
    """
    rng = np.random.default_rng(rng)
    d = model.data.dim
    Xc = np.asarray(pool, dtype=float).reshape(-1, d)
    m = len(Xc)
    if m == 0:
        raise AcquisitionError("candidate pool is empty")
    name = spec.name
    if name in RESIDUAL_CRITERIA:
        _check_residual(model, name)
    Xt = None
    if name in TARGETED:
        if targets is None:
            raise AcquisitionError(f"{name} needs a target set")
        Xt = subsample_targets(_targets_array(targets, d), spec.target_subsample_size, rng)

    if name == "Random":
        # one stream per unit, keyed by position, so tables are order-stable
        seed = int(rng.integers(2**63))
        scores = np.array([np.random.default_rng([seed, i]).random(2) for i in range(m)])
        return _table(scores)

    pm = PoolMoments(model, Xc, Xt)
    cap = spec.rho2_max
    if name in ("MuBALD", "TauBALD", "SignBALD", "TypeS"):
        if name == "MuBALD":
            s = np.maximum(*pm.var_f)
        elif name == "TauBALD":
            s = pm.var_tau
        else:
            mean = model.trial_gp.contrast_moments(Xc)[0] + model.offset_tau(Xc)
            sd = np.sqrt(pm.var_tau)
            z = mean / sd
            s = ndtr(z) * ndtr(-z) if name == "SignBALD" else ndtr(-np.abs(z))
        return _table(np.column_stack([s, s]), rng.integers(0, 2, size=m))

    cols = []
    for t in (0, 1):
        vy = pm.var_y(t)
        if name == "RhoBALD":
            col = 0.5 * np.log1p(pm.var_tau / pm.var_f[1 - t])
        elif name == "MuRhoBALD":
            col = pm.var_f[t] * pm.var_tau / pm.var_f[1 - t]
        elif name == "ACE":
            col = np.abs(pm.cov01) / pm.var_f[t]
        elif name == "Leverage":
            col = model.trial_gp.leverage(Xc, np.full(m, t))
        elif name == "ABC3":
            ct = pm.cross_tau(t)
            col = (ct * ct).sum(1) / vy
        elif name == "EPIG":
            v0, v1, _ = pm._target
            s2 = model.trial_gp.noise_variance
            col = scoring.epig(vy, pm.cross(t, 0), pm.cross(t, 1), v0 + s2, v1 + s2, cap)
        elif name == "REPIGTau":
            col = scoring.repig_tau(vy, pm.cross_tau(t), pm.target_var_tau, cap)
        elif name == "REPIGMu":
            v0, v1, c01 = pm._target
            col = scoring.repig_mu(vy, pm.cross(t, 0), pm.cross(t, 1), v0, v1, c01, SCHUR_JITTER, cap)
        elif name == "REPIGPi":
            z, w = gauss_hermite(spec.gh_nodes)
            keep = _significant_nodes(w)
            col = scoring.repig_pi(
                vy,
                pm.cross_tau(t),
                pm.target_var_tau,
                np.ascontiguousarray(pm.target_mean_tau),
                np.ascontiguousarray(z[keep]),
                np.ascontiguousarray(w[keep]),
                cap,
            )
        else:  # pragma: no cover - NAMES is exhaustive
            raise AcquisitionError(name)
        cols.append(np.asarray(col, dtype=float))
    return _table(np.column_stack(cols))


def _table(scores, chosen=None) -> ScoreTable:
    scores = np.ascontiguousarray(scores, dtype=float)
    if chosen is None:
        chosen = (scores[:, 1] > scores[:, 0]).astype(int)
    return ScoreTable(scores, np.asarray(chosen, dtype=int))
