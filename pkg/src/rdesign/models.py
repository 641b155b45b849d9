"""Benchmark architectures: PureRCT, TSR and Kallus.

``PureRCT`` fits the trial GP to raw experimental outcomes.  ``TSR`` and
``Kallus`` freeze an observational base model ``mu_o(x, t)`` and fit the trial
GP to residuals ``r = y - mu_o(x, t)``; the base enters every posterior as a
deterministic offset.  The two residual architectures share their model and
differ only in which posteriors the acquisition layer is allowed to target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import gp
from .datagen import EXPERIMENTAL, CausalDataset, CausalSample, DataError

ARCHITECTURES = ("PureRCT", "TSR", "Kallus")
ESTIMANDS = ("y", "mu0", "mu1", "tau", "delta0", "delta1", "tau_delta")
_RESIDUAL_ESTIMANDS = {"delta0", "delta1", "tau_delta"}


class ModelInputError(ValueError):
    pass


class BaseModel:
    """Frozen pair of per-arm observational predictors."""

    def __init__(self, mu0: Callable, mu1: Callable, name: str = "base"):
        self._mu0 = mu0
        self._mu1 = mu1
        self.name = name

    def mu(self, X, t) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=int), (len(X),))
        out = np.empty(len(X))
        for arm, f in ((0, self._mu0), (1, self._mu1)):
            m = t == arm
            if m.any():
                out[m] = f(X[m])
        return out

    def tau(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._mu1(X) - self._mu0(X)

    @classmethod
    def zero(cls) -> BaseModel:
        return cls(lambda X: np.zeros(len(X)), lambda X: np.zeros(len(X)), "zero")

    @classmethod
    def from_table(cls, X, mu0, mu1, name: str = "table") -> BaseModel:
        """Nearest-neighbour lookup into precomputed offsets."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mu0 = np.asarray(mu0, dtype=float).copy()
        mu1 = np.asarray(mu1, dtype=float).copy()
        tree = cKDTree(X)

        def lookup(values):
            return lambda Q: values[tree.query(np.atleast_2d(Q), k=1)[1]]

        return cls(lookup(mu0), lookup(mu1), name)

    def save_offsets_csv(self, path, X) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m0, m1 = self.mu(X, 0), self.mu(X, 1)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j}" for j in range(X.shape[1])] + ["mu0", "mu1"])
            for row, a, b in zip(X, m0, m1):
                w.writerow([repr(float(v)) for v in row] + [repr(float(a)), repr(float(b))])


def load_offsets_csv(path) -> BaseModel:
    """Read ``x_0..x_{d-1},mu0,mu1`` offsets produced by an external learner."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty offsets file")
    header = rows[0]
    if header[-2:] != ["mu0", "mu1"] or any(h != f"x_{j}" for j, h in enumerate(header[:-2])):
        raise DataError(f"{path}: header must be x_0,...,x_(d-1),mu0,mu1")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if body.ndim != 2 or body.shape[1] != len(header):
        raise DataError(f"{path}: ragged or empty offsets table")
    return BaseModel.from_table(body[:, :-2], body[:, -2], body[:, -1], name=str(path))


def fit_base(
    obs: CausalDataset,
    learner: str = "gp",
    *,
    rng=None,
    family: str = "RBF",
    restarts: int = 2,
    max_fit_points: int = 800,
    k: int = 10,
) -> BaseModel:
    """Stage-1 T-learner on observational data.

    ``learner="gp"`` fits one single-task GP per arm.  Hyperparameters are
    optimised on at most ``max_fit_points`` rows per arm, then the GP is
    conditioned on every row of that arm.  ``learner="knn"`` averages the
    ``k`` nearest outcomes in the arm.
    """
    rng = np.random.default_rng(rng)
    parts = []
    for arm in (0, 1):
        sub = obs.arm(arm)
        if len(sub) < 2:
            raise ModelInputError(f"observational data needs >= 2 samples in arm {arm}")
        parts.append(sub)
    if learner == "knn":
        preds = []
        for sub in parts:
            tree = cKDTree(sub.X)
            kk = min(k, len(sub))
            yv = sub.y.copy()

            def f(Q, tree=tree, yv=yv, kk=kk):
                _, idx = tree.query(np.atleast_2d(Q), k=kk)
                return yv[np.asarray(idx).reshape(len(Q), kk)].mean(1)

            preds.append(f)
        return BaseModel(preds[0], preds[1], "knn")
    if learner != "gp":
        raise ModelInputError(f"unknown base learner {learner!r}")
    preds = []
    for sub in parts:
        n = len(sub)
        idx = rng.choice(n, size=min(n, max_fit_points), replace=False)
        zeros = np.zeros(len(idx), dtype=int)
        hyp = gp.fit(sub.X[idx], zeros, sub.y[idx], learn_coreg=False, family=family, restarts=restarts, rng=rng)
        full = hyp.condition(sub.X, np.zeros(n, dtype=int), sub.y)
        preds.append(lambda Q, m=full: m.latent_mean(Q, 0))
    return BaseModel(preds[0], preds[1], "gp")


def residualize(sample, base: BaseModel) -> float:
    """``y - mu_o(x, t)`` for one experimental sample."""
    if sample.s != EXPERIMENTAL:
        raise ModelInputError("only experimental samples are residualised")
    return float(sample.y - base.mu(np.atleast_1d(sample.x)[None, :], [sample.t])[0])


@dataclass(frozen=True)
class ModelSettings:
    family: str = "RBF"
    restarts: int = 5
    freeze_hypers: bool = False
    maxiter: int = 200


@dataclass(frozen=True)
class CausalModel:
    architecture: str
    base: BaseModel | None
    trial_gp: gp.GPModel
    data: CausalDataset
    settings: ModelSettings = field(default_factory=ModelSettings)

    @property
    def residual(self) -> bool:
        return self.architecture != "PureRCT"

    def trial_targets(self, data: CausalDataset) -> np.ndarray:
        if not self.residual or len(data) == 0:
            return data.y.copy()
        return data.y - self.base.mu(data.X, data.t)

    def offset(self, X, t) -> np.ndarray:
        if not self.residual:
            return np.zeros(len(np.atleast_2d(X)))
        return self.base.mu(X, t)

    def offset_tau(self, X) -> np.ndarray:
        if not self.residual:
            return np.zeros(len(np.atleast_2d(X)))
        return self.base.tau(X)


def make_model(
    architecture: str,
    dim: int,
    base: BaseModel | None = None,
    settings: ModelSettings = ModelSettings(),
) -> CausalModel:
    if architecture not in ARCHITECTURES:
        raise ModelInputError(f"unknown architecture {architecture!r}")
    if architecture == "PureRCT":
        base = None
    elif base is None:
        raise ModelInputError(f"{architecture} needs a frozen base model")
    prior = gp.GPModel(
        gp.KernelSpec(settings.family, (1.0,) * dim),
        gp.CoregionalizationSpec(np.array([[1.0, 0.5], [0.5, 1.0]])),
        0.1,
    )
    return CausalModel(architecture, base, prior, CausalDataset.empty(dim), settings)


def update(model: CausalModel, new_samples, rng=None) -> CausalModel:
    """Append experimental samples and refit the trial GP on all of them."""
    if not isinstance(new_samples, CausalDataset):
        new_samples = CausalDataset.from_samples(new_samples, model.data.dim)
    if len(new_samples) == 0:
        return model
    if np.any(new_samples.s != EXPERIMENTAL):
        raise ModelInputError("update accepts experimental samples only")
    data = model.data.concat(new_samples)
    targets = model.trial_targets(data)
    prev = model.trial_gp
    st = model.settings
    if st.freeze_hypers:
        trial = prev.condition(data.X, data.t, targets)
    else:
        init = _rescaled_init(prev, data.X) if prev.n else None
        trial = gp.fit(
            data.X,
            data.t,
            targets,
            family=st.family,
            restarts=st.restarts,
            rng=rng,
            init=init,
            maxiter=st.maxiter,
        )
    return replace(model, trial_gp=trial, data=data)


def _rescaled_init(prev: gp.GPModel, X) -> gp.GPModel:
    """Express the previous optimum in the input scaling the next fit will use."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) < 2:
        return prev
    scale = X.std(0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    ls = np.asarray(prev.kernel.lengthscales) * prev.x_scale / scale
    kern = replace(prev.kernel, lengthscales=tuple(np.clip(ls, 1e-2, 1e3)))
    return prev.with_hyperparameters(kernel=kern, x_shift=X.mean(0), x_scale=scale)


def _as_point(x, d: int) -> tuple:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ModelInputError(f"expected {d} covariates, got shape {x.shape}")
    return tuple(x)


def estimand_posterior(
    model: CausalModel,
    candidate: tuple | None,
    targets: Sequence,
    wanted: Sequence[str],
) -> gp.JointGaussian:
    """Joint Gaussian over the candidate outcome and target estimands.

    Labels are ``"y"`` for the candidate observation and ``(name, i)`` for
    estimand ``name`` at ``targets[i]``.
    """
    wanted = list(wanted)
    bad = [w for w in wanted if w not in ESTIMANDS or w == "y"]
    if bad:
        raise ModelInputError(f"unknown estimands {bad}")
    if not model.residual and _RESIDUAL_ESTIMANDS & set(wanted):
        raise ModelInputError("PureRCT has no residual process to query")
    d = model.data.dim
    queries, labels, offsets = [], [], []
    if candidate is not None:
        x, t = candidate
        xc = _as_point(x, d)
        queries.append(gp.Noisy(xc, int(t)))
        labels.append("y")
        offsets.append(float(model.offset(np.array([xc]), [int(t)])[0]))
    for i, xs in enumerate(targets):
        xs = _as_point(xs, d)
        P = np.array([xs])
        for w in wanted:
            if w in ("mu0", "delta0", "mu1", "delta1"):
                arm = int(w[-1])
                queries.append(gp.Latent(xs, arm))
                offsets.append(float(model.offset(P, [arm])[0]) if w.startswith("mu") else 0.0)
            else:
                queries.append(gp.Contrast(xs))
                offsets.append(float(model.offset_tau(P)[0]) if w == "tau" else 0.0)
            labels.append((w, i))
    if not queries:
        raise ModelInputError("nothing to compute: no candidate and no targets")
    post = model.trial_gp.posterior(queries, labels)
    return gp.JointGaussian(post.labels, post.mean + np.asarray(offsets), post.cov)


def predict_cate(model: CausalModel, X):
    """Posterior mean and variance of tau at each row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.data.dim:
        X = X.reshape(-1, model.data.dim)
    mean, var = model.trial_gp.contrast_moments(X)
    return mean + model.offset_tau(X), var
