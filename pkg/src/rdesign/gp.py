"""Exact Gaussian-process regression over the augmented space X x {0, 1}.

A point is a pair ``(x, t)`` with ``x`` a covariate vector and ``t`` a
treatment arm.  The covariance between two points factorises as

    k((x, t), (x', t')) = B[t, t'] * k_x(x, x')

where ``B`` is a 2x2 coregionalization matrix and ``k_x`` a stationary ARD
kernel.  A single-task GP is the special case ``B = ones((2, 2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

FAMILIES = ("RBF", "Matern32", "Matern52", "RationalQuadratic")
NOISE_FLOOR = 1e-6
_JITTER_START = 1e-8
_JITTER_MAX = 1e-2
_LOG_2PI = math.log(2.0 * math.pi)


class GPInputError(ValueError):
    """Raised on malformed inputs (shapes, non-finite values, bad queries)."""


class GPNumericalError(ArithmeticError):
    """Raised when the kernel matrix cannot be factorised."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = "RBF"
    lengthscales: tuple[float, ...] = (1.0,)
    signal_variance: float = 1.0
    rq_alpha: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise GPInputError(f"unknown kernel family {self.family!r}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not ls or min(ls) <= 0 or not all(map(math.isfinite, ls)):
            raise GPInputError("lengthscales must be positive and finite")
        if not self.signal_variance > 0:
            raise GPInputError("signal_variance must be positive")
        if not self.rq_alpha > 0:
            raise GPInputError("rq_alpha must be positive")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


@dataclass(frozen=True)
class CoregionalizationSpec:
    """2x2 task covariance over the treatment arms."""

    B: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.shape != (2, 2):
            raise GPInputError("task matrix must be 2x2")
        if abs(B[0, 1] - B[1, 0]) > 1e-12 * max(1.0, abs(B).max()):
            raise GPInputError("task matrix must be symmetric")
        B = 0.5 * (B + B.T)
        if np.linalg.eigvalsh(B).min() < -1e-10 * max(1.0, abs(B).max()):
            raise GPInputError("task matrix must be positive semi-definite")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @classmethod
    def identity(cls) -> CoregionalizationSpec:
        return cls(np.eye(2))

    @classmethod
    def shared(cls) -> CoregionalizationSpec:
        """All-ones matrix: both arms share one latent function."""
        return cls(np.ones((2, 2)))

    @classmethod
    def from_factors(cls, lower: Sequence[float], kappa: Sequence[float]):
        """``B = L L^T + diag(kappa)`` with ``L = [[a, 0], [b, c]]``."""
        a, b, c = lower
        L = np.array([[a, 0.0], [b, c]])
        return cls(L @ L.T + np.diag(np.asarray(kappa, dtype=float)))


# ---------------------------------------------------------------------------
# stationary kernels as functions of the scaled squared distance r2


def _k_of_r2(family: str, r2: np.ndarray, alpha: float) -> np.ndarray:
    if family == "RBF":
        return np.exp(-0.5 * r2)
    if family == "RationalQuadratic":
        return (1.0 + r2 / (2.0 * alpha)) ** (-alpha)
    r = np.sqrt(np.maximum(r2, 0.0))
    if family == "Matern32":
        s = math.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    s = math.sqrt(5.0) * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _dk_dr2(family: str, r2: np.ndarray, k: np.ndarray, alpha: float) -> np.ndarray:
    """Derivative of the unit-variance kernel with respect to r2."""
    if family == "RBF":
        return -0.5 * k
    if family == "RationalQuadratic":
        return -0.5 * (1.0 + r2 / (2.0 * alpha)) ** (-alpha - 1.0)
    r = np.sqrt(np.maximum(r2, 0.0))
    if family == "Matern32":
        return -1.5 * np.exp(-math.sqrt(3.0) * r)
    s = math.sqrt(5.0) * r
    return -(5.0 / 6.0) * (1.0 + s) * np.exp(-s)


def _scaled_sqdist(Xa: np.ndarray, Xb: np.ndarray, ls: np.ndarray) -> np.ndarray:
    A = Xa / ls
    Bm = Xb / ls
    r2 = (A * A).sum(1)[:, None] + (Bm * Bm).sum(1)[None, :] - 2.0 * A @ Bm.T
    return np.maximum(r2, 0.0)


def input_kernel(spec: KernelSpec, Xa, Xb) -> np.ndarray:
    """Covariate-only kernel matrix ``k_x(Xa, Xb)`` including signal variance."""
    Xa = _as_2d(Xa, spec.dim)
    Xb = _as_2d(Xb, spec.dim)
    r2 = _scaled_sqdist(Xa, Xb, np.asarray(spec.lengthscales))
    return spec.signal_variance * _k_of_r2(spec.family, r2, spec.rq_alpha)


def kernel_matrix(spec: KernelSpec, coreg: CoregionalizationSpec, Xa, ta, Xb, tb):
    ta = np.asarray(ta, dtype=int)
    tb = np.asarray(tb, dtype=int)
    return coreg.B[np.ix_(ta, tb)] * input_kernel(spec, Xa, Xb)


def kernel_eval(spec: KernelSpec, coreg: CoregionalizationSpec, a, b) -> float:
    """Covariance between two augmented points ``a = (x, t)`` and ``b``."""
    (xa, ta), (xb, tb) = a, b
    xa = np.atleast_1d(np.asarray(xa, dtype=float))
    xb = np.atleast_1d(np.asarray(xb, dtype=float))
    if xa.shape != (spec.dim,) or xb.shape != (spec.dim,):
        raise GPInputError(
            f"covariate dimension mismatch: kernel has {spec.dim} lengthscales"
        )
    return float(kernel_matrix(spec, coreg, xa[None], [ta], xb[None], [tb])[0, 0])


def _as_2d(X, d: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d in (None, 1) else X[None, :]
    if X.ndim != 2 or (d is not None and X.shape[1] != d):
        raise GPInputError(f"expected covariates of dimension {d}, got {X.shape}")
    return X


# ---------------------------------------------------------------------------
# queries and joint Gaussians


class Latent(NamedTuple):
    """Noise-free latent value f(x, t)."""

    x: tuple
    t: int


class Noisy(NamedTuple):
    """Noisy observation y = f(x, t) + eps."""

    x: tuple
    t: int


class Contrast(NamedTuple):
    """Arm contrast f(x, 1) - f(x, 0)."""

    x: tuple


@dataclass(frozen=True)
class JointGaussian:
    labels: tuple
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        k = len(self.labels)
        if mean.shape != (k,) or cov.shape != (k, k):
            raise GPInputError("mean, cov and labels disagree in size")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def index(self, label) -> int:
        return self.labels.index(label)

    def var(self, label) -> float:
        i = self.index(label)
        return float(self.cov[i, i])

    def covariance(self, a, b) -> float:
        return float(self.cov[self.index(a), self.index(b)])

    def marginal(self, labels) -> JointGaussian:
        idx = [self.index(lab) for lab in labels]
        return JointGaussian(tuple(labels), self.mean[idx], self.cov[np.ix_(idx, idx)])

    def linear_map(self, A, labels, offset=None) -> JointGaussian:
        """Distribution of ``A z + offset`` for ``z`` with this law."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        mean = A @ self.mean
        if offset is not None:
            mean = mean + np.asarray(offset, dtype=float)
        cov = A @ self.cov @ A.T
        return JointGaussian(tuple(labels), mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# the model


def _cholesky_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        return sla.cholesky(K, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    base = max(np.trace(K) / K.shape[0], 1e-300)
    rel = _JITTER_START
    while rel <= _JITTER_MAX * (1 + 1e-9):
        jitter = rel * base
        try:
            L = sla.cholesky(
                K + jitter * np.eye(K.shape[0]), lower=True, check_finite=False
            )
            return L, jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise GPNumericalError("kernel matrix not positive definite after max jitter")


class GPModel:
    """Conditioned GP with fixed hyperparameters.

    Covariates are mapped through ``(x - x_shift) / x_scale`` before the kernel
    is applied and targets are modelled as ``mean_offset + f``.  Instances are
    treated as immutable: ``condition`` returns a new model.
    """

    def __init__(
        self,
        kernel: KernelSpec,
        coreg: CoregionalizationSpec | None = None,
        noise_variance: float = 1.0,
        X=None,
        t=None,
        y=None,
        *,
        x_shift=None,
        x_scale=None,
        mean_offset: float = 0.0,
    ):
        if not noise_variance >= 0 or not math.isfinite(noise_variance):
            raise GPInputError("noise_variance must be a finite non-negative real")
        d = kernel.dim
        self.kernel = kernel
        self.coreg = coreg if coreg is not None else CoregionalizationSpec.identity()
        self.noise_variance = float(noise_variance)
        self.x_shift = np.zeros(d) if x_shift is None else np.asarray(x_shift, float)
        self.x_scale = np.ones(d) if x_scale is None else np.asarray(x_scale, float)
        self.mean_offset = float(mean_offset)
        if X is None or len(np.asarray(X)) == 0:
            self.X = np.zeros((0, d))
            self.t = np.zeros(0, dtype=int)
            self.y = np.zeros(0)
        else:
            self.X = _as_2d(X, d).copy()
            self.t = np.asarray(t, dtype=int).reshape(-1).copy()
            self.y = np.asarray(y, dtype=float).reshape(-1).copy()
            if not (len(self.X) == len(self.t) == len(self.y)):
                raise GPInputError("X, t and y must have the same length")
            if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.X)):
                raise GPInputError("training data must be finite")
            if not np.isin(self.t, (0, 1)).all():
                raise GPInputError("treatment arms must be 0 or 1")
        for arr in (self.X, self.t, self.y):
            arr.setflags(write=False)
        self._factorize()

    # -- construction helpers -------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.y)

    def _z(self, X) -> np.ndarray:
        return (_as_2d(X, self.kernel.dim) - self.x_shift) / self.x_scale

    def _k(self, Xa, ta, Xb, tb) -> np.ndarray:
        return kernel_matrix(self.kernel, self.coreg, self._z(Xa), ta, self._z(Xb), tb)

    def _factorize(self):
        self.jitter = 0.0
        if self.n == 0:
            self._L = np.zeros((0, 0))
            self._alpha = np.zeros(0)
            return
        K = self._k(self.X, self.t, self.X, self.t)
        K[np.diag_indices_from(K)] += self.noise_variance
        self._L, self.jitter = _cholesky_with_jitter(K)
        self._alpha = sla.cho_solve((self._L, True), self.y - self.mean_offset)

    def with_hyperparameters(self, **changes) -> GPModel:
        kw = dict(
            kernel=self.kernel,
            coreg=self.coreg,
            noise_variance=self.noise_variance,
            x_shift=self.x_shift,
            x_scale=self.x_scale,
            mean_offset=self.mean_offset,
        )
        kw.update(changes)
        return GPModel(X=self.X, t=self.t, y=self.y, **kw)

    def condition(self, X, t, y, *, recenter: bool = False) -> GPModel:
        """Same hyperparameters, new training set."""
        y = np.asarray(y, dtype=float).reshape(-1)
        offset = float(y.mean()) if recenter and len(y) else self.mean_offset
        return GPModel(
            self.kernel,
            self.coreg,
            self.noise_variance,
            X,
            t,
            y,
            x_shift=self.x_shift,
            x_scale=self.x_scale,
            mean_offset=offset,
        )

    # -- inference ------------------------------------------------------------

    def _solve_lower(self, Kq: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self._L, Kq, lower=True, check_finite=False)

    def latent_mean(self, X, t):
        """Posterior mean of f at each (x, t) row, skipping the variance solve."""
        X = _as_2d(X, self.kernel.dim)
        t = np.broadcast_to(np.asarray(t, dtype=int), (len(X),))
        if self.n == 0:
            return np.full(len(X), self.mean_offset)
        return self.mean_offset + self._k(self.X, self.t, X, t).T @ self._alpha

    def latent_moments(self, X, t):
        """Mean and variance of f at each (x, t) row (vectorised marginals)."""
        X = _as_2d(X, self.kernel.dim)
        t = np.broadcast_to(np.asarray(t, dtype=int), (len(X),))
        prior = self.coreg.B[t, t] * self.kernel.signal_variance
        if self.n == 0:
            return np.full(len(X), self.mean_offset), prior.copy()
        Kq = self._k(self.X, self.t, X, t)
        V = self._solve_lower(Kq)
        mean = self.mean_offset + Kq.T @ self._alpha
        var = prior - (V * V).sum(0)
        return mean, var

    def contrast_moments(self, X):
        """Mean and variance of f(x, 1) - f(x, 0) at each row of X."""
        X = _as_2d(X, self.kernel.dim)
        B = self.coreg.B
        prior = (B[0, 0] + B[1, 1] - 2.0 * B[0, 1]) * self.kernel.signal_variance
        if self.n == 0:
            return np.zeros(len(X)), np.full(len(X), prior)
        ones = np.ones(len(X), dtype=int)
        Kc = self._k(self.X, self.t, X, ones) - self._k(self.X, self.t, X, 0 * ones)
        V = self._solve_lower(Kc)
        return Kc.T @ self._alpha, prior - (V * V).sum(0)

    def features(self, X, t) -> np.ndarray:
        """Whitened cross-covariance ``L^-1 K(train, q)``; shape (n, m)."""
        Kq = self._k(self.X, self.t, X, t)
        if self.n == 0:
            return Kq
        return self._solve_lower(Kq)

    def latent_cross_cov(self, Xa, ta, Xb, tb, Va=None, Vb=None) -> np.ndarray:
        """Posterior covariance matrix between latents at two point sets."""
        K = self._k(Xa, ta, Xb, tb)
        if self.n == 0:
            return K
        Va = self.features(Xa, ta) if Va is None else Va
        Vb = self.features(Xb, tb) if Vb is None else Vb
        return K - Va.T @ Vb

    def posterior(self, queries: Sequence, labels: Sequence | None = None) -> JointGaussian:
        """Exact joint posterior over a mix of Latent/Noisy/Contrast queries."""
        if len(queries) == 0:
            raise GPInputError("empty query list")
        pts_x, pts_t, rows, noisy = [], [], [], []
        slot = {}

        def point(x, t):
            key = (tuple(np.atleast_1d(np.asarray(x, dtype=float))), int(t))
            if key not in slot:
                slot[key] = len(pts_x)
                pts_x.append(key[0])
                pts_t.append(key[1])
            return slot[key]

        for q in queries:
            if isinstance(q, Contrast):
                rows.append(((point(q.x, 1), 1.0), (point(q.x, 0), -1.0)))
                noisy.append(False)
            elif isinstance(q, (Latent, Noisy)):
                if q.t not in (0, 1):
                    raise GPInputError("treatment arm must be 0 or 1")
                rows.append(((point(q.x, q.t), 1.0),))
                noisy.append(isinstance(q, Noisy))
            else:
                raise GPInputError(f"unsupported query {q!r}")
        Xq = _as_2d(np.array(pts_x), self.kernel.dim)
        tq = np.array(pts_t, dtype=int)
        Kqq = self._k(Xq, tq, Xq, tq)
        if self.n:
            Kq = self._k(self.X, self.t, Xq, tq)
            V = self._solve_lower(Kq)
            mean = self.mean_offset + Kq.T @ self._alpha
            cov = Kqq - V.T @ V
        else:
            mean = np.full(len(tq), self.mean_offset)
            cov = Kqq
        A = np.zeros((len(queries), len(tq)))
        for i, row in enumerate(rows):
            for j, coef in row:
                A[i, j] += coef
        out_mean = A @ mean
        out_cov = A @ cov @ A.T
        out_cov = 0.5 * (out_cov + out_cov.T)
        out_cov[np.diag_indices_from(out_cov)] += np.where(noisy, self.noise_variance, 0.0)
        if labels is None:
            labels = tuple(queries)
        return JointGaussian(tuple(labels), out_mean, out_cov)

    def log_marginal_likelihood(self) -> float:
        if self.n == 0:
            return 0.0
        r = self.y - self.mean_offset
        quad = float(r @ self._alpha)
        logdet = 2.0 * float(np.log(np.diag(self._L)).sum())
        return -0.5 * quad - 0.5 * logdet - 0.5 * self.n * _LOG_2PI

    def leverage(self, X, t) -> np.ndarray:
        """Hat-matrix diagonal ``[K (K + s2 I)^-1 K]_qq`` with the query appended.

        By the Schur complement this is ``k_qq - s2 + s2**2 / V[y_q]``.
        """
        X = _as_2d(X, self.kernel.dim)
        t = np.broadcast_to(np.asarray(t, dtype=int), (len(X),))
        prior = self.coreg.B[t, t] * self.kernel.signal_variance
        _, var = self.latent_moments(X, t)
        s2 = self.noise_variance
        return prior - s2 + s2 * s2 / (var + s2)


# ---------------------------------------------------------------------------
# hyperparameter fitting


class _Codec:
    """Packs hyperparameters into the unconstrained optimisation vector.

    Layout: log lengthscales (d), then either log signal variance (single
    task) or the coregionalization factors a, b, c, log kappa0, log kappa1,
    then log noise variance.
    """

    def __init__(self, d: int, learn_coreg: bool, scale: float):
        self.d = d
        self.learn_coreg = learn_coreg
        self.scale = scale

    def bounds(self):
        s = self.scale
        b = [(math.log(1e-2), math.log(1e3))] * self.d
        if self.learn_coreg:
            amp = 10.0 * math.sqrt(s)
            b += [(-amp, amp)] * 3
            b += [(math.log(1e-8 * s), math.log(10.0 * s))] * 2
        else:
            b += [(math.log(1e-6 * s), math.log(1e2 * s))]
        b += [(math.log(NOISE_FLOOR), math.log(max(10.0 * s, 1e-5)))]
        return b

    def decode(self, theta, family: str, alpha: float):
        d = self.d
        ls = np.exp(theta[:d])
        if self.learn_coreg:
            a, b, c = theta[d : d + 3]
            kappa = np.exp(theta[d + 3 : d + 5])
            coreg = CoregionalizationSpec.from_factors((a, b, c), kappa)
            kern = KernelSpec(family, tuple(ls), 1.0, alpha)
        else:
            coreg = CoregionalizationSpec.shared()
            kern = KernelSpec(family, tuple(ls), float(np.exp(theta[d])), alpha)
        return kern, coreg, float(np.exp(theta[-1]))

    def encode(self, kern: KernelSpec, coreg: CoregionalizationSpec, noise: float):
        head = list(np.log(kern.lengthscales))
        if self.learn_coreg:
            B = coreg.B * kern.signal_variance
            kappa = np.maximum(0.05 * np.diag(B), 1e-8 * self.scale)
            M = B - np.diag(kappa)
            w, U = np.linalg.eigh(M)
            M = (U * np.maximum(w, 0.0)) @ U.T + 1e-12 * np.eye(2)
            L = np.linalg.cholesky(M)
            head += [L[0, 0], L[1, 0], L[1, 1]] + list(np.log(kappa))
        else:
            head += [math.log(kern.signal_variance * coreg.B[0, 0])]
        theta = np.array(head + [math.log(max(noise, NOISE_FLOOR))])
        lo, hi = np.array(self.bounds()).T
        return np.clip(theta, lo, hi)

    def random_start(self, rng: np.random.Generator):
        s = self.scale
        logu = lambda lo, hi: math.log(lo) + rng.random() * (math.log(hi) - math.log(lo))
        theta = [logu(0.1, 10.0) for _ in range(self.d)]
        if self.learn_coreg:
            v = math.exp(logu(0.1 * s, 10.0 * s))
            rho = rng.uniform(-0.9, 0.9)
            a = math.sqrt(v)
            theta += [a, rho * a, a * math.sqrt(1 - rho * rho)]
            theta += [logu(0.01 * s, 1.0 * s) for _ in range(2)]
        else:
            theta += [logu(0.1 * s, 10.0 * s)]
        theta += [logu(0.01 * s, 1.0 * s)]
        lo, hi = np.array(self.bounds()).T
        return np.clip(np.array(theta), lo, hi)


def _neg_lml_and_grad(theta, codec: _Codec, Z, t, r, D, family, alpha):
    d = codec.d
    n = len(r)
    inv_ls2 = np.exp(-2.0 * theta[:d])
    r2 = np.tensordot(inv_ls2, D, axes=1)
    kx = _k_of_r2(family, r2, alpha)
    if codec.learn_coreg:
        a, b, c = theta[d : d + 3]
        kappa = np.exp(theta[d + 3 : d + 5])
        L2 = np.array([[a, 0.0], [b, c]])
        B = L2 @ L2.T + np.diag(kappa)
        sig = 1.0
    else:
        B = np.ones((2, 2))
        sig = math.exp(theta[d])
    noise = math.exp(theta[-1])
    Bf = B[np.ix_(t, t)]
    K = sig * Bf * kx
    K[np.diag_indices(n)] += noise
    try:
        L, _ = _cholesky_with_jitter(K)
    except GPNumericalError:
        return 1e25, np.zeros_like(theta)
    alpha_v = sla.cho_solve((L, True), r, check_finite=False)
    nll = 0.5 * r @ alpha_v + np.log(np.diag(L)).sum() + 0.5 * n * _LOG_2PI
    Kinv, info = sla.lapack.dpotri(L, lower=1)
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha_v, alpha_v) - Kinv  # dlml = 0.5 * sum(W * dK)
    grad = np.empty_like(theta)
    dk = _dk_dr2(family, r2, kx, alpha) * (sig * Bf)
    WK = W * dk
    grad[:d] = -inv_ls2 * (D.reshape(d, -1) @ WK.ravel())
    Wk = W * kx
    if codec.learn_coreg:
        # contract W * kx over task blocks: G[p, q] = sum over t_i = p, t_j = q
        G = np.zeros((2, 2))
        for p in (0, 1):
            mp = t == p
            for q in (0, 1):
                G[p, q] = Wk[np.ix_(mp, t == q)].sum()
        dBa = np.array([[2 * a, b], [b, 0.0]])
        dBb = np.array([[0.0, a], [a, 2 * b]])
        dBc = np.array([[0.0, 0.0], [0.0, 2 * c]])
        grad[d] = 0.5 * (G * dBa).sum()
        grad[d + 1] = 0.5 * (G * dBb).sum()
        grad[d + 2] = 0.5 * (G * dBc).sum()
        grad[d + 3] = 0.5 * G[0, 0] * kappa[0]
        grad[d + 4] = 0.5 * G[1, 1] * kappa[1]
    else:
        grad[d] = 0.5 * (Wk * Bf).sum() * sig
    grad[-1] = 0.5 * np.trace(W) * noise
    return float(nll), -grad


# a nat-scale optimum is plenty for hyperparameters
_LBFGS_TOL = {"ftol": 1e-8, "gtol": 1e-4}


def fit(
    X,
    t,
    y,
    *,
    family: str = "RBF",
    learn_coreg: bool = True,
    restarts: int = 5,
    rng: np.random.Generator | int | None = None,
    init: GPModel | None = None,
    standardize: bool = True,
    rq_alpha: float = 1.0,
    maxiter: int = 200,
) -> GPModel:
    """Fit hyperparameters by maximising the log marginal likelihood.

    Multi-start L-BFGS on log-parameters with analytic gradients.  When
    ``init`` is given its hyperparameters seed the first start; the remaining
    starts are drawn log-uniformly around the data scale.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    t = np.asarray(t, dtype=int).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = X.shape
    if n < 1:
        raise GPInputError("need at least one training point")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise GPInputError("training data must be finite")
    rng = np.random.default_rng(rng)

    if init is not None:
        shift, scale = init.x_shift, init.x_scale
    elif standardize and n > 1:
        shift = X.mean(0)
        scale = X.std(0)
        scale = np.where(scale > 1e-12, scale, 1.0)
    else:
        shift, scale = np.zeros(d), np.ones(d)
    offset = float(y.mean())
    r = y - offset
    var_y = float(r.var())
    data_scale = var_y if var_y > 1e-12 else 1.0
    Z = (X - shift) / scale
    D = (Z[:, None, :] - Z[None, :, :]) ** 2
    D = np.moveaxis(D, 2, 0)
    codec = _Codec(d, learn_coreg, data_scale)
    bounds = codec.bounds()

    starts = []
    if init is not None:
        starts.append(codec.encode(init.kernel, init.coreg, init.noise_variance))
    else:
        starts.append(codec.encode(*_default_hypers(d, family, rq_alpha, data_scale, learn_coreg)))
    while len(starts) < max(restarts, 1):
        starts.append(codec.random_start(rng))

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        res = minimize(
            _neg_lml_and_grad,
            theta0,
            args=(codec, Z, t, r, D, family, rq_alpha),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter, **_LBFGS_TOL},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    if best_theta is None:
        raise GPNumericalError("hyperparameter optimisation failed at every start")
    kern, coreg, noise = codec.decode(best_theta, family, rq_alpha)
    return GPModel(
        kern,
        coreg,
        max(noise, NOISE_FLOOR),
        X,
        t,
        y,
        x_shift=shift,
        x_scale=scale,
        mean_offset=offset,
    )


def _default_hypers(d, family, alpha, scale, learn_coreg):
    kern = KernelSpec(family, (1.0,) * d, 1.0 if learn_coreg else scale, alpha)
    coreg = (
        CoregionalizationSpec(np.array([[1.0, 0.5], [0.5, 1.0]]) * scale)
        if learn_coreg
        else CoregionalizationSpec.shared()
    )
    return kern, coreg, 0.1 * scale


def log_marginal_likelihood(model: GPModel) -> float:
    return model.log_marginal_likelihood()
