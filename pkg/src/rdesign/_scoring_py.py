"""Pure-numpy scoring reductions; reference fallback for the compiled core.

Every function reduces a (candidates x targets) block to one score per
candidate by averaging a per-pair mutual information over the targets.
"""

import numpy as np
from scipy.special import ndtr

_PI_CHUNK = 16


def _gauss_mi(rho2, cap):
    return -0.5 * np.log1p(-np.minimum(rho2, cap))


def repig_tau(var_y, cov, var_t, cap):
    rho2 = cov * cov / (var_y[:, None] * var_t[None, :])
    return _gauss_mi(rho2, cap).mean(1)


def repig_mu(var_y, c0, c1, v0, v1, c01, jitter, cap):
    a = v0 + jitter
    b = v1 + jitter
    det = np.maximum(a * b - c01 * c01, 1e-300)
    q = (c0 * c0 * b[None, :] - 2.0 * c0 * c1 * c01[None, :] + c1 * c1 * a[None, :]) / det[None, :]
    return _gauss_mi(q / var_y[:, None], cap).mean(1)


def epig(var_y, c0, c1, vy0, vy1, cap):
    r0 = c0 * c0 / (var_y[:, None] * vy0[None, :])
    r1 = c1 * c1 / (var_y[:, None] * vy1[None, :])
    return (0.5 * (_gauss_mi(r0, cap) + _gauss_mi(r1, cap))).mean(1)


def _bern_entropy_of_probit(a):
    q = ndtr(-np.abs(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -q * np.log(q) - (1.0 - q) * np.log1p(-q)
    return np.where(q > 0, h, 0.0)


def repig_pi(var_y, cov, var_t, mean_t, nodes, weights, cap):
    """Policy-sign information via Gauss-Hermite quadrature.

    ``weights`` must already include the 1/sqrt(pi) factor.
    """
    m, k = cov.shape
    sd_t = np.sqrt(var_t)
    prior = _bern_entropy_of_probit(mean_t / sd_t)
    out = np.empty(m)
    for lo in range(0, m, _PI_CHUNK):
        hi = min(lo + _PI_CHUNK, m)
        c = cov[lo:hi]
        sy = np.sqrt(var_y[lo:hi])[:, None]
        rho2 = np.minimum(c * c / (sy * sy * var_t[None, :]), cap)
        sd_post = np.sqrt(var_t[None, :] * (1.0 - rho2))
        # clamp the slope consistently with the capped correlation
        slope = np.sign(c) * np.sqrt(rho2 * var_t[None, :]) * np.sqrt(2.0)
        arg = (mean_t[None, :, None] + slope[:, :, None] * nodes) / sd_post[:, :, None]
        post = (_bern_entropy_of_probit(arg) * weights).sum(-1)
        out[lo:hi] = np.maximum(prior[None, :] - post, 0.0).mean(1)
    return out
