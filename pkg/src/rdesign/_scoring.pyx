# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring reductions; same contracts as ``_scoring_py``."""

import numpy as np
from libc.math cimport log1p, sqrt, fabs

cdef double SQRT2 = 1.4142135623730951
cdef double INV_SQRT2 = 0.7071067811865476
# pairs whose information is provably below this are skipped
cdef double NEGLIGIBLE = 1e-15


cdef inline double gauss_mi(double rho2, double cap) nogil:
    if rho2 > cap:
        rho2 = cap
    return -0.5 * log1p(-rho2)


# h(a), the binary entropy of Phi(a), is even and smooth.  It is tabulated
# with its derivative on [0, A_MAX] and evaluated by cubic Hermite
# interpolation; the error is below 1e-13 at this spacing.  Beyond A_MAX,
# h < 1e-17.
cdef double A_MAX = 9.0
cdef int PER_UNIT = 512
cdef double STEP = 1.0 / 512


def _entropy_table():
    from scipy.special import ndtr
    a = np.arange(int(A_MAX * PER_UNIT) + 2) * STEP
    q = ndtr(-a)
    h = -q * np.log(q) - (1.0 - q) * np.log1p(-q)
    # dh/da = phi(a) log(q / p) for a >= 0
    dh = np.exp(-0.5 * a * a) / np.sqrt(2 * np.pi) * (np.log(q) - np.log1p(-q))
    return np.ascontiguousarray(h), np.ascontiguousarray(dh * STEP)


_H_np, _D_np = _entropy_table()
cdef double[::1] _H = _H_np
cdef double[::1] _D = _D_np


cdef inline double probit_entropy(double a) nogil:
    cdef double x = fabs(a) * PER_UNIT
    cdef Py_ssize_t k
    cdef double t, t2, t3
    if x >= A_MAX * PER_UNIT:
        return 0.0
    k = <Py_ssize_t>x
    t = x - k
    t2 = t * t
    t3 = t2 * t
    return ((2.0 * t3 - 3.0 * t2 + 1.0) * _H[k] + (t3 - 2.0 * t2 + t) * _D[k]
            + (3.0 * t2 - 2.0 * t3) * _H[k + 1] + (t3 - t2) * _D[k + 1])


def repig_tau(double[::1] var_y, double[:, ::1] cov, double[::1] var_t, double cap):
    cdef Py_ssize_t m = cov.shape[0], k = cov.shape[1], i, j
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double acc, c
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(k):
                c = cov[i, j]
                acc += gauss_mi(c * c / (var_y[i] * var_t[j]), cap)
            o[i] = acc / k
    return out


def repig_mu(double[::1] var_y, double[:, ::1] c0, double[:, ::1] c1,
             double[::1] v0, double[::1] v1, double[::1] c01,
             double jitter, double cap):
    cdef Py_ssize_t m = c0.shape[0], k = c0.shape[1], i, j
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double acc, a, b, det, x0, x1, q
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(k):
                a = v0[j] + jitter
                b = v1[j] + jitter
                det = a * b - c01[j] * c01[j]
                if det < 1e-300:
                    det = 1e-300
                x0 = c0[i, j]
                x1 = c1[i, j]
                q = (x0 * x0 * b - 2.0 * x0 * x1 * c01[j] + x1 * x1 * a) / det
                acc += gauss_mi(q / var_y[i], cap)
            o[i] = acc / k
    return out


def epig(double[::1] var_y, double[:, ::1] c0, double[:, ::1] c1,
         double[::1] vy0, double[::1] vy1, double cap):
    cdef Py_ssize_t m = c0.shape[0], k = c0.shape[1], i, j
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double acc, x0, x1
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(k):
                x0 = c0[i, j]
                x1 = c1[i, j]
                acc += 0.5 * (gauss_mi(x0 * x0 / (var_y[i] * vy0[j]), cap)
                              + gauss_mi(x1 * x1 / (var_y[i] * vy1[j]), cap))
            o[i] = acc / k
    return out


def repig_pi(double[::1] var_y, double[:, ::1] cov, double[::1] var_t,
             double[::1] mean_t, double[::1] nodes, double[::1] weights, double cap):
    cdef Py_ssize_t m = cov.shape[0], k = cov.shape[1], nn = nodes.shape[0]
    cdef Py_ssize_t i, j, r
    out = np.empty(m)
    cdef double[::1] o = out
    prior_np = np.empty(k)
    sd_np = np.empty(k)
    cdef double[::1] prior = prior_np
    cdef double[::1] sd_t = sd_np
    cdef double acc, c, rho2, sd_post, slope, post, mi
    with nogil:
        for j in range(k):
            sd_t[j] = sqrt(var_t[j])
            prior[j] = probit_entropy(mean_t[j] / sd_t[j])
        for i in range(m):
            acc = 0.0
            for j in range(k):
                if prior[j] < NEGLIGIBLE:
                    continue
                c = cov[i, j]
                rho2 = c * c / (var_y[i] * var_t[j])
                if rho2 > cap:
                    rho2 = cap
                # I(y; sign) <= I(y; tau)
                if -0.5 * log1p(-rho2) < NEGLIGIBLE:
                    continue
                sd_post = sqrt(var_t[j] * (1.0 - rho2))
                slope = sqrt(rho2 * var_t[j]) * SQRT2
                if c < 0:
                    slope = -slope
                post = 0.0
                for r in range(nn):
                    post += weights[r] * probit_entropy((mean_t[j] + slope * nodes[r]) / sd_post)
                mi = prior[j] - post
                if mi > 0.0:
                    acc += mi
            o[i] = acc / k
    return out
