"""Compiled cyclic nonlinear Gauss-Seidel for the anchored p-energy objective.

Objective (free coordinates ``order``, the rest held fixed)::

    J(x) = (1/p) sum_{i<j} w_ij |x_i - x_j|^p + sum_i rc_i |x_i|^q / q
           + sum_i a_i/2 (x_i - c_i)^2 - sum_i b_i x_i
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _pp(p, s):
    # |s|^{p-2} s with value 0 at s = 0
    if s == 0.0:
        return 0.0
    if p == 2.0:
        return s
    a = abs(s)
    return a ** (p - 1.0) if s > 0 else -(a ** (p - 1.0))


@njit(cache=True, nogil=True)
def _dpp(p, s):
    # derivative of |s|^{p-2} s; +inf at 0 when p < 2
    if p == 2.0:
        return 1.0
    a = abs(s)
    if a == 0.0:
        return 0.0 if p > 2.0 else math.inf
    return (p - 1.0) * a ** (p - 2.0)


@njit(cache=True, nogil=True)
def _h(s, i, indptr, indices, data, x, p, rc, q, a, c, b):
    v = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        v += data[k] * _pp(p, s - x[indices[k]])
    if rc[i] != 0.0:
        v += rc[i] * _pp(q, s)
    return v + a[i] * (s - c[i]) - b[i]


@njit(cache=True, nogil=True)
def _dh(s, i, indptr, indices, data, x, p, rc, q, a):
    v = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        v += data[k] * _dpp(p, s - x[indices[k]])
    if rc[i] != 0.0:
        v += rc[i] * _dpp(q, s)
    return v + a[i]


@njit(cache=True, nogil=True)
def objective(indptr, indices, data, x, p, rc, q, a, c, b):
    n = x.size
    pair = 0.0
    rest = 0.0
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j > i:
                pair += data[k] * abs(x[i] - x[j]) ** p
        if rc[i] != 0.0:
            rest += rc[i] * abs(x[i]) ** q / q
        if a[i] != 0.0:
            rest += 0.5 * a[i] * (x[i] - c[i]) ** 2
        rest -= b[i] * x[i]
    return pair / p + rest


@njit(cache=True, nogil=True)
def max_residual(indptr, indices, data, x, p, rc, q, a, c, b, order, mu):
    r = 0.0
    for t in range(order.size):
        i = order[t]
        v = abs(_h(x[i], i, indptr, indices, data, x, p, rc, q, a, c, b)) / mu[i]
        if v > r:
            r = v
    return r


@njit(cache=True, nogil=True)
def _solve_1d(i, indptr, indices, data, x, p, rc, q, a, c, b, tol):
    xi = x[i]
    # bracket from the local data range
    spread = abs(c[i] - xi) if a[i] != 0.0 else 0.0
    for k in range(indptr[i], indptr[i + 1]):
        d = abs(x[indices[k]] - xi)
        if d > spread:
            spread = d
    width = spread + 1.0
    lo = xi - width
    while _h(lo, i, indptr, indices, data, x, p, rc, q, a, c, b) > 0.0:
        width *= 2.0
        lo = xi - width
    width = spread + 1.0
    hi = xi + width
    while _h(hi, i, indptr, indices, data, x, p, rc, q, a, c, b) < 0.0:
        width *= 2.0
        hi = xi + width

    s = xi
    for _ in range(400):
        hs = _h(s, i, indptr, indices, data, x, p, rc, q, a, c, b)
        if hs == 0.0:
            return s
        if hs < 0.0:
            lo = s
        else:
            hi = s
        dh = _dh(s, i, indptr, indices, data, x, p, rc, q, a)
        step_ok = dh > 0.0 and math.isfinite(dh)
        s_new = s - hs / dh if step_ok else 0.5 * (lo + hi)
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= tol * (1.0 + abs(s)) or hi - lo <= tol * (1.0 + abs(s)):
            return s_new
        s = s_new
    return s


@njit(cache=True, nogil=True)
def gauss_seidel(indptr, indices, data, p, rc, q, a, c, b, order, x, mu,
                 tol_abs, max_sweeps, onedim_tol):
    """Sweep in ``order`` until the scaled residual is below ``tol_abs``.

    ``x`` is updated in place.  Returns ``(sweeps, residual, max_increase)``
    where ``max_increase`` is the largest objective increase seen over a sweep.
    """
    # coordinates with no coupling, no potential and no anchor are inert
    active = np.empty(order.size, dtype=np.int64)
    m = 0
    for t in range(order.size):
        i = order[t]
        if indptr[i + 1] > indptr[i] or rc[i] != 0.0 or a[i] != 0.0:
            active[m] = i
            m += 1
    active = active[:m]

    res = max_residual(indptr, indices, data, x, p, rc, q, a, c, b, order, mu)
    J = objective(indptr, indices, data, x, p, rc, q, a, c, b)
    worst = -math.inf
    sweeps = 0
    while res > tol_abs and sweeps < max_sweeps:
        for t in range(m):
            i = active[t]
            x[i] = _solve_1d(i, indptr, indices, data, x, p, rc, q, a, c, b, onedim_tol)
        sweeps += 1
        J_new = objective(indptr, indices, data, x, p, rc, q, a, c, b)
        if J_new - J > worst:
            worst = J_new - J
        J = J_new
        res = max_residual(indptr, indices, data, x, p, rc, q, a, c, b, order, mu)
    return sweeps, res, worst
