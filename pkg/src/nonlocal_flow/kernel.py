"""
Pair kernels, normalization constants and the odd power nonlinearity.

A :class:`KernelMatrix` stores the symmetric pair weights ``w_ij`` of a
finite interaction graph once per unordered pair (``i < j``).  Its support
is the interaction set; absent pairs never interact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, sparse, special


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Sparse symmetric nonnegative pair weights.

    Parameters
    ----------
    rows, cols : (m,) int arrays
        Pair indices with ``rows < cols``, sorted lexicographically.
    weights : (m,) float array
        Strictly positive, finite weights.
    n_points : int
        Number of points of the underlying space.
    """

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    n_points: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if not (rows.shape == cols.shape == w.shape) or rows.ndim != 1:
            raise KernelError("rows, cols and weights must be 1-d arrays of equal length")
        if rows.size:
            if np.any(rows == cols):
                raise KernelError("diagonal pairs are not allowed in a kernel")
            if np.any(rows > cols):
                raise KernelError("pairs must be stored with rows < cols")
            if rows.min() < 0 or cols.max() >= self.n_points:
                raise KernelError("pair index out of range")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise KernelError("stored weights must be finite and > 0")
            key = rows * self.n_points + cols
            if np.any(np.diff(key) <= 0):
                raise KernelError("pairs must be unique and sorted")
        for name, arr in (("rows", rows), ("cols", cols), ("weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_dense(cls, W) -> "KernelMatrix":
        """Build from a dense symmetric matrix; the diagonal is ignored."""
        W = np.asarray(W, dtype=float)
        n = W.shape[0]
        if W.shape != (n, n):
            raise KernelError("weight matrix must be square")
        if not np.array_equal(W, W.T):
            raise KernelError("weight matrix must be symmetric")
        if np.any(W < 0):
            raise KernelError("negative weight")
        i, j = np.triu_indices(n, k=1)
        keep = W[i, j] > 0
        return cls(i[keep], j[keep], W[i, j][keep], n)

    @classmethod
    def from_pairs(cls, n_points: int, pairs: dict) -> "KernelMatrix":
        """Build from a mapping ``(i, j) -> w`` with either orientation."""
        canon = {}
        for (i, j), w in pairs.items():
            a, b = (i, j) if i < j else (j, i)
            canon[(a, b)] = float(w)
        keys = sorted(canon)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        w = np.array([canon[k] for k in keys], dtype=float)
        return cls(rows, cols, w, n_points)

    @classmethod
    def empty(cls, n_points: int) -> "KernelMatrix":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, np.zeros(0), n_points)

    @property
    def n_pairs(self) -> int:
        return int(self.weights.size)

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        """Full symmetric CSR matrix (both orientations stored)."""
        n = self.n_points
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        w = np.concatenate([self.weights, self.weights])
        m = sparse.csr_matrix((w, (r, c)), shape=(n, n))
        m.sort_indices()
        return m

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    @cached_property
    def degree(self) -> np.ndarray:
        d = np.bincount(self.rows, self.weights, minlength=self.n_points)
        d += np.bincount(self.cols, self.weights, minlength=self.n_points)
        return d

    def weight(self, i: int, j: int) -> float:
        return float(self.csr[i, j])

    def restrict(self, keep) -> "KernelMatrix":
        """Drop every pair for which ``keep[i, j]`` (dense bool) is false."""
        keep = np.asarray(keep, dtype=bool)
        sel = keep[self.rows, self.cols]
        return KernelMatrix(self.rows[sel], self.cols[sel], self.weights[sel], self.n_points)


@dataclass(frozen=True)
class PhiSpec:
    """Power nonlinearity ``Phi(s) = |s|^p / p`` with derivative ``|s|^{p-2} s``."""

    p: float

    def __post_init__(self):
        if not (self.p > 1 and math.isfinite(self.p)):
            raise KernelError(f"exponent p must be > 1, got {self.p}")

    def phi(self, s):
        return phi(self.p, s)

    def phi_prime(self, s):
        return phi_prime(self.p, s)


def phi(p: float, s):
    return np.abs(s) ** p / p


def phi_prime(p: float, s):
    """``|s|^{p-2} s``, extended by 0 at ``s = 0`` (also for ``p < 2``)."""
    s = np.asarray(s, dtype=float)
    if p == 2:
        return s * 1.0
    a = np.abs(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a > 0, a ** (p - 2) * s, 0.0)
    return out if out.ndim else float(out)


def _check_theta(theta):
    if not 0 < theta < 1:
        raise KernelError(f"theta must lie in ]0,1[, got {theta}")


def normalization_constant(kind: str, N: int, theta: float, p: float | None = None) -> float:
    """Normalization of the fractional kernels.

    ``kind="cn"`` gives the constant of the linear fractional Laplacian,
    ``theta 2^{2 theta} Gamma((N+2theta)/2) / (pi^{N/2} Gamma(1-theta))``.
    ``kind="cnsp"`` gives the p-dependent constant
    ``theta 2^{2theta-1} Gamma((p theta+p+N-2)/2) / (pi^{N/2} Gamma(1-theta))``.
    At ``p = 2`` the second is exactly half of the first.
    """
    _check_theta(theta)
    if N < 1:
        raise KernelError("dimension must be >= 1")
    denom = math.pi ** (N / 2) * special.gamma(1 - theta)
    if kind == "cn":
        return float(theta * 2 ** (2 * theta) * special.gamma((N + 2 * theta) / 2) / denom)
    if kind == "cnsp":
        if p is None or not p > 1:
            raise KernelError("cnsp requires p > 1")
        num = theta * 2 ** (2 * theta - 1) * special.gamma((p * theta + p + N - 2) / 2)
        return float(num / denom)
    raise KernelError(f"unknown constant kind {kind!r}")


@dataclass(frozen=True)
class CnCheck:
    formula_value: float
    quadrature_value: float
    converged: bool

    @property
    def relative_gap(self) -> float:
        return abs(self.formula_value - self.quadrature_value) / abs(self.formula_value)


def cn_integral_check(theta: float, delta: float = 1e-3, cutoff_periods: int = 20) -> CnCheck:
    """Compare the closed form of the N=1 constant with ``1 / int (1-cos x)/|x|^{1+2theta}``.

    The integral over the real line is twice the half-line integral, split as
    ``[0, delta]`` (series ``x^{1-2theta}/2``), ``[delta, A]`` (adaptive
    quadrature, one piece per period) and ``[A, inf)`` (power tail minus a
    Fourier-weighted tail).
    """
    _check_theta(theta)
    a = 1 + 2 * theta
    e = 2 - 2 * theta
    # (1 - cos x) = x^2/2 - x^4/24 + ...
    head = delta**e / (2 * e) - delta ** (e + 2) / (24 * (e + 2))

    A = 2 * math.pi * cutoff_periods
    f = lambda x: (1 - math.cos(x)) * x ** (-a)
    edges = np.concatenate([[delta], 2 * math.pi * np.arange(1, cutoff_periods + 1)])
    middle = 0.0
    err_total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=200)
        middle += val
        err_total += err
    tail_pow = A ** (1 - a) / (a - 1)
    tail_cos, err = integrate.quad(lambda x: x ** (-a), A, np.inf, weight="cos", wvar=1.0)
    err_total += err
    half = head + middle + tail_pow - tail_cos
    converged = err_total <= 1e-7 * abs(half)
    return CnCheck(normalization_constant("cn", 1, theta), 1.0 / (2 * half), bool(converged))
