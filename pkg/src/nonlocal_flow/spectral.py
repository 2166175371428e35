"""
Linear (p = 2) operators, their fractional powers and subordinated kernels.

The operator ``(Au)_i = (1/mu_i)(sum_j w_ij (u_i - u_j) + nu_i kappa_i u_i)``
is self-adjoint in ``L^2(mu)``; it is diagonalized through the symmetric
matrix ``M^{1/2} A M^{-1/2}``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, special

from .energy import EnergySpec, PowerRobin


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LinearOperatorRep:
    """Dense self-adjoint operator on the free (non-Dirichlet) coordinates.

    Attributes
    ----------
    free_idx : indices of the free points in the underlying space
    mu : measure weights on the free points
    matrix : ``A`` in the standard basis (not symmetric unless ``mu`` is constant)
    eigenvalues : ascending, clipped at 0 below ``1e-12 * max``
    eigenvectors : columns ``e_n``, orthonormal in ``L^2(mu)``
    """

    free_idx: np.ndarray
    mu: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mu.size)

    def coefficients(self, u) -> np.ndarray:
        """``<u, e_n>_mu`` for all modes."""
        return self.eigenvectors.T @ (self.mu * np.asarray(u, dtype=float))

    def apply_function(self, fn, u) -> np.ndarray:
        """``sum_n fn(lambda_n) <u, e_n>_mu e_n``."""
        return self.eigenvectors @ (fn(self.eigenvalues) * self.coefficients(u))

    def inner(self, u, v) -> float:
        return float(np.sum(self.mu * np.asarray(u) * np.asarray(v)))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["n", "lambda"])
            w.writerows([n, "%.17g" % lam] for n, lam in enumerate(self.eigenvalues))


def assemble_p2_operator(spec: EnergySpec) -> LinearOperatorRep:
    if spec.p != 2:
        raise ValueError("linear operator requires p = 2")
    if isinstance(spec.potential, PowerRobin) and spec.potential.q != 2:
        raise ValueError("linear operator requires a quadratic Robin term")
    free = np.flatnonzero(~spec.pinned_mask)
    W = spec.kernel.dense()
    L = np.diag(W.sum(axis=1) + spec.robin_coeff) - W
    L = L[np.ix_(free, free)]
    mu = spec.space.mu[free].copy()
    r = 1.0 / np.sqrt(mu)
    S = r[:, None] * L * r[None, :]
    lam, V = linalg.eigh(S)
    lam = np.where(lam <= 1e-12 * max(lam.max(initial=0.0), 0.0), 0.0, lam)
    E = r[:, None] * V
    A = L / mu[:, None]
    for arr in (free, mu, A, lam, E):
        arr.setflags(write=False)
    return LinearOperatorRep(free, mu, A, lam, E)


def spectral_power(op: LinearOperatorRep, theta: float, u) -> np.ndarray:
    """``A^theta u`` by the modal formula, with ``0^theta = 0``."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in ]0,1[")
    return op.apply_function(lambda lam: np.where(lam > 0, lam, 0.0) ** theta, u)


@dataclass(frozen=True)
class LogQuadrature:
    """Composite Gauss-Legendre rule for ``int (1 - e^{-lam t}) t^{-1-theta} dt``.

    After ``t = e^s`` the integral over ``[e^{s_min}, e^{s_max}]`` uses
    ``panels`` panels of ``order`` nodes; the two tails are added in closed
    form.  The error estimate compares with the rule on half as many panels.
    """

    nodes: int = 400
    s_min: float = -30.0
    s_max: float = 30.0
    order: int = 10
    tol: float = 1e-8

    def __post_init__(self):
        if self.nodes % (2 * self.order):
            raise ValueError("nodes must be a multiple of 2 * order")
        if not self.s_max > self.s_min:
            raise ValueError("empty truncation interval")

    def _rule(self, panels: int):
        x, w = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(self.s_min, self.s_max, panels + 1)
        h = np.diff(edges)
        s = (edges[:-1, None] + 0.5 * h[:, None] * (x[None, :] + 1)).ravel()
        ws = (0.5 * h[:, None] * w[None, :]).ravel()
        return s, ws

    def _integral(self, lam, theta, panels):
        s, ws = self._rule(panels)
        t = np.exp(s)
        lt = lam[:, None] * t[None, :]
        body = (-np.expm1(-lt) * np.exp(-theta * s)[None, :]) @ ws
        # [0, t_lo]: series of 1 - e^{-x}
        t_lo, t_hi = math.exp(self.s_min), math.exp(self.s_max)
        lo = (lam * t_lo ** (1 - theta) / (1 - theta)
              - lam**2 * t_lo ** (2 - theta) / (2 * (2 - theta))
              + lam**3 * t_lo ** (3 - theta) / (6 * (3 - theta)))
        # [t_hi, inf): t^{-theta}/theta minus lam^theta Gamma(-theta, lam t_hi)
        x = lam * t_hi
        with np.errstate(over="ignore", under="ignore"):
            gneg = (x ** (-theta) * np.exp(-x)
                    - special.gammaincc(1 - theta, x) * special.gamma(1 - theta)) / theta
        hi = t_hi ** (-theta) / theta - lam**theta * np.where(x < 700, gneg, 0.0)
        return body + lo + hi

    def factors(self, lam, theta):
        """``c(lam) ~ lam^theta`` and an absolute error estimate per mode."""
        lam = np.asarray(lam, dtype=float)
        pos = lam > 0
        c = np.zeros_like(lam)
        err = np.zeros_like(lam)
        if pos.any():
            k = theta / special.gamma(1 - theta)
            panels = self.nodes // self.order
            fine = k * self._integral(lam[pos], theta, panels)
            coarse = k * self._integral(lam[pos], theta, panels // 2)
            c[pos] = fine
            err[pos] = np.abs(fine - coarse)
        return c, err


def _check_quad(err, scale, quad):
    rel = float(err / scale) if scale > 0 else float(err)
    if rel > quad.tol:
        raise QuadratureError(f"quadrature error estimate {rel:.3e} exceeds {quad.tol:.1e}")
    return rel


def balakrishnan_power(op: LinearOperatorRep, theta: float, u, quad: LogQuadrature | None = None):
    """``A^theta u`` from the subordination integral; returns ``(value, rel_error_estimate)``."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in ]0,1[")
    quad = quad or LogQuadrature()
    c, err = quad.factors(op.eigenvalues, theta)
    coef = op.coefficients(u)
    val = op.eigenvectors @ (c * coef)
    err_vec = op.eigenvectors @ (err * np.abs(coef))
    norm = math.sqrt(op.inner(val, val))
    rel = _check_quad(math.sqrt(op.inner(err_vec, err_vec)), norm, quad)
    return val, rel


def subordinated_kernel(op: LinearOperatorRep, theta: float, quad: LogQuadrature | None = None):
    """Kernel ``k_theta(i, j)`` (zero diagonal) and killing density ``kappa_theta``.

    Off the diagonal ``sum_n e_n(i) e_n(j) = 0`` (completeness), so the heat
    kernel integral equals ``-sum_n c(lambda_n) e_n(i) e_n(j)``; ``kappa_theta``
    is ``A^theta 1``.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in ]0,1[")
    quad = quad or LogQuadrature()
    c, err = quad.factors(op.eigenvalues, theta)
    E = op.eigenvectors
    K = -(E * c[None, :]) @ E.T
    np.fill_diagonal(K, 0.0)
    kappa = E @ (c * op.coefficients(np.ones(op.dim)))
    scale = float(np.max(c)) if c.size else 0.0
    _check_quad(float(np.max(err, initial=0.0)), scale, quad)
    return K, kappa


def form_identity_sides(op: LinearOperatorRep, theta: float, u, K, kappa):
    """``(<A^theta u, u>_mu, 1/2 sum k (u_i-u_j)^2 mu_i mu_j + sum kappa u^2 mu)``."""
    u = np.asarray(u, dtype=float)
    lhs = op.inner(spectral_power(op, theta, u), u)
    mu = op.mu
    D = (u[:, None] - u[None, :]) ** 2
    rhs = 0.5 * float(np.sum(K * D * mu[:, None] * mu[None, :])) + float(np.sum(kappa * u**2 * mu))
    return lhs, rhs


def frac_heat_kernel_rn(t: float, r: float, N: int, theta: float) -> float:
    """Profile ``t^{-N/2theta} (1 + r t^{-1/2theta})^{-N-2theta}``."""
    if not t > 0:
        raise ValueError("t must be > 0")
    if r < 0:
        raise ValueError("distance must be >= 0")
    return t ** (-N / (2 * theta)) * (1 + r * t ** (-1 / (2 * theta))) ** (-N - 2 * theta)


def kernel_to_csv(K, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["i", "j", "k"])
        n = K.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                w.writerow([i, j, "%.17g" % K[i, j]])
