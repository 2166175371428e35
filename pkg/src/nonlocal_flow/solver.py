"""
Constrained minimization of the anchored energy by nonlinear Gauss-Seidel.

Every stationary, extension and proximal problem of the package reduces to

    min  E_{B,nu}(w) + sum_{i in Omega} mu_i/(2 tau) (w_i - c_i)^2
                     - sum_{i in Omega} mu_i f_i w_i

over extensions ``w`` with some coordinates pinned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ._gauss_seidel import gauss_seidel, objective
from .energy import Dirichlet, EnergySpec, PowerRobin, energy, raw_gradient

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class UnboundedProblemError(SolverError, ValueError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    """Stopping rules.  ``tol`` is relative to the data scale of the problem."""

    tol: float = 1e-10
    max_sweeps: int = 100_000
    onedim_tol: float = 1e-14

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not self.onedim_tol > 0:
            raise ValueError("onedim_tol must be > 0")


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    sweeps: int
    final_residual: float
    energy_value: float
    tolerance: float = float("nan")
    scale: float = 1.0
    objective_value: float = float("nan")
    max_objective_increase: float = float("-inf")


@dataclass(frozen=True)
class Anchor:
    center: np.ndarray
    tau: float


def _as_anchor(anchor) -> Anchor | None:
    if anchor is None or isinstance(anchor, Anchor):
        return anchor
    center, tau = anchor
    return Anchor(np.asarray(center, dtype=float), float(tau))


def problem_scale(spec: EnergySpec, values, forcing=None, tau=None) -> float:
    """Magnitude of the residual ``(1/mu_i) dJ/dw_i`` for data of size ``values``."""
    mu = spec.space.mu
    R = max((float(np.max(np.abs(v))) for v in values if np.size(v)), default=0.0)
    s = float(np.max(spec.kernel.degree / mu)) * R ** (spec.p - 1)
    rc = spec.robin_coeff
    if rc.any():
        s += float(np.max(rc / mu)) * R ** (spec.qB - 1)
    if forcing is not None and np.size(forcing):
        s += float(np.max(np.abs(forcing)))
    if tau is not None:
        s += R / tau
    return s if s > 0 else 1.0


def _components(spec: EnergySpec, free: np.ndarray):
    k = spec.kernel
    pos = np.full(spec.space.n_points, -1)
    pos[free] = np.arange(free.size)
    r, c = pos[k.rows], pos[k.cols]
    keep = (r >= 0) & (c >= 0)
    sub = sparse.coo_matrix((np.ones(keep.sum()), (r[keep], c[keep])), shape=(free.size,) * 2)
    return csgraph.connected_components(sub, directed=False)


def minimize(spec: EnergySpec, anchor=None, forcing=None,
             pinned: Mapping[int, float] | None = None,
             opts: SolveOptions | None = None, x0=None):
    """Minimize the anchored, forced energy over extensions.

    Parameters
    ----------
    spec : EnergySpec
    anchor : (center, tau), optional
        Restricted center ``c`` and step ``tau > 0`` of the proximal term.
    forcing : array, optional
        Restricted source ``f``.
    pinned : mapping, optional
        Point index to fixed value; Dirichlet points are pinned to 0.
    x0 : array, optional
        Full-length starting point; also fixes the level of any component
        on which the objective is invariant under constant shifts.

    Returns
    -------
    (x, SolveReport)
    """
    opts = opts or SolveOptions()
    sp = spec.space
    n, om, mu = sp.n_points, sp.omega_mask, sp.mu
    anchor = _as_anchor(anchor)

    a = np.zeros(n)
    c = np.zeros(n)
    b = np.zeros(n)
    if anchor is not None:
        if not anchor.tau > 0:
            raise ValueError("anchor tau must be > 0")
        if anchor.center.shape != (sp.n_omega,):
            raise ValueError("anchor center must be a restricted state")
        a[om] = mu[om] / anchor.tau
        c[om] = anchor.center
    f = None
    if forcing is not None:
        f = np.asarray(forcing, dtype=float)
        if f.shape != (sp.n_omega,):
            raise ValueError("forcing must be a restricted state")
        b[om] = mu[om] * f

    pin_mask = spec.pinned_mask.copy()
    pin_vals = np.zeros(n)
    for i, v in (pinned or {}).items():
        if pin_mask[i] and v != 0:
            raise ValueError(f"point {i} is Dirichlet-constrained but pinned to {v}")
        pin_mask[i] = True
        pin_vals[i] = v

    if x0 is None:
        x = np.zeros(n)
        if anchor is not None:
            x[om] = c[om]
    else:
        x = np.array(x0, dtype=float)
        if x.shape != (n,):
            raise ValueError("x0 must be a full-length state")
    x[pin_mask] = pin_vals[pin_mask]
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(c)):
        raise ValueError("non-finite problem data")

    free = np.flatnonzero(~pin_mask)
    rc = np.array(spec.robin_coeff, dtype=float)
    level_fix = []
    if free.size:
        k = spec.kernel
        near_pin = np.zeros(n, dtype=bool)
        near_pin[k.rows[pin_mask[k.cols]]] = True
        near_pin[k.cols[pin_mask[k.rows]]] = True
        coercive = (a[free] > 0) | (rc[free] > 0) | near_pin[free]
        ncomp, labels = (0, None) if coercive.all() else _components(spec, free)
        for comp in range(ncomp):
            sel = labels == comp
            if coercive[sel].any():
                continue
            idx = free[sel]
            total = b[idx].sum()
            mag = np.abs(b[idx]).sum()
            if mag > 0 and abs(total) > 1e-10 * mag:
                raise UnboundedProblemError(
                    "objective is unbounded below: forcing has nonzero mean on a "
                    "component without anchor, Robin term or pinned neighbour")
            if total != 0:
                support = idx[b[idx] != 0]
                b[support] -= mu[support] * total / mu[support].sum()
            level_fix.append(idx)

    tau = anchor.tau if anchor is not None else None
    scale = problem_scale(spec, [x, c[om], pin_vals], f, tau)
    tol_abs = opts.tol * scale
    csr = spec.kernel.csr
    p, q = float(spec.p), float(spec.qB)
    x_start = x.copy()
    sweeps, res, worst = gauss_seidel(
        csr.indptr.astype(np.int64), csr.indices.astype(np.int64), csr.data,
        p, rc, q, a, c, b, free.astype(np.int64), x, mu.copy(),
        tol_abs, int(opts.max_sweeps), opts.onedim_tol)

    for idx in level_fix:
        # shift-invariant component: keep the mu-mean of the starting point
        w = mu[idx]
        x[idx] += (w @ x_start[idx] - w @ x[idx]) / w.sum()

    converged = bool(res <= tol_abs)
    if not converged:
        log.warning("Gauss-Seidel stopped after %d sweeps with residual %.3e > %.3e",
                    sweeps, res, tol_abs)
    J = objective(csr.indptr.astype(np.int64), csr.indices.astype(np.int64), csr.data,
                  x, p, rc, q, a, c, b)
    x_e = x.copy()
    x_e[spec.pinned_mask] = 0.0
    report = SolveReport(converged, int(sweeps), float(res), energy(spec, x_e),
                         tol_abs, scale, float(J), float(worst))
    return x, report


def solve_elliptic(spec: EnergySpec, f, opts: SolveOptions | None = None, x0=None):
    """Stationary problem: operator equals ``f`` on Omega and 0 on the exterior."""
    return minimize(spec, forcing=f, opts=opts, x0=x0)


def elliptic_extension(spec: EnergySpec, u, opts: SolveOptions | None = None, x0=None):
    """Energy-minimal extension of the restricted state ``u``."""
    u = np.asarray(u, dtype=float)
    sp = spec.space
    if u.shape != (sp.n_omega,):
        raise ValueError("u must be a restricted state")
    pins = dict(zip(sp.omega_idx.tolist(), u.tolist()))
    if x0 is None:
        x0 = sp.extend_by_zero(u)
        ext = sp.exterior_idx
        if ext.size:
            x0[ext] = float(sp.mu_omega @ u / sp.mu_omega.sum())
            x0[spec.pinned_mask] = 0.0
    return minimize(spec, pinned=pins, opts=opts, x0=x0)


def linear_extension_explicit(spec: EnergySpec, u) -> np.ndarray:
    """Closed-form extension for ``p = 2`` without exterior-exterior coupling.

    ``u_hat_i = sum_{j in Omega} w_ij u_j / (rho_i + nu_i kappa_i)`` on the
    exterior, ``rho_i = sum_{j in Omega} w_ij``.
    """
    if spec.p != 2:
        raise ValueError("explicit extension requires p = 2")
    pot = spec.potential
    if isinstance(pot, Dirichlet):
        raise ValueError("explicit extension covers Neumann and Robin potentials only")
    if isinstance(pot, PowerRobin) and pot.q != 2:
        raise ValueError("explicit extension requires a quadratic Robin term")
    sp = spec.space
    k = spec.kernel
    om = sp.omega_mask
    if np.any(~om[k.rows] & ~om[k.cols]):
        raise ValueError("interaction set has exterior-exterior pairs")
    u = np.asarray(u, dtype=float)
    u_hat = sp.extend_by_zero(u)
    W = k.csr
    ext = sp.exterior_idx
    if ext.size == 0:
        return u_hat
    W_eo = W[ext][:, om]
    rho = np.asarray(W_eo.sum(axis=1)).ravel()
    denom = rho + spec.robin_coeff[ext]
    if np.any(denom == 0):
        raise ValueError("isolated exterior point: no coupling and no Robin term")
    u_hat[ext] = (W_eo @ u) / denom
    return u_hat


def residual(spec: EnergySpec, u_hat, f=None) -> np.ma.MaskedArray:
    """Stationarity residual ``(1/mu_i) g_i - f_i [i in Omega]``.

    Dirichlet-constrained coordinates are masked in the returned array.
    """
    sp = spec.space
    g = raw_gradient(spec, u_hat) / sp.mu
    if f is not None:
        g[sp.omega_mask] -= np.asarray(f, dtype=float)
    return np.ma.MaskedArray(g, mask=spec.pinned_mask.copy())


def proximal_residual(spec: EnergySpec, u_hat, center, tau, f=None) -> np.ndarray:
    """Residual of the anchored problem restricted to the free coordinates."""
    sp = spec.space
    r = residual(spec, u_hat, f).filled(0.0)
    r[sp.omega_mask] += (np.asarray(u_hat)[sp.omega_mask] - center) / tau
    return r
