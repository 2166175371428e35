"""
Implicit Euler (resolvent) time stepping of the nonlocal p-Laplacian flow.

One step maps ``u`` to the restriction of the minimizer of
``E_{B,nu}(w) + (1/2tau) ||w|_Omega - u - tau f||^2_{L^2(Omega, mu)}``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .energy import EnergySpec
from .solver import SolveOptions, SolverError, elliptic_extension, minimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowConfig:
    """Time grid and recording options.

    ``forcing`` is either a restricted state (constant in time), a mapping
    step -> restricted state (missing steps mean no forcing) or a callable
    ``step -> state or None``.  It is sampled at the left end of each step.
    """

    tau: float
    n_steps: int
    forcing: object = None
    record_every: int = 1
    q: float = 2.0
    keep_extensions: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if not self.q >= 1:
            raise ValueError("norm exponent q must be >= 1")

    def forcing_at(self, step: int):
        f = self.forcing
        if f is None:
            return None
        if callable(f):
            return f(step)
        if isinstance(f, Mapping):
            return f.get(step)
        return f


def default_tau(u0) -> float:
    """``(data range) * 1e-2``; a starting point, not a guarantee."""
    u0 = np.asarray(u0, dtype=float)
    r = float(u0.max() - u0.min()) if u0.size else 0.0
    return 1e-2 * r if r > 0 else 1e-2


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    states: list = field(default_factory=list)
    extensions: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    linf_norms: list = field(default_factory=list)
    l2_norms: list = field(default_factory=list)
    lq_norms: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    q: float = 2.0
    ok: bool = True
    failure: str | None = None
    reports: list = field(default_factory=list)

    def record(self, step, t, u, u_hat, E, mu, keep_ext):
        self.steps.append(step)
        self.times.append(t)
        self.states.append(u.copy())
        if keep_ext:
            self.extensions.append(u_hat.copy())
        self.energies.append(E)
        self.linf_norms.append(float(np.max(np.abs(u))) if u.size else 0.0)
        self.l2_norms.append(float(np.sqrt(mu @ u**2)))
        self.lq_norms.append(float((mu @ np.abs(u) ** self.q) ** (1 / self.q)))
        self.mass.append(float(mu @ u))

    def __len__(self):
        return len(self.times)

    def to_csv(self, path, state_dir=None) -> None:
        """Write ``step,time,energy,mass,linf,l2,lq``; optionally one ``state_<step>.csv`` per record."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["step", "time", "energy", "mass", "linf", "l2", "lq"])
            for row in zip(self.steps, self.times, self.energies, self.mass,
                           self.linf_norms, self.l2_norms, self.lq_norms):
                w.writerow([row[0]] + [fmt(v) for v in row[1:]])
        if state_dir is not None:
            state_dir = Path(state_dir)
            state_dir.mkdir(parents=True, exist_ok=True)
            for step, u in zip(self.steps, self.states):
                with (state_dir / f"state_{step}.csv").open("w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\r\n")
                    w.writerow(["index", "value"])
                    w.writerows([i, fmt(v)] for i, v in enumerate(u))


def fmt(v: float) -> str:
    return "%.17g" % v


def proximal_step(spec: EnergySpec, u, tau: float, f=None,
                  opts: SolveOptions | None = None, x0=None):
    """One resolvent step; returns ``(u_next, u_hat_next, report)``."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("state has non-finite entries")
    center = u if f is None else u + tau * np.asarray(f, dtype=float)
    if x0 is None:
        x0 = spec.space.extend_by_zero(center)
        ext = spec.space.exterior_idx
        if ext.size:
            mo = spec.space.mu_omega
            x0[ext] = float(mo @ center / mo.sum())
        x0[spec.pinned_mask] = 0.0
    u_hat, rep = minimize(spec, anchor=(center, tau), opts=opts, x0=x0)
    if not rep.converged:
        raise SolverError(f"proximal step did not converge: residual {rep.final_residual:.3e}")
    return spec.restrict(u_hat), u_hat, rep


def run_flow(spec: EnergySpec, u0, cfg: FlowConfig, opts: SolveOptions | None = None) -> Trajectory:
    """Iterate :func:`proximal_step` and record diagnostics.

    Without forcing, each step is checked against the discrete energy
    inequality ``E(u+) + ||u+ - u||^2/(2 tau) <= E(u) + 10 tol scale`` with
    ``scale = 1 + E(u) + ||u||^2/tau``; the
    trajectory is truncated and flagged at the first failure.
    """
    opts = opts or SolveOptions()
    sp = spec.space
    mu = sp.mu_omega
    u = np.array(u0, dtype=float)
    if u.shape != (sp.n_omega,):
        raise ValueError("u0 must be a restricted state")
    traj = Trajectory(q=cfg.q)
    # energy of the minimal extension at t = 0
    u_hat, rep0 = elliptic_extension(spec, u, opts)
    E = rep0.energy_value
    traj.record(0, 0.0, u, u_hat, E, mu, cfg.keep_extensions)
    for step in range(1, cfg.n_steps + 1):
        f = cfg.forcing_at(step - 1)
        try:
            u_new, u_hat, rep = proximal_step(spec, u, cfg.tau, f, opts, x0=u_hat)
        except SolverError as exc:
            traj.ok, traj.failure = False, f"step {step}: {exc}"
            log.error(traj.failure)
            break
        E_new = rep.energy_value
        if f is None:
            lhs = E_new + (mu @ (u_new - u) ** 2) / (2 * cfg.tau)
            slack = 10 * opts.tol * (1 + abs(E) + (mu @ u**2) / cfg.tau)
            if lhs > E + slack:
                traj.ok = False
                traj.failure = f"step {step}: energy inequality violated by {lhs - E:.3e}"
                log.error(traj.failure)
                break
        u, E = u_new, E_new
        if step % cfg.record_every == 0 or step == cfg.n_steps:
            traj.record(step, step * cfg.tau, u, u_hat, E, mu, cfg.keep_extensions)
    return traj


def two_node_difference(p: float, w: float, mu0: float, mu1: float, d0: float, t):
    """Exact ``d(t) = u_0(t) - u_1(t)`` for two coupled points in Omega.

    ``d' = -w (1/mu0 + 1/mu1) |d|^{p-2} d``.
    """
    c = w * (1 / mu0 + 1 / mu1)
    t = np.asarray(t, dtype=float)
    if p == 2:
        return d0 * np.exp(-c * t)
    if d0 == 0:
        return np.zeros_like(t)
    s = math.copysign(1.0, d0)
    return s * (abs(d0) ** (2 - p) + c * (p - 2) * t) ** (-1 / (p - 2))


def two_node_closed_form(p: float, w: float, mu, u0, t) -> np.ndarray:
    """Exact state of the two-point flow at time ``t`` (mass is conserved)."""
    mu0, mu1 = map(float, mu)
    a, b = map(float, u0)
    m = (mu0 * a + mu1 * b) / (mu0 + mu1)
    d = float(two_node_difference(p, w, mu0, mu1, a - b, t))
    return np.array([m + d * mu1 / (mu0 + mu1), m - d * mu0 / (mu0 + mu1)])
