"""
Nonlocal p-energies with Neumann, power-Robin and Dirichlet exterior terms.

States are plain float arrays: an *extension* has one entry per point of
the space, a *restriction* has one entry per point of Omega (in the order
of ``space.omega_idx``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .kernel import KernelMatrix, PhiSpec
from .space import DiscreteSpace


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class Neumann:
    kind = "neumann"


@dataclass(frozen=True, eq=False)
class PowerRobin:
    """``B_i(s) = kappa_i |s|^q / q`` with ``q >= 2``."""

    kappa: np.ndarray
    q: float = 2.0
    kind = "robin"

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim != 1 or not np.all(np.isfinite(k)) or np.any(k < 0):
            raise EnergyError("Robin kappa must be a finite nonnegative 1-d array")
        if not self.q >= 2:
            raise EnergyError(f"Robin exponent must be >= 2, got {self.q}")
        k.setflags(write=False)
        object.__setattr__(self, "kappa", k)


@dataclass(frozen=True, eq=False)
class Dirichlet:
    """Hard constraint ``u = 0`` on ``mask``."""

    mask: np.ndarray
    allow_interior: bool = False
    kind = "dirichlet"

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 1:
            raise EnergyError("Dirichlet mask must be a 1-d boolean array")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


Potential = Union[Neumann, PowerRobin, Dirichlet]


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Everything needed to evaluate ``E_{B,nu}``.

    Parameters
    ----------
    space, kernel
        Measure space and pair weights (``w_ij`` already carries any measure
        factors).
    phi : PhiSpec or float
        Exponent of the pair term.
    potential : Neumann, PowerRobin or Dirichlet
    nu : array, optional
        Per-point weights of the exterior measure; defaults to ones.  Ignored
        unless the potential is power-Robin.
    """

    space: DiscreteSpace
    kernel: KernelMatrix
    phi: PhiSpec
    potential: Potential = field(default_factory=Neumann)
    nu: np.ndarray | None = None

    def __post_init__(self):
        n = self.space.n_points
        if self.kernel.n_points != n:
            raise EnergyError("kernel and space sizes differ")
        if not isinstance(self.phi, PhiSpec):
            object.__setattr__(self, "phi", PhiSpec(float(self.phi)))
        nu = np.ones(n) if self.nu is None else np.asarray(self.nu, dtype=float)
        if nu.shape != (n,) or not np.all(np.isfinite(nu)) or np.any(nu < 0):
            raise EnergyError("nu must be a finite nonnegative array of length n_points")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        pot = self.potential
        if isinstance(pot, PowerRobin) and pot.kappa.shape != (n,):
            raise EnergyError("Robin kappa must have length n_points")
        if isinstance(pot, Dirichlet):
            if pot.mask.shape != (n,):
                raise EnergyError("Dirichlet mask must have length n_points")
            if not pot.allow_interior and np.any(pot.mask & self.space.omega_mask):
                raise EnergyError("Dirichlet mask touches Omega (interior obstacles are disabled)")

    @property
    def p(self) -> float:
        return self.phi.p

    @property
    def qB(self) -> float:
        return self.potential.q if isinstance(self.potential, PowerRobin) else 2.0

    @cached_property
    def robin_coeff(self) -> np.ndarray:
        """``nu_i kappa_i`` (zeros for Neumann and Dirichlet)."""
        if isinstance(self.potential, PowerRobin):
            return self.nu * self.potential.kappa
        return np.zeros(self.space.n_points)

    @cached_property
    def pinned_mask(self) -> np.ndarray:
        if isinstance(self.potential, Dirichlet):
            return self.potential.mask.copy()
        return np.zeros(self.space.n_points, dtype=bool)

    def with_potential(self, potential: Potential, nu=None) -> "EnergySpec":
        return EnergySpec(self.space, self.kernel, self.phi, potential,
                          self.nu if nu is None else nu)

    def restrict(self, u_hat) -> np.ndarray:
        return np.asarray(u_hat, dtype=float)[self.space.omega_mask]


def _check_state(spec: EnergySpec, u_hat) -> np.ndarray:
    u = np.asarray(u_hat, dtype=float)
    if u.shape != (spec.space.n_points,):
        raise EnergyError(f"expected an extension of length {spec.space.n_points}, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise EnergyError("state has non-finite entries")
    if np.any(u[spec.pinned_mask] != 0):
        raise EnergyError("Dirichlet constraint violated: state is nonzero on the mask")
    return u


def pair_energy(kernel: KernelMatrix, p: float, u) -> float:
    """``(1/p) sum_{i<j} w_ij |u_i - u_j|^p``."""
    d = u[kernel.rows] - u[kernel.cols]
    return float(np.sum(kernel.weights * np.abs(d) ** p) / p)


def potential_energy(spec: EnergySpec, u) -> float:
    rc = spec.robin_coeff
    if not rc.any():
        return 0.0
    q = spec.qB
    return float(np.sum(rc * np.abs(u) ** q) / q)


def energy(spec: EnergySpec, u_hat) -> float:
    """``E_{B,nu}(u_hat)``; ordered-pair sum with prefactor ``1/(2p)``."""
    u = _check_state(spec, u_hat)
    return pair_energy(spec.kernel, spec.p, u) + potential_energy(spec, u)


def raw_gradient(spec: EnergySpec, u) -> np.ndarray:
    """Coordinate gradient without input checks or Dirichlet masking."""
    u = np.asarray(u, dtype=float)
    k = spec.kernel
    n = spec.space.n_points
    flux = k.weights * spec.phi.phi_prime(u[k.rows] - u[k.cols])
    g = np.bincount(k.rows, flux, minlength=n) - np.bincount(k.cols, flux, minlength=n)
    rc = spec.robin_coeff
    if rc.any():
        q = spec.qB
        g += rc * np.abs(u) ** (q - 2) * u
    return g


def gradient(spec: EnergySpec, u_hat) -> np.ndarray:
    """Coordinate gradient ``sum_j w_ij phi'(u_i - u_j) + nu_i beta_i(u_i)``.

    Entries on the Dirichlet mask are reported as 0.
    """
    g = raw_gradient(spec, _check_state(spec, u_hat))
    g[spec.pinned_mask] = 0.0
    return g


def pv_apply(spec: EnergySpec, u_hat, epsilons: Sequence[float]) -> list[np.ndarray]:
    """Truncated principal values ``(1/mu_i) sum_{|x_i-x_j|>eps} w_ij phi'(u_i-u_j)``.

    One vector per entry of ``epsilons`` (strictly decreasing, positive).
    """
    coords = spec.space.coords
    if coords is None:
        raise EnergyError("pv_apply needs point coordinates")
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise EnergyError("epsilons must be positive and strictly decreasing")
    u = np.asarray(u_hat, dtype=float)
    k = spec.kernel
    n = spec.space.n_points
    dist = np.linalg.norm(coords[k.rows] - coords[k.cols], axis=1)
    flux = k.weights * spec.phi.phi_prime(u[k.rows] - u[k.cols])
    out = []
    for e in eps:
        f = np.where(dist > e, flux, 0.0)
        g = np.bincount(k.rows, f, minlength=n) - np.bincount(k.cols, f, minlength=n)
        out.append(g / spec.space.mu)
    return out
