"""
Ultracontractivity exponents ``(alpha, beta, gamma)`` and related constants.

Two exponent families are used, one for ``p < N/theta`` (power ``N/(theta p)``)
and one for ``p > N/theta`` (power ``theta p / N``).  At ``p = N/theta`` the
triple ``(0, 1, q/(q+p-2))`` is returned as stated.  Note that the limit of
either family at ``p = N/theta`` has ``beta = 1/(q+p-2)``, which is not 1 in
general; the critical triple is therefore not a continuous extension.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from scipy import integrate


@dataclass(frozen=True)
class HolderExponents:
    alpha: float
    beta: float
    gamma: float
    regime: str

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma)


def regime_of(N: int, theta: float, p: float) -> str:
    crit = N / theta
    if math.isclose(p, crit, rel_tol=1e-12, abs_tol=0.0):
        return "critical"
    return "subcritical" if p < crit else "supercritical"


def _validate(N, theta, p, q):
    if N < 1:
        raise ValueError("dimension must be >= 1")
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in ]0,1[, got {theta}")
    if not p >= 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if not (q >= 1 and math.isfinite(q)):
        raise ValueError(f"q must lie in [1, inf[, got {q}")


def exponents(N: int, theta: float, p: float, q: float) -> HolderExponents:
    _validate(N, theta, p, q)
    regime = regime_of(N, theta, p)
    if p == 2:
        return HolderExponents(0.0, N / (2 * theta * q), 1.0, regime)
    ratio = q / (q + p - 2)
    if regime == "critical":
        return HolderExponents(0.0, 1.0, ratio, regime)
    if regime == "subcritical":
        gamma = ratio ** (N / (theta * p))
        alpha = (N - theta * p) / N * (1 - gamma)
    else:
        gamma = ratio ** (theta * p / N)
        alpha = (theta * p - N) / N * (1 - gamma)
    beta = (1 - gamma) / (p - 2)
    return HolderExponents(alpha, beta, gamma, regime)


def c_rp(r: float, p: float) -> float:
    """``(r-1) (p/(p+r-2))^p``."""
    if not (r >= 2 and p >= 2):
        raise ValueError("c_rp requires r, p >= 2")
    return (r - 1) * (p / (p + r - 2)) ** p


def int_P_check(N: int, theta: float, p: float, q: float, t: float, tau: float):
    """Quadrature and closed form of ``int_0^tau P(xi) dxi``.

    ``P(xi) = (N(p-2)/(theta p)) / (t q + (t - xi)(p - 2))``.
    """
    _validate(N, theta, p, q)
    if not p > 2:
        raise ValueError("int_P_check requires p > 2")
    if not 0 <= tau < t:
        raise ValueError("need 0 <= tau < t")
    k = N * (p - 2) / (theta * p)
    quad, _ = integrate.quad(lambda xi: k / (t * q + (t - xi) * (p - 2)), 0.0, tau,
                             epsabs=1e-15, epsrel=1e-13)
    closed = N / (theta * p) * math.log(t * (q + p - 2) / (t * q + (t - tau) * (p - 2)))
    return quad, closed


def write_table(rows: Iterable[tuple], path) -> None:
    """CSV ``N,theta,p,q,alpha,beta,gamma,regime`` for ``(N, theta, p, q)`` tuples."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["N", "theta", "p", "q", "alpha", "beta", "gamma", "regime"])
        for N, theta, p, q in rows:
            e = exponents(N, theta, p, q)
            w.writerow([N] + ["%.17g" % v for v in (theta, p, q, e.alpha, e.beta, e.gamma)]
                       + [e.regime])
