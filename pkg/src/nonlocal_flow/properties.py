"""
Numerical certificates for the qualitative properties of the energies and
their semigroups: contraction and Beurling-Deny inequalities, domination,
the scalar lemmas behind the ultracontractivity estimates, submarkovian
trajectory checks and decay diagnostics.

All ``*_gap`` functions return ``left - right`` of an inequality that should
be ``<= 0``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .energy import Dirichlet, EnergySpec, Neumann, PowerRobin, energy
from .exponents import HolderExponents, c_rp
from .flow import FlowConfig, Trajectory, run_flow
from .kernel import KernelMatrix, phi_prime
from .solver import SolveOptions, elliptic_extension
from .space import DiscreteSpace


# ---------------------------------------------------------------------------
# normal contractions

@dataclass(frozen=True)
class ContractionFn:
    """Normal contraction: ``half_positive``, ``p_alpha`` or ``clamp``."""

    kind: str
    alpha: float = 1.0
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("half_positive", "p_alpha", "clamp"):
            raise ValueError(f"unknown contraction {self.kind!r}")
        if self.kind == "p_alpha" and not self.alpha > 0:
            raise ValueError("p_alpha needs alpha > 0")
        if self.kind == "clamp" and not self.lo <= 0 <= self.hi:
            raise ValueError("clamp needs lo <= 0 <= hi")

    @classmethod
    def half_positive(cls):
        return cls("half_positive")

    @classmethod
    def p_alpha(cls, alpha: float):
        return cls("p_alpha", alpha=alpha)

    @classmethod
    def clamp(cls, lo: float, hi: float):
        return cls("clamp", lo=lo, hi=hi)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "half_positive":
            return 0.5 * np.maximum(s, 0.0)
        if self.kind == "p_alpha":
            a = self.alpha
            return 0.5 * (np.maximum(s + a, 0.0) - np.maximum(a - s, 0.0))
        return np.clip(s, self.lo, self.hi)

    def certificate(self, lim: float = 1e3, n: int = 200_001) -> bool:
        """Sampled check of monotonicity, ``c(0) = 0`` and the 1-Lipschitz bound."""
        s = np.linspace(-lim, lim, n)
        v = self(s)
        dv = np.diff(v)
        ds = np.diff(s)
        return bool(self(0.0) == 0 and np.all(dv >= 0) and np.all(dv <= ds * (1 + 1e-12)))


# ---------------------------------------------------------------------------
# reports

@dataclass
class CheckReport:
    name: str
    trials: int
    max_violation: float
    tolerance: float
    worst_case: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "trials": self.trials,
                "max_violation": self.max_violation, "tolerance": self.tolerance,
                "passed": self.passed, "worst_case": self.worst_case}


class _Worst:
    """Running maximum of ``violation / tolerance`` with the offending input."""

    def __init__(self):
        self.ratio = -math.inf
        self.violation = -math.inf
        self.tol = 0.0
        self.case: dict = {}

    def update(self, violation, tol, case=None):
        r = violation / tol
        if r > self.ratio:
            self.ratio, self.violation, self.tol = r, violation, tol
            self.case = case() if callable(case) else (case or {})

    def report(self, name, trials) -> CheckReport:
        return CheckReport(name, trials, float(self.violation), float(self.tol), self.case)


# ---------------------------------------------------------------------------
# energy-level inequalities

def _scale(*terms) -> float:
    return 1.0 + sum(abs(t) for t in terms)


def normal_contraction_gap(spec: EnergySpec, u_hat, v_hat, c: ContractionFn, with_scale=False):
    u = np.asarray(u_hat, dtype=float)
    v = np.asarray(v_hat, dtype=float)
    d = c(u - v)
    terms = (energy(spec, u - d), energy(spec, v + d), energy(spec, u), energy(spec, v))
    gap = terms[0] + terms[1] - terms[2] - terms[3]
    return (gap, _scale(*terms)) if with_scale else gap


class InducedEnergy:
    """``E^{L2}(u) = min over extensions`` evaluated with cached extensions."""

    def __init__(self, spec: EnergySpec, opts: SolveOptions | None = None):
        self.spec = spec
        self.opts = opts or SolveOptions(tol=1e-12)
        self._cache: dict = {}

    def __call__(self, u) -> float:
        u = np.asarray(u, dtype=float)
        key = u.tobytes()
        if key not in self._cache:
            _, rep = elliptic_extension(self.spec, u, self.opts)
            if not rep.converged:
                raise RuntimeError("extension solve failed inside induced energy")
            self._cache[key] = rep.energy_value
        return self._cache[key]


def beurling_deny_gaps(spec: EnergySpec, u, v, alpha: float, opts: SolveOptions | None = None,
                       with_scale=False):
    """Order-preservation and ``L^infty``-contraction gaps of the induced energy."""
    E = InducedEnergy(spec, opts)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    Eu, Ev = E(u), E(v)
    a1, a2 = E(0.5 * (u + np.minimum(u, v))), E(0.5 * (v + np.maximum(u, v)))
    pa = ContractionFn.p_alpha(alpha)(u - v)
    b1, b2 = E(v + pa), E(u - pa)
    op_gap = a1 + a2 - Eu - Ev
    linf_gap = b1 + b2 - Eu - Ev
    if with_scale:
        return op_gap, linf_gap, _scale(a1, a2, Eu, Ev), _scale(b1, b2, Eu, Ev)
    return op_gap, linf_gap


def _potential_profile(spec: EnergySpec):
    """Per point: ``inf`` for Dirichlet, else ``(coefficient, q)``."""
    n = spec.space.n_points
    pinned = spec.pinned_mask
    rc = spec.robin_coeff
    q = spec.qB
    return [("inf", None) if pinned[i] else (float(rc[i]), q) for i in range(n)]


def domination_hypothesis(spec1: EnergySpec, spec2: EnergySpec) -> list[str]:
    """Pointwise sufficient conditions for ``S1`` dominated by ``S2`` (empty list: all hold).

    With power potentials ``B_k = c_k |s|^q_k / q_k`` (and ``c = inf`` on a
    Dirichlet mask) the conditions hold at a point when ``c2 = 0``, or
    ``c1 = inf``, or ``q1 = q2`` and ``c2 <= c1``.
    """
    problems = []
    if spec1.space is not spec2.space and not (
            np.array_equal(spec1.space.mu, spec2.space.mu)
            and np.array_equal(spec1.space.omega_mask, spec2.space.omega_mask)):
        problems.append("specs live on different spaces")
    k1, k2 = spec1.kernel, spec2.kernel
    if k1 is not k2 and not (np.array_equal(k1.rows, k2.rows) and np.array_equal(k1.cols, k2.cols)
                             and np.array_equal(k1.weights, k2.weights)):
        problems.append("specs use different kernels")
    if spec1.p != spec2.p:
        problems.append("specs use different exponents p")
    for i, (b1, b2) in enumerate(zip(_potential_profile(spec1), _potential_profile(spec2))):
        c1, q1 = b1
        c2, q2 = b2
        if c2 == "inf":
            if c1 != "inf":
                problems.append(f"point {i}: dominating spec is Dirichlet, dominated is not")
            continue
        if c2 == 0 or c1 == "inf":
            continue
        if q1 != q2 or c2 > c1:
            problems.append(f"point {i}: potential {c2}|s|^{q2}/{q2} not below {c1}|s|^{q1}/{q1}")
    return problems


class HypothesisError(ValueError):
    pass


def domination_functional_gap(spec1: EnergySpec, spec2: EnergySpec, u_hat, v_hat, with_scale=False):
    """Domination functional of ``spec1`` (dominated) against ``spec2`` (dominating)."""
    problems = domination_hypothesis(spec1, spec2)
    if problems:
        raise HypothesisError("; ".join(problems))
    u = np.asarray(u_hat, dtype=float)
    v = np.asarray(v_hat, dtype=float)
    au = np.abs(u)
    w1 = 0.5 * np.maximum(au + np.minimum(au, v), 0.0) * np.sign(u)
    w2 = 0.5 * np.maximum(v + np.maximum(au, v), 0.0)
    terms = (energy(spec1, w1), energy(spec2, w2), energy(spec1, u), energy(spec2, v))
    gap = terms[0] + terms[1] - terms[2] - terms[3]
    return (gap, _scale(*terms)) if with_scale else gap


def pairing(kernel: KernelMatrix, p: float, a, b) -> float:
    """``F(a, b) = sum over ordered pairs w_ij phi'_p(a_i - a_j)(b_i - b_j)``."""
    da = a[kernel.rows] - a[kernel.cols]
    db = b[kernel.rows] - b[kernel.cols]
    return 2.0 * float(np.sum(kernel.weights * phi_prime(p, da) * db))


def comp_energy_gap(spec: EnergySpec, u_hat, r: float, with_scale=False):
    p = spec.p
    u = np.asarray(u_hat, dtype=float)
    au = np.abs(u)
    w = au ** ((r - 2) / p) * u
    lhs = c_rp(r, p) * pairing(spec.kernel, p, w, w)
    rhs = pairing(spec.kernel, p, u, au ** (r - 2) * u)
    return (lhs - rhs, _scale(lhs, rhs)) if with_scale else lhs - rhs


# ---------------------------------------------------------------------------
# scalar lemmas (vectorized)

def _odd(s, e):
    s = np.asarray(s, dtype=float)
    return np.abs(s) ** (e - 1) * np.sign(s)


def lemma_g_terms(z, t, p, r):
    first = _odd(z - t, p) * (_odd(z, r) - _odd(t, r))
    second = c_rp_vec(r, p) * np.abs(np.abs(z) ** ((r - 2) / p) * z
                                     - np.abs(t) ** ((r - 2) / p) * t) ** p
    return first, second


def c_rp_vec(r, p):
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(r < 2) or np.any(p < 2):
        raise ValueError("c_rp requires r, p >= 2")
    return (r - 1) * (p / (p + r - 2)) ** p


def lemma_g_gap(z, t, p, r):
    """``-g(z, t)``; nonpositive when the lemma holds."""
    first, second = lemma_g_terms(z, t, p, r)
    return second - first


def lemma_F_terms(a, b, c, p, r):
    d = c - (a - b)
    F = (_odd(a, p) - _odd(b, p)) * (_odd(c, r) - _odd(d, r))
    bound = 2.0 ** (2 - np.asarray(p)) * 2.0 ** (2 - np.asarray(r)) * np.abs(a - b) ** (p + r - 2)
    return F, bound


def lemma_F_gap(a, b, c, p, r):
    """``C_p C_r |a-b|^{p+r-2} - F(a, b, c, d)`` with ``d = c - (a - b)``."""
    F, bound = lemma_F_terms(a, b, c, p, r)
    return bound - F


def scalar_lemma_suite(n: int = 100_000, seed: int = 0, bound: float = 10.0,
                       p_range=(2.0, 6.0), tol: float = 1e-12) -> list[CheckReport]:
    rng = np.random.default_rng(seed)
    out = []
    p = rng.uniform(*p_range, n)
    r = rng.uniform(*p_range, n)
    z, t = rng.uniform(-bound, bound, (2, n))
    first, second = lemma_g_terms(z, t, p, r)
    rel = (second - first) / (1 + np.abs(first) + np.abs(second))
    k = int(np.argmax(rel))
    out.append(CheckReport("lemma_g", n, float(rel[k]), tol,
                           {"z": z[k], "t": t[k], "p": p[k], "r": r[k]}))
    a, b, c = rng.uniform(-bound, bound, (3, n))
    F, bnd = lemma_F_terms(a, b, c, p, r)
    rel = (bnd - F) / (1 + np.abs(F) + np.abs(bnd))
    k = int(np.argmax(rel))
    out.append(CheckReport("lemma_F", n, float(rel[k]), tol,
                           {"a": a[k], "b": b[k], "c": c[k], "p": p[k], "r": r[k]}))
    return out


# ---------------------------------------------------------------------------
# trajectories

def _restricted_norms(mu, d):
    return float(np.max(np.abs(d))) if d.size else 0.0, float(np.sqrt(mu @ d**2))


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def markov_suite(spec: EnergySpec, cfg: FlowConfig, seed: int, trials: int,
                 opts: SolveOptions | None = None, jobs: int = 1,
                 sampler: Callable | None = None) -> list[CheckReport]:
    """Paired flows from ``u0 <= v0``: order, ``L^infty`` and ``L^2`` contraction.

    The tolerance is ``100 * tol * scale`` with ``scale = max(1, |u0|, |v0|)``.
    """
    if spec.p < 2:
        raise ValueError("trajectory checks require p >= 2")
    opts = opts or SolveOptions()
    mu = spec.space.mu_omega
    n = spec.space.n_omega
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(trials):
        if sampler is not None:
            u0, v0 = sampler(rng)
        else:
            u0 = rng.normal(size=n)
            v0 = u0 + np.abs(rng.normal(size=n)) * (rng.random(n) < 0.7)
        pairs.append((u0, v0))

    def one(pair):
        u0, v0 = pair
        return run_flow(spec, u0, cfg, opts), run_flow(spec, v0, cfg, opts)

    results = _map(one, pairs, jobs)
    order, linf, l2 = _Worst(), _Worst(), _Worst()
    failures = []
    for k, ((u0, v0), (tu, tv)) in enumerate(zip(pairs, results)):
        if not (tu.ok and tv.ok):
            failures.append({"trial": k, "failure": tu.failure or tv.failure})
        scale = max(1.0, float(np.max(np.abs(u0))), float(np.max(np.abs(v0))))
        tol = 100 * opts.tol * scale
        inf0, l20 = _restricted_norms(mu, u0 - v0)
        for step, u, v in zip(tu.steps[1:], tu.states[1:], tv.states[1:]):
            d = u - v
            dinf, dl2 = _restricted_norms(mu, d)
            case = {"trial": k, "step": step}
            order.update(float(np.max(d)), tol, case)
            linf.update(dinf - inf0, tol, case)
            l2.update(dl2 - l20, tol, case)
    reports = [order.report("order_preserving", trials),
               linf.report("linf_contraction", trials),
               l2.report("l2_contraction", trials)]
    if failures:
        reports.append(CheckReport("flow_failures", trials, float(len(failures)), 0.0,
                                   {"failures": failures}))
    return reports


def domination_specs(space: DiscreteSpace, kernel: KernelMatrix, p: float,
                     kappa, qB: float = 2.0, nu=None, dirichlet_mask=None):
    """``(D, B, N)`` specs sharing space, kernel and ``p``.

    A scalar ``kappa`` is placed on the Dirichlet mask only, which keeps the
    Robin term below the Dirichlet constraint pointwise.
    """
    mask = ~space.omega_mask if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
    if np.ndim(kappa) == 0:
        kappa = np.where(mask, float(kappa), 0.0)
    kappa = np.asarray(kappa, dtype=float)
    sD = EnergySpec(space, kernel, p, Dirichlet(mask), nu)
    sB = EnergySpec(space, kernel, p, PowerRobin(kappa, qB), nu)
    sN = EnergySpec(space, kernel, p, Neumann(), nu)
    return sD, sB, sN


def domination_trajectory_suite(space: DiscreteSpace, kernel: KernelMatrix, p: float,
                                robin: dict, cfg: FlowConfig, u0,
                                opts: SolveOptions | None = None, jobs: int = 1,
                                dirichlet_mask=None) -> CheckReport:
    """``|S^D u0| <= S^B |u0| <= S^N |u0|`` at every recorded step.

    ``robin`` holds ``kappa`` (scalar or per point), optional ``q`` and ``nu``.
    """
    opts = opts or SolveOptions()
    sD, sB, sN = domination_specs(space, kernel, p, robin["kappa"], robin.get("q", 2.0),
                                  robin.get("nu"), dirichlet_mask)
    for a, b in ((sD, sB), (sB, sN)):
        problems = domination_hypothesis(a, b)
        if problems:
            raise HypothesisError("; ".join(problems))
    u0 = np.asarray(u0, dtype=float)
    runs = _map(lambda job: run_flow(job[0], job[1], cfg, opts),
                [(sD, u0), (sB, np.abs(u0)), (sN, np.abs(u0))], jobs)
    tD, tB, tN = runs
    tol = 100 * opts.tol * max(1.0, float(np.max(np.abs(u0))) if u0.size else 1.0)
    worst = _Worst()
    for step, uD, uB, uN in list(zip(tD.steps, tD.states, tB.states, tN.states))[1:]:
        worst.update(float(np.max(np.abs(uD) - uB)), tol, {"step": step, "link": "D<=B"})
        worst.update(float(np.max(uB - uN)), tol, {"step": step, "link": "B<=N"})
    rep = worst.report("domination_chain", 1)
    if not (tD.ok and tB.ok and tN.ok) or not (len(tD) == len(tB) == len(tN)):
        rep.max_violation = math.inf
        rep.worst_case = {"failure": tD.failure or tB.failure or tN.failure}
    return rep


# ---------------------------------------------------------------------------
# decay

@dataclass
class DecayReport:
    times: np.ndarray
    D: np.ndarray
    C_fit: np.ndarray
    monotone: bool
    max_increase: float
    degenerate: bool
    slope: float
    C_ratio: float
    neumann_rate: float | None
    exponents: HolderExponents

    def as_dict(self) -> dict:
        return {"monotone": self.monotone, "max_increase": self.max_increase,
                "degenerate": self.degenerate, "slope": self.slope,
                "C_ratio": self.C_ratio, "neumann_rate": self.neumann_rate,
                "alpha": self.exponents.alpha, "beta": self.exponents.beta,
                "gamma": self.exponents.gamma, "regime": self.exponents.regime}

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["time", "D", "C_fit"])
            for row in zip(self.times, self.D, self.C_fit):
                w.writerow(["%.17g" % x for x in row])


def decay_report(traj_u: Trajectory, traj_v: Trajectory, mu, q: float,
                 exps: HolderExponents, neumann: bool = False, tol: float = 0.0) -> DecayReport:
    """``D(t) = ||u(t) - v(t)||_inf``: hard monotonicity check plus fitted constants.

    The fitted ``C(t) = D(t) t^beta / ||u0 - v0||_q^gamma`` and the log-log
    slope are diagnostics only.  For Neumann data an additional rate ``C2``
    is fitted from ``log C(t) = log C1 + C2 t``.
    """
    if len(traj_u) < 2 or len(traj_u) != len(traj_v):
        raise ValueError("decay window is empty or trajectories are not paired")
    mu = np.asarray(mu, dtype=float)
    t = np.asarray(traj_u.times, dtype=float)
    D = np.array([np.max(np.abs(a - b)) if a.size else 0.0
                  for a, b in zip(traj_u.states, traj_v.states)])
    d0 = traj_u.states[0] - traj_v.states[0]
    norm_q = float((mu @ np.abs(d0) ** q) ** (1 / q))
    inc = float(np.max(np.diff(D))) if D.size > 1 else 0.0
    monotone = inc <= tol
    degenerate = bool(norm_q == 0 or np.all(D == 0))
    C = np.full_like(D, np.nan)
    slope = ratio = math.nan
    rate = None
    if not degenerate:
        pos = (t > 0) & (D > 0)
        C[pos] = D[pos] * t[pos] ** exps.beta / norm_q ** exps.gamma
        if pos.sum() >= 2:
            slope = float(np.polyfit(np.log(t[pos]), np.log(D[pos]), 1)[0])
            ratio = float(np.max(C[pos]) / np.min(C[pos]))
            if neumann:
                rate = float(np.polyfit(t[pos], np.log(C[pos]), 1)[0])
    return DecayReport(t, D, C, bool(monotone), inc, degenerate, slope, ratio, rate, exps)
