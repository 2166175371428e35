"""
Finite measure spaces: weighted graphs and midpoint samples of boxes.

A :class:`DiscreteSpace` carries per-point measure weights ``mu`` and a
mask selecting the points of ``Omega``; the remaining points form the
exterior on which the nonlocal exterior condition is imposed.
"""
from __future__ import annotations

import io
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .kernel import KernelMatrix, normalization_constant


class SpaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    mu: np.ndarray
    omega_mask: np.ndarray
    coords: np.ndarray | None = None
    labels: tuple | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        mask = np.asarray(self.omega_mask, dtype=bool)
        if mu.ndim != 1 or mask.shape != mu.shape:
            raise SpaceError("mu and omega_mask must be 1-d arrays of equal length")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise SpaceError("measure weights must be finite and > 0")
        if not mask.any():
            raise SpaceError("Omega must contain at least one point")
        coords = self.coords
        if coords is not None:
            coords = np.asarray(coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != mu.size or coords.shape[1] < 1:
                raise SpaceError("coords must have shape (n_points, d) with d >= 1")
            coords.setflags(write=False)
        if self.labels is not None and len(self.labels) != mu.size:
            raise SpaceError("labels must have one entry per point")
        mu.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "omega_mask", mask)
        object.__setattr__(self, "coords", coords)

    @property
    def n_points(self) -> int:
        return int(self.mu.size)

    @property
    def omega_idx(self) -> np.ndarray:
        return np.flatnonzero(self.omega_mask)

    @property
    def exterior_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.omega_mask)

    @property
    def n_omega(self) -> int:
        return int(self.omega_mask.sum())

    @property
    def n_exterior(self) -> int:
        return self.n_points - self.n_omega

    @property
    def mu_omega(self) -> np.ndarray:
        return self.mu[self.omega_mask]

    def extend_by_zero(self, u) -> np.ndarray:
        """Full-length vector equal to ``u`` on Omega and 0 elsewhere."""
        out = np.zeros(self.n_points)
        out[self.omega_mask] = u
        return out


@dataclass(frozen=True)
class SpaceBuildReport:
    n_omega: int
    n_exterior: int
    reachable: bool
    unreachable_indices: tuple = field(default_factory=tuple)


def check_thickness(space: DiscreteSpace, kernel: KernelMatrix) -> SpaceBuildReport:
    """Breadth-first reachability from Omega along the support of the kernel."""
    n = space.n_points
    m = kernel.csr
    seen = space.omega_mask.copy()
    queue = deque(space.omega_idx.tolist())
    while queue:
        i = queue.popleft()
        for j in m.indices[m.indptr[i]:m.indptr[i + 1]]:
            if not seen[j]:
                seen[j] = True
                queue.append(int(j))
    missing = tuple(int(i) for i in np.flatnonzero(~seen))
    return SpaceBuildReport(space.n_omega, n - space.n_omega, not missing, missing)


# ---------------------------------------------------------------------------
# graphs

def _parse_index(tok: str, lineno: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise SpaceError(f"line {lineno}: bad vertex index {tok!r}") from None
    if v < 0:
        raise SpaceError(f"line {lineno}: negative vertex index {v}")
    return v


def load_graph(edge_list: TextIO | str, vertex_weights: dict | None = None):
    """Read a weighted graph in edge-list format.

    Format: ``#`` comments, one ``omega: i1 i2 ...`` header, optional
    ``vertices: n`` header, optional ``weight: i m_i`` lines, and edge lines
    ``i j b`` with ``b > 0``.  Without a ``vertices`` header the vertex set
    is ``0 .. max index``.

    Returns
    -------
    (DiscreteSpace, KernelMatrix)
    """
    if isinstance(edge_list, str):
        edge_list = io.StringIO(edge_list)
    omega = None
    n_declared = None
    weights: dict[int, float] = {}
    edges: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(edge_list, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" in line:
            key, _, rest = line.partition(":")
            key = key.strip().lower()
            toks = rest.split()
            if key == "omega":
                if omega is not None:
                    raise SpaceError(f"line {lineno}: duplicate omega header")
                omega = [_parse_index(t, lineno) for t in toks]
            elif key == "vertices":
                n_declared = _parse_index(toks[0], lineno) if toks else None
            elif key == "weight":
                if len(toks) != 2:
                    raise SpaceError(f"line {lineno}: expected 'weight: i m_i'")
                i, m = _parse_index(toks[0], lineno), float(toks[1])
                if not (m > 0 and math.isfinite(m)):
                    raise SpaceError(f"line {lineno}: vertex weight must be > 0")
                weights[i] = m
            else:
                raise SpaceError(f"line {lineno}: unknown header {key!r}")
            continue
        toks = line.split()
        if len(toks) != 3:
            raise SpaceError(f"line {lineno}: expected 'i j b'")
        i, j = _parse_index(toks[0], lineno), _parse_index(toks[1], lineno)
        b = float(toks[2])
        if i == j:
            raise SpaceError(f"line {lineno}: self-loop rejected")
        if not math.isfinite(b) or b < 0:
            raise SpaceError(f"line {lineno}: negative weight {b}")
        if b == 0:
            raise SpaceError(f"line {lineno}: edge weight must be > 0")
        key = (min(i, j), max(i, j))
        if key in edges and edges[key] != b:
            raise SpaceError(f"line {lineno}: duplicate edge {key} with conflicting weight")
        edges[key] = b
    if not omega:
        raise SpaceError("Omega set is empty (missing 'omega:' header)")
    if vertex_weights:
        weights.update({int(k): float(v) for k, v in vertex_weights.items()})
    referenced = set(omega) | set(weights) | {v for e in edges for v in e}
    n = n_declared if n_declared is not None else max(referenced) + 1
    bad = sorted(v for v in referenced if v >= n)
    if bad:
        raise SpaceError(f"vertex referenced but undeclared: {bad[0]}")
    if any(not (m > 0) for m in weights.values()):
        raise SpaceError("vertex weights must be > 0")
    mu = np.ones(n)
    for i, m in weights.items():
        mu[i] = m
    mask = np.zeros(n, dtype=bool)
    mask[omega] = True
    space = DiscreteSpace(mu, mask)
    return space, KernelMatrix.from_pairs(n, edges)


def dump_graph(space: DiscreteSpace, kernel: KernelMatrix, stream: TextIO | None = None) -> str:
    """Serialize to the edge-list format; floats use ``repr`` so reading back is exact."""
    lines = [f"vertices: {space.n_points}",
             "omega: " + " ".join(str(i) for i in space.omega_idx)]
    for i, m in enumerate(space.mu):
        if m != 1.0:
            lines.append(f"weight: {i} {float(m)!r}")
    for i, j, w in zip(kernel.rows, kernel.cols, kernel.weights):
        lines.append(f"{i} {j} {float(w)!r}")
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


# ---------------------------------------------------------------------------
# Euclidean samples

@dataclass(frozen=True)
class InteractionRule:
    """Which pairs interact: ``full``, ``coupled`` or ``range`` (with radius)."""

    kind: str = "coupled"
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in ("full", "coupled", "range"):
            raise SpaceError(f"unknown interaction rule {self.kind!r}")
        if self.kind == "range" and not (self.radius and self.radius > 0):
            raise SpaceError("range rule needs a positive radius")

    @classmethod
    def parse(cls, rule) -> "InteractionRule":
        if isinstance(rule, cls):
            return rule
        if isinstance(rule, str):
            return cls(rule)
        if isinstance(rule, dict):
            return cls(rule.get("kind", "coupled"), rule.get("radius"))
        kind, radius = rule
        return cls(kind, radius)


def _as_box(box, dim=None) -> np.ndarray:
    b = np.asarray(box, dtype=float)
    if b.ndim == 1:
        b = b[None, :]
    if b.shape[1] != 2 or np.any(b[:, 1] <= b[:, 0]):
        raise SpaceError(f"invalid box {box!r}")
    if dim is not None and b.shape[0] != dim:
        raise SpaceError("boxes must have the same dimension")
    return b


def sample_euclidean(omega_box, hat_box, grid, theta: float, p: float, rule="coupled"):
    """Midpoint sample of ``hat_box`` with the fractional kernel.

    ``w_ij = C_{N,theta,p} |x_i - x_j|^{-(N + theta p)} mu_i mu_j`` on the
    pairs admitted by ``rule``; Omega membership is decided by cell centers.

    Parameters
    ----------
    omega_box, hat_box : sequence of (lo, hi) per axis
    grid : int or sequence of int
        Cells per axis of ``hat_box`` (>= 2).
    """
    if not 0 < theta < 1:
        raise SpaceError(f"theta must lie in ]0,1[, got {theta}")
    if not p > 1:
        raise SpaceError(f"p must be > 1, got {p}")
    hat = _as_box(hat_box)
    N = hat.shape[0]
    om = _as_box(omega_box, N)
    if np.any(om[:, 0] < hat[:, 0]) or np.any(om[:, 1] > hat[:, 1]):
        raise SpaceError("Omega box must lie inside the hat box")
    counts = np.broadcast_to(np.asarray(grid, dtype=int), (N,))
    if np.any(counts < 2):
        raise SpaceError("grid must have at least 2 cells per axis")
    rule = InteractionRule.parse(rule)
    h = (hat[:, 1] - hat[:, 0]) / counts
    if rule.kind == "range" and rule.radius <= h.max():
        raise SpaceError("range radius must exceed the grid spacing")

    axes = [hat[k, 0] + (np.arange(counts[k]) + 0.5) * h[k] for k in range(N)]
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    mu = np.full(len(pts), float(np.prod(h)))
    inside = np.all((pts >= om[:, 0]) & (pts <= om[:, 1]), axis=1)
    space = DiscreteSpace(mu, inside, pts)

    C = normalization_constant("cnsp", N, theta, p)
    dist = squareform(pdist(pts))
    n = len(pts)
    admit = ~np.eye(n, dtype=bool)
    if rule.kind == "coupled":
        admit &= inside[:, None] | inside[None, :]
    elif rule.kind == "range":
        admit &= dist <= rule.radius
    i, j = np.nonzero(np.triu(admit, k=1))
    w = C * dist[i, j] ** (-(N + theta * p)) * mu[i] * mu[j]
    return space, KernelMatrix(i, j, w, n)


def path_graph(n: int, omega: Iterable[int], weight: float = 1.0, mu: Sequence[float] | None = None):
    """Convenience constructor: the path ``0 - 1 - ... - n-1``."""
    mask = np.zeros(n, dtype=bool)
    mask[list(omega)] = True
    space = DiscreteSpace(np.ones(n) if mu is None else mu, mask)
    k = KernelMatrix(np.arange(n - 1), np.arange(1, n), np.full(n - 1, float(weight)), n)
    return space, k
