import numpy as np
import pytest

from nonlocal_flow.energy import Dirichlet, EnergySpec, Neumann, PowerRobin
from nonlocal_flow.kernel import KernelMatrix
from nonlocal_flow.space import DiscreteSpace, sample_euclidean


def random_graph(rng, n, n_omega=None, density=0.4, mu_range=(0.5, 2.0)):
    """Connected random graph: a random spanning tree plus extra edges."""
    n_omega = n_omega or max(1, (2 * n) // 3)
    perm = rng.permutation(n)
    pairs = {}
    for k in range(1, n):
        a, b = perm[k], perm[rng.integers(k)]
        pairs[(min(a, b), max(a, b))] = rng.uniform(0.2, 2.0)
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in pairs and rng.random() < density:
                pairs[(i, j)] = rng.uniform(0.2, 2.0)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, n_omega, replace=False)] = True
    mu = rng.uniform(*mu_range, size=n)
    return DiscreteSpace(mu, mask), KernelMatrix.from_pairs(n, pairs)


def make_spec(space, kernel, p, kind="neumann", kappa=1.0, q=2.0, nu=None):
    ext = ~space.omega_mask
    if kind == "neumann":
        pot = Neumann()
    elif kind == "robin":
        pot = PowerRobin(np.where(ext, kappa, 0.0), q)
    elif kind == "dirichlet":
        pot = Dirichlet(ext)
    else:
        raise ValueError(kind)
    return EnergySpec(space, kernel, p, pot, nu)


def random_spec(rng, n=None, p=None, kind=None):
    n = n or int(rng.integers(4, 16))
    p = p if p is not None else float(rng.uniform(2, 5))
    kind = kind or rng.choice(["neumann", "robin", "dirichlet"])
    space, kernel = random_graph(rng, n)
    return make_spec(space, kernel, p, kind, kappa=rng.uniform(0.5, 2), q=rng.uniform(2, 4))


def coupled_interval(grid=12, p=2.0, theta=0.5):
    return sample_euclidean([[0, 1]], [[-0.5, 1.5]], grid, theta, p, "coupled")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
