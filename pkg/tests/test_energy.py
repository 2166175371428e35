import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import coupled_interval, make_spec, random_graph, random_spec
from nonlocal_flow.energy import (Dirichlet, EnergyError, EnergySpec, Neumann, PowerRobin,
                                  energy, gradient, pv_apply)
from nonlocal_flow.kernel import KernelMatrix
from nonlocal_flow.space import DiscreteSpace, sample_euclidean


def two_nodes(p, potential=None, mask=(True, False)):
    space = DiscreteSpace([1.0, 1.0], list(mask))
    k = KernelMatrix.from_pairs(2, {(0, 1): 1.0})
    return EnergySpec(space, k, p, potential or Neumann())


class TestEnergyExamples:
    def test_constant_is_zero(self, rng):
        spec = random_spec(rng, kind="neumann")
        assert energy(spec, np.full(spec.space.n_points, 3.7)) == 0.0

    def test_two_nodes_p2(self):
        assert energy(two_nodes(2), [1.0, 0.0]) == pytest.approx(0.5)

    def test_two_nodes_robin(self):
        spec = two_nodes(2, PowerRobin(np.array([0.0, 2.0]), 2.0))
        assert energy(spec, [1.0, 3.0]) == pytest.approx(11.0)

    def test_dirichlet_violation(self):
        spec = two_nodes(2, Dirichlet(np.array([False, True])))
        assert energy(spec, [1.0, 0.0]) == pytest.approx(0.5)
        with pytest.raises(EnergyError):
            energy(spec, [1.0, 0.5])

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [1.0, np.inf], [1.0]])
    def test_bad_state(self, bad):
        with pytest.raises(EnergyError):
            energy(two_nodes(2), bad)

    def test_interior_dirichlet_rejected(self):
        with pytest.raises(EnergyError):
            two_nodes(2, Dirichlet(np.array([True, False])))

    def test_robin_exponent_below_two(self):
        with pytest.raises(EnergyError):
            PowerRobin(np.ones(2), 1.5)


class TestGradientExamples:
    def test_two_nodes_p2(self):
        np.testing.assert_allclose(gradient(two_nodes(2), [1.0, 0.0]), [1.0, -1.0])

    def test_two_nodes_p4(self):
        np.testing.assert_allclose(gradient(two_nodes(4), [2.0, 0.0]), [8.0, -8.0])

    def test_constant(self, rng):
        spec = random_spec(rng, kind="neumann")
        assert np.all(gradient(spec, np.ones(spec.space.n_points)) == 0)

    def test_dirichlet_masked_zero(self):
        spec = two_nodes(2, Dirichlet(np.array([False, True])))
        np.testing.assert_allclose(gradient(spec, [1.0, 0.0]), [1.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([2.0, 3.0, 4.0]),
       kind=st.sampled_from(["neumann", "robin", "dirichlet"]))
def test_finite_difference(seed, p, kind):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, n=int(rng.integers(3, 40)), p=p, kind=kind)
    free = ~spec.pinned_mask
    u = rng.normal(size=spec.space.n_points) * free
    v = rng.normal(size=spec.space.n_points) * free
    h = 1e-5
    fd = (energy(spec, u + h * v) - energy(spec, u - h * v)) / (2 * h)
    g = gradient(spec, u)
    scale = 1 + np.abs(g * v).sum() + energy(spec, u)
    assert abs(fd - g @ v) <= 1e-6 * scale


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["neumann", "robin"]))
def test_convex_even_and_balanced(seed, kind):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, kind=kind)
    u, v = rng.normal(size=(2, spec.space.n_points)) * 3
    mid = energy(spec, 0.5 * u + 0.5 * v)
    assert mid <= 0.5 * energy(spec, u) + 0.5 * energy(spec, v) + 1e-12
    assert energy(spec, -u) == energy(spec, u)
    if kind == "neumann":
        g = gradient(spec, u)
        assert abs(g.sum()) <= 1e-12 * np.abs(g).sum()


class TestPV:
    def test_constant_zero(self):
        space, k = coupled_interval(10)
        spec = EnergySpec(space, k, 2.0)
        for g in pv_apply(spec, np.ones(space.n_points), [0.5, 0.2, 0.1]):
            assert np.all(g == 0)

    def test_large_epsilon_empty(self):
        space, k = coupled_interval(10)
        spec = EnergySpec(space, k, 2.0)
        out = pv_apply(spec, np.sin(space.coords[:, 0]), [10.0, 0.1])
        assert np.all(out[0] == 0) and np.any(out[1] != 0)

    def test_smooth_sample_converges(self):
        # theta p < p - 1: p = 2, theta = 0.3
        space, k = sample_euclidean([[0, 1]], [[0, 1]], 400, 0.3, 2.0, "full")
        spec = EnergySpec(space, k, 2.0)
        u = np.sin(space.coords[:, 0])
        # radii off the lattice so that symmetric pairs enter the window together
        eps = [0.4 * 1.037 / 2**k for k in range(7)]
        out = pv_apply(spec, u, eps)
        interior = (space.coords[:, 0] > 0.45) & (space.coords[:, 0] < 0.55)
        diffs = [np.max(np.abs(a - b)[interior]) for a, b in zip(out[:-1], out[1:])]
        assert all(d2 < d1 for d1, d2 in zip(diffs[:-1], diffs[1:]))

    def test_full_truncation_matches_gradient(self, rng):
        space, k = coupled_interval(8, p=3.0)
        spec = EnergySpec(space, k, 3.0)
        u = rng.normal(size=space.n_points)
        last = pv_apply(spec, u, [1e-9])[0]
        np.testing.assert_allclose(last, gradient(spec, u) / space.mu, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("eps", [[], [0.1, 0.2], [0.1, -0.1]])
    def test_bad_epsilons(self, eps):
        space, k = coupled_interval(6)
        with pytest.raises(EnergyError):
            pv_apply(EnergySpec(space, k, 2.0), np.zeros(space.n_points), eps)

    def test_needs_coordinates(self, rng):
        space, k = random_graph(rng, 5)
        with pytest.raises(EnergyError):
            pv_apply(EnergySpec(space, k, 2.0), np.zeros(5), [0.1])
