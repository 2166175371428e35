import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from conftest import coupled_interval, make_spec, random_graph, random_spec
from nonlocal_flow.energy import Dirichlet, EnergySpec, Neumann, PowerRobin
from nonlocal_flow.kernel import KernelMatrix
from nonlocal_flow.solver import (SolveOptions, UnboundedProblemError, elliptic_extension,
                                  linear_extension_explicit, minimize, residual, solve_elliptic)
from nonlocal_flow.space import DiscreteSpace, path_graph


def dense_laplacian(spec):
    W = spec.kernel.dense()
    return np.diag(W.sum(axis=1) + spec.robin_coeff) - W


def three_node(robin=False):
    space = DiscreteSpace(np.ones(3), [True, True, False])
    k = KernelMatrix.from_pairs(3, {(0, 2): 1.0, (1, 2): 3.0})
    pot = PowerRobin(np.array([0.0, 0.0, 4.0])) if robin else Neumann()
    return EnergySpec(space, k, 2.0, pot)


class TestMinimize:
    def test_decoupled_quadratic(self, rng):
        space = DiscreteSpace(rng.uniform(0.5, 2, 5), [True] * 5)
        spec = EnergySpec(space, KernelMatrix.empty(5), 3.0)
        c, f = rng.normal(size=5), rng.normal(size=5)
        x, rep = minimize(spec, anchor=(c, 0.3), forcing=f)
        assert rep.converged
        np.testing.assert_allclose(x, c + 0.3 * f, rtol=1e-12)

    def test_two_node_anchor(self):
        space, k = path_graph(2, [0, 1])
        spec = EnergySpec(space, k, 2.0)
        x, rep = minimize(spec, anchor=(np.array([1.0, 0.0]), 1.0))
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        oracle = np.linalg.solve(np.eye(2) + L, [1.0, 0.0])
        np.testing.assert_allclose(x, oracle, atol=1e-12)
        np.testing.assert_allclose(x, [2 / 3, 1 / 3], atol=1e-12)

    def test_dirichlet_pin(self):
        space, k = path_graph(2, [0])
        spec = EnergySpec(space, k, 2.0, Dirichlet(np.array([False, True])))
        x, rep = solve_elliptic(spec, [1.0])
        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-12)

    def test_unbounded_detected(self, rng):
        spec = random_spec(rng, kind="neumann")
        with pytest.raises(UnboundedProblemError):
            solve_elliptic(spec, np.ones(spec.space.n_omega))

    def test_pin_conflicts_with_dirichlet(self):
        space, k = path_graph(2, [0])
        spec = EnergySpec(space, k, 2.0, Dirichlet(np.array([False, True])))
        with pytest.raises(ValueError):
            minimize(spec, pinned={1: 2.0})

    def test_nonconvergence_reported(self, rng):
        spec = random_spec(rng, n=15, p=4.0, kind="neumann")
        u = rng.normal(size=spec.space.n_omega)
        x, rep = elliptic_extension(spec, u, SolveOptions(tol=1e-14, max_sweeps=1))
        assert rep.sweeps == 1
        assert rep.converged == (rep.final_residual <= rep.tolerance)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([1.5, 2.0, 3.0, 5.0]),
           kind=st.sampled_from(["neumann", "robin", "dirichlet"]))
    def test_objective_never_increases(self, seed, p, kind):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, p=p, kind=kind)
        c = rng.normal(size=spec.space.n_omega) * 5
        x, rep = minimize(spec, anchor=(c, 0.2))
        assert rep.converged
        assert rep.max_objective_increase <= 1e-12 * (1 + abs(rep.objective_value))


class TestElliptic:
    # for p > 2 the gradient scales like |u_i - u_j|^{p-1}, so a residual of
    # tol pins the state only to about tol^{1/(p-1)}
    @pytest.mark.parametrize("p", [2.0, 3.5])
    def test_neumann_zero_forcing_constant(self, rng, p):
        spec = random_spec(rng, p=p, kind="neumann")
        x0 = rng.normal(size=spec.space.n_points)
        x, rep = solve_elliptic(spec, np.zeros(spec.space.n_omega), x0=x0)
        assert rep.converged
        assert np.max(np.abs(residual(spec, x))) <= rep.tolerance
        assert np.ptp(x) <= (1e-8 if p == 2 else 10 * rep.tolerance ** (1 / (p - 1)))
        assert spec.space.mu @ x == pytest.approx(spec.space.mu @ x0, rel=1e-10)

    @pytest.mark.parametrize("p", [2.0, 3.0])
    def test_dirichlet_zero_forcing_zero(self, rng, p):
        spec = random_spec(rng, p=p, kind="dirichlet")
        x, rep = solve_elliptic(spec, np.zeros(spec.space.n_omega),
                                x0=rng.normal(size=spec.space.n_points) * ~spec.pinned_mask)
        assert rep.converged
        assert np.max(np.abs(x)) <= (1e-8 if p == 2 else 10 * rep.tolerance ** (1 / (p - 1)))

    @pytest.mark.parametrize("kind", ["robin", "dirichlet"])
    def test_p2_dense_oracle(self, rng, kind):
        spec = random_spec(rng, n=30, p=2.0, kind=kind)
        if kind == "robin":
            spec = make_spec(spec.space, spec.kernel, 2.0, "robin", kappa=1.3, q=2.0)
        f = rng.normal(size=spec.space.n_omega)
        x, rep = solve_elliptic(spec, f)
        free = ~spec.pinned_mask
        rhs = np.zeros(spec.space.n_points)
        rhs[spec.space.omega_mask] = spec.space.mu_omega * f
        oracle = np.zeros_like(rhs)
        oracle[free] = linalg.solve(dense_laplacian(spec)[np.ix_(free, free)], rhs[free],
                                    assume_a="pos")
        np.testing.assert_allclose(x, oracle, rtol=1e-9, atol=1e-9 * np.abs(oracle).max())

    def test_residual_small(self, rng):
        spec = random_spec(rng, p=3.5, kind="robin")
        f = rng.normal(size=spec.space.n_omega)
        x, rep = solve_elliptic(spec, f)
        r = residual(spec, x, f)
        assert np.max(np.abs(r)) <= rep.tolerance

    def test_residual_masks_dirichlet(self):
        space, k = path_graph(3, [0])
        spec = EnergySpec(space, k, 2.0, Dirichlet(np.array([False, False, True])))
        r = residual(spec, np.array([1.0, 0.5, 0.0]))
        assert r.mask.tolist() == [False, False, True]
        assert residual(EnergySpec(space, k, 2.0), np.ones(3)).filled(1.0).tolist() == [0, 0, 0]


class TestExtension:
    @pytest.mark.parametrize("robin, expected", [(False, 1.0), (True, 0.5)])
    def test_three_node(self, robin, expected):
        spec = three_node(robin)
        x, rep = elliptic_extension(spec, np.array([4.0, 0.0]))
        assert x[2] == pytest.approx(expected, abs=1e-12)
        assert linear_extension_explicit(spec, [4.0, 0.0])[2] == pytest.approx(expected, abs=1e-12)

    def test_empty_exterior(self, rng):
        space, k = random_graph(rng, 6, n_omega=6)
        spec = EnergySpec(space, k, 3.0)
        u = rng.normal(size=6)
        x, _ = elliptic_extension(spec, u)
        np.testing.assert_array_equal(x, u)

    def test_explicit_rejects_exterior_pairs(self):
        space, k = path_graph(3, [0])
        with pytest.raises(ValueError, match="exterior-exterior"):
            linear_extension_explicit(EnergySpec(space, k, 2.0), [1.0])

    @pytest.mark.parametrize("kind", ["neumann", "robin"])
    def test_explicit_vs_solver(self, rng, kind):
        space, k = coupled_interval(20)
        spec = make_spec(space, k, 2.0, kind, kappa=0.7)
        u = rng.normal(size=space.n_omega)
        x, rep = elliptic_extension(spec, u)
        np.testing.assert_allclose(x, linear_extension_explicit(spec, u), atol=10 * rep.tolerance)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([1.5, 2.0, 3.0, 4.5]))
    def test_idempotent(self, seed, p):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, p=p, kind="robin")
        u = rng.normal(size=spec.space.n_omega)
        x1, r1 = elliptic_extension(spec, u)
        x2, r2 = elliptic_extension(spec, spec.restrict(x1), x0=x1)
        assert r2.sweeps == 0
        np.testing.assert_array_equal(x1, x2)
        x3, _ = elliptic_extension(spec, spec.restrict(x1))
        scale = 1 + np.abs(x1).max()
        np.testing.assert_allclose(x3, x1, atol=1e-6 * scale)
