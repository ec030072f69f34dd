import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from wickwz.coeffs import make_coefficients, sigma_integrals
from wickwz.hyperbolic import (DomainCoverageError, GridSpec, PdeProblem, PicardConvergenceError, SolverConfig,
                               eval_u, eval_u_and_grad, eval_u_grad, grid_solve_v, growth_bound_check, solve_fan)
from wickwz.quadrature import gauss_legendre

H = 0.25
CFG = SolverConfig()


def first_term(cs, r, t, alpha, x, h=H):
    S = sigma_integrals(cs, r, t)
    return alpha * np.exp(x * S / h - S * S / (2 * h))


def mild_rhs(p, t, x, nodes=24):
    """Right side of the mild identity by an independent Gauss-Legendre rule in s."""
    cs = p.cs
    out = first_term(cs, p.r, t, p.alpha, x, p.h)
    s_nodes, w = gauss_legendre(p.r, t, nodes)
    for s, wq in zip(s_nodes, w):
        S = sigma_integrals(cs, s, t)
        for i in range(cs.dim):
            foot = np.array(x, float)
            foot[i] -= S[i]
            u = p.alpha if s == p.r else eval_u(p, float(s), foot)
            out[i] += wq * cs.b(s, u)[i] * np.exp(x[i] * S[i] / p.h - S[i] ** 2 / (2 * p.h))
    return out


class TestClosedForms:
    def test_zero_drift_value(self):
        cs = make_coefficients("zero", 1, sigma=1.0)
        got = eval_u(PdeProblem(0.0, H, np.array([1.0]), H, cs), H, np.array([0.1]))
        assert got[0] == pytest.approx(np.exp(-0.025), rel=1e-14)

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(0.1, 2), min_size=2, max_size=2),
           st.floats(0, 1), st.integers(0, 3))
    def test_zero_drift(self, x, alpha, frac, k):
        cs = make_coefficients("zero", 2, sigma=[1.0, 0.4], sigma_slope=[0.5, -0.3])
        r = k * H
        t = r + frac * H
        got = eval_u(PdeProblem(r, r + H, np.array(alpha), H, cs), t, np.array(x))
        assert np.allclose(got, first_term(cs, r, t, np.array(alpha), np.array(x)), rtol=1e-12, atol=0)

    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.lists(st.floats(-2, 2), min_size=2, max_size=2),
           st.floats(0.05, 1))
    def test_linear_drift(self, x, alpha, frac):
        beta = np.array([0.8, -0.6])
        cs = make_coefficients("linear", 2, beta=beta, sigma=[1.0, 0.5], sigma_slope=[0.2, 0.4])
        r, t = 0.5, 0.5 + frac * H
        alpha, x = np.array(alpha), np.array(x)
        got = eval_u(PdeProblem(r, r + H, alpha, H, cs), t, x)
        want = first_term(cs, r, t, alpha, x) * np.exp(beta * (t - r))
        # Picard stops on |change| / max(|u|, 1), so small values are held to an absolute 1e-10
        assert np.allclose(got, want, rtol=1e-8, atol=1e-10)

    @pytest.mark.parametrize("family", ["tanh", "coupled_tanh"])
    def test_no_diffusion_is_an_ode(self, family, rng):
        cs = make_coefficients(family, 2, sigma=0.0, beta=[1.5, -0.7], coupling=[[1.0, -0.8], [0.6, 1.0]]
                               if family == "coupled_tanh" else None)
        for _ in range(3):
            alpha = rng.uniform(-2, 2, 2)
            sol = solve_ivp(lambda s, y: cs.b(s, y), (0.0, H), alpha, method="DOP853", rtol=1e-13, atol=1e-14)
            x = rng.normal(size=2)
            assert np.allclose(eval_u(PdeProblem(0.0, H, alpha, H, cs), H, x), sol.y[:, -1], rtol=0, atol=1e-8)

    def test_start_returns_alpha(self):
        cs = make_coefficients("tanh", 2)
        p = PdeProblem(0.25, 0.5, np.array([0.3, -1.0]), H, cs)
        assert eval_u(p, 0.25, np.array([5.0, 5.0])).tolist() == [0.3, -1.0]

    def test_time_outside_cell(self):
        p = PdeProblem(0.25, 0.5, np.ones(1), H, make_coefficients("tanh", 1))
        with pytest.raises(ValueError):
            eval_u(p, 0.6, np.zeros(1))

    def test_problem_validation(self):
        cs = make_coefficients("tanh", 2)
        with pytest.raises(ValueError):
            PdeProblem(0.5, 0.5, np.ones(2), H, cs)
        with pytest.raises(ValueError):
            PdeProblem(0.0, 0.5, np.ones(2), 0.0, cs)
        with pytest.raises(ValueError):
            PdeProblem(0.0, 0.5, np.ones(3), H, cs)
        with pytest.raises(ValueError):
            SolverConfig(quad_nodes=1)
        with pytest.raises(ValueError):
            SolverConfig(picard_max=0)


class TestMildIdentity:
    @pytest.mark.parametrize("family,dim", [("tanh", 1), ("tanh", 2), ("coupled_tanh", 2)])
    def test_independent_quadrature(self, family, dim, rng):
        cs = make_coefficients(family, dim, sigma=[1.0, 0.5][:dim], beta=[1.0, -1.5][:dim])
        p = PdeProblem(0.25, 0.5, rng.uniform(0.5, 1.5, dim), H, cs)
        tol = 1e-7 if family == "tanh" else 1e-5
        for _ in range(3):
            t = float(rng.uniform(0.3, 0.5))
            x = rng.normal(0, np.sqrt(H), dim)
            got = eval_u(p, t, x)
            assert np.max(np.abs(got - mild_rhs(p, t, x)) / np.maximum(np.abs(got), 1)) <= tol

    def test_v_form(self, rng):
        # v = u e^{-|x|^2/2h} is transported: v_i(t,x) = v_i(r, x - S e_i) + int b_i(s, u(s, foot)) e^{-|foot|^2/2h} ds
        cs = make_coefficients("tanh", 2, sigma=[1.0, 0.5], beta=[1.0, -1.5])
        p = PdeProblem(0.0, H, np.array([1.2, 0.7]), H, cs)
        t = 0.2
        x = rng.normal(0, 0.5, 2)
        v = eval_u(p, t, x) * np.exp(-x @ x / (2 * H))
        S = sigma_integrals(cs, 0.0, t)
        want = np.empty(2)
        for i in range(2):
            foot = x.copy()
            foot[i] -= S[i]
            want[i] = p.alpha[i] * np.exp(-foot @ foot / (2 * H))
        s_nodes, w = gauss_legendre(0.0, t, 24)
        for s, wq in zip(s_nodes, w):
            Ss = sigma_integrals(cs, s, t)
            for i in range(2):
                foot = x.copy()
                foot[i] -= Ss[i]
                want[i] += wq * cs.b(s, eval_u(p, float(s), foot))[i] * np.exp(-foot @ foot / (2 * H))
        assert np.allclose(v, want, rtol=1e-7, atol=1e-12)

    def test_picard_residuals_shrink(self):
        cs = make_coefficients("tanh", 1, beta=2.0)
        sol = solve_fan(PdeProblem(0.0, H, np.array([0.5]), H, cs), H, np.array([[0.3]]))
        res = np.array(sol.residuals)
        assert sol.sweeps >= 3
        assert np.all(res[2:] < res[1:-1])
        assert res[-1] <= CFG.picard_tol

    def test_single_sweep_fails_loudly(self):
        cs = make_coefficients("tanh", 1)
        with pytest.raises(PicardConvergenceError) as err:
            eval_u(PdeProblem(0.0, H, np.array([1.0]), H, cs), H, np.array([0.2]), SolverConfig(picard_max=1))
        assert err.value.residual > CFG.picard_tol

    def test_batch_matches_single(self, rng):
        cs = make_coefficients("coupled_tanh", 2, sigma=[1.0, 0.5])
        alpha = rng.uniform(0.5, 1.5, (5, 2))
        x = rng.normal(size=(5, 2))
        p = PdeProblem(0.0, H, alpha, H, cs)
        batch = eval_u(p, 0.2, x)
        for b in range(5):
            single = eval_u(PdeProblem(0.0, H, alpha[b], H, cs), 0.2, x[b])
            assert np.allclose(batch[b], single, rtol=1e-9)


class TestGradient:
    def test_zero_drift(self, rng):
        cs = make_coefficients("zero", 2, sigma=[1.0, 0.6])
        p = PdeProblem(0.0, H, np.array([1.0, 2.0]), H, cs)
        x = rng.normal(size=2)
        u, G = eval_u_and_grad(p, 0.2, x)
        S = sigma_integrals(cs, 0.0, 0.2)
        assert np.allclose(G, np.diag(S / H * u), rtol=1e-6, atol=1e-12)

    def test_no_diffusion(self):
        cs = make_coefficients("coupled_tanh", 2, sigma=0.0)
        G = eval_u_grad(PdeProblem(0.0, H, np.array([1.0, -1.0]), H, cs), H, np.array([0.3, 0.1]))
        assert np.max(np.abs(G)) <= 1e-9

    @pytest.mark.parametrize("family", ["tanh", "coupled_tanh"])
    def test_fourth_order_stencil(self, family, rng):
        cs = make_coefficients(family, 2, sigma=[1.0, 0.5], beta=[1.0, -1.5])
        p = PdeProblem(0.0, H, np.array([1.2, 0.7]), H, cs)
        x = rng.normal(0, 0.5, 2)
        G = eval_u_grad(p, 0.2, x)
        e = 1e-2
        for i in range(2):
            d = np.zeros(2)
            d[i] = e
            f = [eval_u(p, 0.2, x + k * d) for k in (-2, -1, 1, 2)]
            ref = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * e)
            assert np.allclose(G[i], ref, rtol=1e-5, atol=1e-8)

    def test_swap_symmetry(self, rng):
        cs = make_coefficients("coupled_tanh", 2, sigma=0.8, coupling=[[1.0, 0.4], [0.4, 1.0]])
        alpha = np.array([1.3, 0.6])
        x = rng.normal(size=2)
        u, G = eval_u_and_grad(PdeProblem(0.0, H, alpha, H, cs), 0.2, x)
        us, Gs = eval_u_and_grad(PdeProblem(0.0, H, alpha[::-1], H, cs), 0.2, x[::-1])
        assert np.allclose(us, u[::-1], rtol=1e-10)
        assert np.allclose(Gs, G[::-1, ::-1], rtol=1e-6, atol=1e-9)


class TestGridBackend:
    def test_zero_drift_is_advection(self):
        cs = make_coefficients("zero", 1, sigma=1.0)
        p = PdeProblem(0.0, H, np.array([1.0]), H, cs)
        grid = grid_solve_v(p, GridSpec((-3.0,), (3.0,), points=512, steps=50))
        xs = np.linspace(-1.5, 1.5, 31)[:, None]
        want = np.exp(-(xs - H) ** 2 / (2 * H))
        assert np.max(np.abs(grid.v_at(xs) - want)) <= 1e-4

    def test_zero_data(self):
        cs = make_coefficients("zero", 2, sigma=[1.0, 0.5])
        grid = grid_solve_v(PdeProblem(0.0, H, np.zeros(2), H, cs), GridSpec((-2.0, -2.0), (2.0, 2.0), 64, 10))
        assert not grid.values.any()

    def test_cross_check_tanh(self, rng):
        cs = make_coefficients("tanh", 1, sigma=1.0, beta=1.0)
        p = PdeProblem(0.0, H, np.array([1.0]), H, cs)
        grid = grid_solve_v(p, GridSpec((-4.0,), (4.0,), points=801, steps=200))
        xs = rng.uniform(-1.5, 1.5, (20, 1))
        assert np.max(np.abs(grid.u_at(xs) - eval_u(p, H, xs)) / np.abs(eval_u(p, H, xs))) <= 1e-3

    def test_coverage(self):
        cs = make_coefficients("zero", 1, sigma=1.0)
        grid = grid_solve_v(PdeProblem(0.0, H, np.ones(1), H, cs), GridSpec((-1.0,), (1.0,), 64, 5))
        with pytest.raises(DomainCoverageError):
            grid.v_at(np.array([[-0.9]]))

    def test_dimension_limit(self):
        cs = make_coefficients("zero", 3)
        with pytest.raises(ValueError):
            grid_solve_v(PdeProblem(0.0, H, np.ones(3), H, cs), GridSpec((-1.0,) * 3, (1.0,) * 3, 8, 2))


class TestGrowthBound:
    def test_zero_drift(self, rng):
        p = PdeProblem(0.0, H, np.array([1.0, -2.0]), H, make_coefficients("zero", 2))
        assert growth_bound_check(p, 0.2, rng.normal(size=(10, 2)))

    def test_tanh_probes(self, rng):
        cs = make_coefficients("tanh", 2, sigma=[1.0, 0.5], beta=[1.0, -2.0])
        alpha = rng.uniform(-2, 2, (1000, 2))
        p = PdeProblem(0.0, H, alpha, H, cs)
        for t in (0.05, 0.15, H):
            assert growth_bound_check(p, t, rng.normal(0, 1, (1000, 2)))

    def test_far_negative_point(self):
        cs = make_coefficients("tanh", 1, sigma=1.0, beta=1.0)
        p = PdeProblem(0.0, H, np.array([1.0]), H, cs)
        x = np.array([-20.0])
        assert growth_bound_check(p, H, x)
        assert abs(eval_u(p, H, x)[0]) <= cs.M * H
