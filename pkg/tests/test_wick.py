import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wickwz.coeffs import make_coefficients
from wickwz.paths import IncrementTable, Partition, partition_increments, sample_brownian, sample_brownian_paths
from wickwz.process import coarsen
from wickwz.wick import (ITO, PathFunctional, StochExpSpec, exp_functional, stoch_exp_ito, stoch_exp_pi, translate,
                         wick_mul_exp, wick_shifts)

PART = Partition.uniform(1.0, 4)
CS = make_coefficients("zero", 2, sigma=[0.9, 0.6], sigma_slope=[0.3, -0.2])


def table_from(values):
    return IncrementTable(np.asarray(values, float).reshape(2, 4), PART)


tables = st.lists(st.floats(-1.5, 1.5), min_size=8, max_size=8).map(table_from)
intervals = st.tuples(st.floats(0, 1), st.floats(0, 1)).map(sorted)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(sign=2), dict(side="stratonovich"), dict(s=0.6, t=0.5), dict(i=-1)])
    def test_rejects(self, kw):
        args = dict(i=0, s=0.1, t=0.5) | kw
        with pytest.raises(ValueError):
            StochExpSpec(**args)


class TestPolygonalExponential:
    def test_no_diffusion(self):
        cs = make_coefficients("zero", 1, sigma=0.0)
        t = IncrementTable(np.array([[0.4, -1.0, 2.0, 0.3]]), PART)
        assert stoch_exp_pi(StochExpSpec(0, 0.1, 0.9), cs, t) == 1.0

    def test_single_cell_value(self):
        cs = make_coefficients("zero", 1, sigma=1.0)
        t = IncrementTable(np.array([[0.0, 0.3, 0.0, 0.0]]), PART)
        assert stoch_exp_pi(StochExpSpec(0, 0.25, 0.5), cs, t) == pytest.approx(np.exp(0.175), rel=1e-15)

    def test_unit_mean(self):
        n = 100_000
        table = partition_increments(sample_brownian_paths(2, PART.nodes, 21, range(n)), PART)
        vals = stoch_exp_pi(StochExpSpec(1, 0.1, 0.85), CS, table)
        assert abs(vals.mean() - 1) <= 3 * vals.std(ddof=1) / np.sqrt(n)

    def test_overflow_is_explicit(self):
        cs = make_coefficients("zero", 1, sigma=1.0)
        t = IncrementTable(np.array([[1000.0, 0, 0, 0]]), PART)
        with pytest.raises(OverflowError):
            stoch_exp_pi(StochExpSpec(0, 0.0, 0.25), cs, t)

    @given(tables, st.integers(1, 3), st.floats(0, 1), st.floats(0, 1), st.integers(0, 1))
    def test_flow_at_nodes(self, table, k, a, b, i):
        tk = float(PART.nodes[k])
        s, t = a * tk, tk + b * (1 - tk)
        whole = stoch_exp_pi(StochExpSpec(i, s, t), CS, table)
        split = stoch_exp_pi(StochExpSpec(i, s, tk), CS, table) * stoch_exp_pi(StochExpSpec(i, tk, t), CS, table)
        assert split == pytest.approx(whole, rel=1e-12)

    def test_plain_product_fails_inside_a_cell(self):
        # variances Sigma^2 / h are not additive inside a cell; the Wick product law covers that case
        table = table_from(np.zeros(8))
        half = stoch_exp_pi(StochExpSpec(0, 0.0, 0.125), CS, table) * stoch_exp_pi(StochExpSpec(0, 0.125, 0.25), CS, table)
        assert half != pytest.approx(stoch_exp_pi(StochExpSpec(0, 0.0, 0.25), CS, table), rel=1e-3)


class TestItoExponential:
    nodes = PART.refine(16)

    def test_no_diffusion(self):
        cs = make_coefficients("zero", 1, sigma=0.0)
        path = sample_brownian(1, self.nodes, 0)
        assert stoch_exp_ito(StochExpSpec(0, 0.0, 1.0, 1, ITO), cs, path) == 1.0

    def test_constant_sigma_closed_form(self):
        cs = make_coefficients("zero", 1, sigma=0.7)
        path = sample_brownian_paths(1, self.nodes, 3, range(5))
        s, t = self.nodes[5], self.nodes[50]
        got = stoch_exp_ito(StochExpSpec(0, s, t, 1, ITO), cs, path)
        dB = path.at(t)[:, 0] - path.at(s)[:, 0]
        assert np.allclose(got, np.exp(0.7 * dB - 0.49 * (t - s) / 2), rtol=1e-13)

    def test_negative_sign(self):
        cs = make_coefficients("zero", 1, sigma=0.7)
        path = sample_brownian(1, self.nodes, 3)
        up = stoch_exp_ito(StochExpSpec(0, 0.0, 1.0, 1, ITO), cs, path)
        down = stoch_exp_ito(StochExpSpec(0, 0.0, 1.0, -1, ITO), cs, path)
        assert up * down == pytest.approx(np.exp(-0.49))

    def test_unit_mean(self):
        n = 100_000
        path = sample_brownian_paths(1, PART.refine(4), 8, range(n))
        cs = make_coefficients("zero", 1, sigma=1.1, sigma_slope=-0.5)
        vals = stoch_exp_ito(StochExpSpec(0, 0.0, 1.0, 1, ITO), cs, path)
        assert abs(vals.mean() - 1) <= 3 * vals.std(ddof=1) / np.sqrt(n)

    def test_side_mismatch(self):
        path = sample_brownian(1, self.nodes, 0)
        with pytest.raises(ValueError):
            stoch_exp_ito(StochExpSpec(0, 0.0, 1.0), CS, path)

    def test_refinement_constant_sigma_is_exact(self):
        cs = make_coefficients("zero", 1, sigma=0.8)
        path = sample_brownian_paths(1, Partition.uniform(1.0, 1).refine(128), 4, range(200))
        spec = StochExpSpec(0, 0.0, 1.0, 1, ITO)
        a, b = stoch_exp_ito(spec, cs, path), stoch_exp_ito(spec, cs, coarsen(path))
        assert np.max(np.abs(a - b) / b) <= 1e-12

    def test_refinement_varying_sigma(self):
        cs = make_coefficients("zero", 1, sigma=0.8, sigma_slope=0.4)
        spec = StochExpSpec(0, 0.0, 1.0, 1, ITO)
        changes = []
        for R in (64, 128):
            path = sample_brownian_paths(1, Partition.uniform(1.0, 1).refine(2 * R), 4, range(2000))
            a, b = stoch_exp_ito(spec, cs, path), stoch_exp_ito(spec, cs, coarsen(path))
            assert abs(a.mean() - b.mean()) / b.mean() <= 1e-3
            changes.append(np.mean(np.abs(a - b) / b))
        assert 0.4 <= changes[1] / changes[0] <= 0.6


class TestTranslate:
    def test_zero_shift(self):
        t = table_from(np.arange(8.0))
        assert np.array_equal(translate(t, 1, 2, 0.0).values, t.values)

    def test_one_slot(self):
        t = table_from(np.full(8, 0.3))
        out = translate(t, 0, 1, 0.25)
        assert out.values[0, 1] == pytest.approx(0.05)
        mask = np.ones((2, 4), bool)
        mask[0, 1] = False
        assert np.array_equal(out.values[mask], t.values[mask])

    @given(tables, st.integers(0, 1), st.integers(0, 3), st.floats(-3, 3), st.floats(-3, 3))
    def test_group(self, table, i, k, a, b):
        assert np.allclose(translate(translate(table, i, k, a), i, k, b).values,
                           translate(table, i, k, a + b).values, rtol=0, atol=1e-14)
        assert np.allclose(translate(translate(table, i, k, a), i, k, -a).values, table.values, rtol=0, atol=1e-14)

    def test_bounds(self):
        t = table_from(np.zeros(8))
        with pytest.raises(ValueError):
            translate(t, 0, 4, 1.0)
        with pytest.raises(ValueError):
            translate(t, 2, 0, 1.0)


class TestWickProduct:
    @given(tables, intervals, st.floats(-5, 5))
    def test_constant(self, table, st_, kappa):
        spec = StochExpSpec(0, *st_)
        got = wick_mul_exp(PathFunctional.constant(kappa), spec, CS, table)
        assert got == pytest.approx(kappa * stoch_exp_pi(spec, CS, table), rel=1e-14, abs=1e-300)

    @given(tables, st.integers(1, 3), st.floats(0, 1), st.floats(0, 1))
    def test_disjoint_flow(self, table, k, a, b):
        tk = PART.nodes[k]
        s, t = a * tk, tk + b * (1 - tk)
        X = exp_functional(StochExpSpec(0, s, tk), CS, PART)
        got = wick_mul_exp(X, StochExpSpec(0, tk, t), CS, table)
        assert got == pytest.approx(stoch_exp_pi(StochExpSpec(0, s, t), CS, table), rel=1e-12)

    @given(tables, intervals)
    def test_other_component_is_plain(self, table, st_):
        X = exp_functional(StochExpSpec(1, *st_), CS, PART)
        spec = StochExpSpec(0, *st_)
        assert wick_mul_exp(X, spec, CS, table) == pytest.approx(X(table) * stoch_exp_pi(spec, CS, table), rel=1e-14)

    @given(tables, intervals, st.floats(0, 1))
    def test_exponential_law(self, table, st_, frac):
        s, t = st_
        r = s + frac * (t - s)
        got = wick_mul_exp(exp_functional(StochExpSpec(0, s, r), CS, PART), StochExpSpec(0, r, t), CS, table)
        assert got == pytest.approx(stoch_exp_pi(StochExpSpec(0, s, t), CS, table), rel=1e-12)

    @given(tables, intervals)
    def test_inverse(self, table, st_):
        inv = exp_functional(StochExpSpec(1, *st_, sign=-1), CS, PART)
        assert wick_mul_exp(inv, StochExpSpec(1, *st_), CS, table) == pytest.approx(1.0, rel=1e-12)

    @given(tables, intervals, st.floats(-2, 2), st.floats(0, 2))
    def test_monotone_and_absolute_value(self, table, st_, a, gap):
        spec = StochExpSpec(0, *st_)
        X = PathFunctional(lambda tb: np.sin(3 * tb.values[..., 0, 1]) + a * tb.values[..., 1, 2])
        Y = PathFunctional(lambda tb: X(tb) + gap * tb.values[..., 0, 2] ** 2)
        wx, wy = wick_mul_exp(X, spec, CS, table), wick_mul_exp(Y, spec, CS, table)
        assert wx <= wy + 1e-12 * max(1.0, abs(wy))
        assert abs(wx) <= wick_mul_exp(abs(X), spec, CS, table) * (1 + 1e-14)

    def test_shifts_follow_cells(self):
        shifts = wick_shifts(StochExpSpec(0, 0.1, 0.6), make_coefficients("zero", 1, sigma=2.0), PART)
        assert [k for k, _ in shifts] == [0, 1, 2]
        assert [a for _, a in shifts] == pytest.approx([0.3, 0.5, 0.2])
        neg = wick_shifts(StochExpSpec(0, 0.1, 0.6, -1), make_coefficients("zero", 1, sigma=2.0), PART)
        assert [a for _, a in neg] == pytest.approx([-0.3, -0.5, -0.2])

    def test_false_dependency_claim_is_caught(self):
        liar = PathFunctional(lambda tb: tb.values[..., 0, 1], frozenset({(1, 3)}))
        with pytest.raises(AssertionError):
            wick_mul_exp(liar, StochExpSpec(0, 0.3, 0.4), CS, table_from(np.ones(8)))

    def test_spot_check(self, rng):
        honest = PathFunctional(lambda tb: tb.values[..., 0, 1] * 2, frozenset({(0, 1)}))
        honest.spot_check(table_from(np.ones(8)), rng)
        liar = PathFunctional(lambda tb: tb.values[..., 1, 3], frozenset({(0, 1)}))
        with pytest.raises(AssertionError):
            liar.spot_check(table_from(np.ones(8)), rng)

    def test_polygonal_side_only(self):
        with pytest.raises(ValueError):
            wick_mul_exp(PathFunctional.constant(1.0), StochExpSpec(0, 0, 1, 1, ITO), CS, table_from(np.ones(8)))
