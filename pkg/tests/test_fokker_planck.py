import csv
import json
import math

import numpy as np
import pytest

from wickwz.coeffs import make_coefficients
from wickwz.fokker_planck import (Estimate, TelescopingCheck, bump, concat_samples, constant_function,
                                  estimate_terms, ibp_residual, shipped_bumps, summarize, telescoping_check,
                                  telescoping_residual, term_samples, write_fp_csv, write_fp_json)
from wickwz.paths import Partition, partition_increments, sample_brownian_paths
from wickwz.process import build_wz

PART = Partition.uniform(1.0, 4)


def trajectory(cs, n, seed=3, part=PART):
    path = sample_brownian_paths(cs.dim, part.nodes, seed, range(n))
    return build_wz(cs, part, partition_increments(path, part))


class TestBumps:
    @pytest.mark.parametrize("modulated", [True, False])
    def test_derivatives(self, rng, modulated):
        for d in (1, 2, 3):
            phi = bump("b", np.linspace(-0.5, 0.5, d), np.full(d, 0.8), 1.0, modulated=modulated)
            phi.check(rng, 1.0, probes=300)

    def test_plateau_and_support(self):
        phi = bump("b", [0.0], [1.0], 2.0, ramp=0.5, modulated=False)
        assert phi.phi(np.zeros(3), np.array([[0.0], [0.49], [-0.5]])).tolist() == [1.0, 1.0, 1.0]
        assert phi.phi(np.zeros(2), np.array([[1.0], [-1.3]])).tolist() == [0.0, 0.0]
        assert phi.lo.tolist() == [-1.0] and phi.hi.tolist() == [1.0]

    def test_modulation_vanishes_at_ends(self):
        phi = bump("b", [0.0, 0.0], [1.0, 1.0], 2.0)
        x = np.zeros((1, 2))
        assert phi.phi(np.zeros(1), x)[0] == 0.0
        assert phi.phi(np.array([2.0]), x)[0] == pytest.approx(0.0, abs=1e-30)
        assert phi.phi(np.array([1.0]), x)[0] == pytest.approx(1.0)

    def test_wrong_derivative_is_caught(self, rng):
        good = bump("b", [0.0], [1.0], 1.0)
        bad = type(good)("bad", good.phi, good.dt, lambda t, x: 2 * good.grad(t, x), good.hess, good.lo, good.hi)
        with pytest.raises(AssertionError, match="gradient"):
            bad.check(rng, 1.0)

    def test_shipped_bumps_follow_the_ensemble(self):
        wz = trajectory(make_coefficients("tanh", 2, sigma=[1.0, 0.5]), 50)
        phis = shipped_bumps(wz)
        assert [p.name for p in phis] == ["bump_low", "bump_mid", "bump_high"]
        flat = wz.states.reshape(-1, 2)
        mid = phis[1]
        assert np.allclose((mid.lo + mid.hi) / 2, (np.quantile(flat, 0.02, 0) + np.quantile(flat, 0.98, 0)) / 2)

    def test_constant(self, rng):
        phi = constant_function(2, value=3.0)
        t, x = rng.uniform(0, 1, 5), rng.normal(size=(5, 2))
        assert phi.phi(t, x).tolist() == [3.0] * 5
        assert not phi.dt(t, x).any() and not phi.grad(t, x).any() and not phi.hess(t, x).any()


class TestTerms:
    def test_constant_phi_gives_zero_terms(self):
        wz = trajectory(make_coefficients("tanh", 1), 20)
        phi = constant_function(1)
        report = estimate_terms(wz, phi, nodes=8, telescoping_nodes=None)
        for e in (report.A, report.B, report.C, report.D):
            assert e.estimate == 0.0 and e.se == 0.0
        assert math.isnan(report.zz.z)
        assert "z undefined: every term vanishes identically" in report.flags
        assert report.passed

    def test_zero_drift_has_no_drift_term(self):
        wz = trajectory(make_coefficients("zero", 1), 20)
        s = term_samples(wz, shipped_bumps(wz)[1], nodes=8)
        assert not s.D.any()
        assert s.B.any() and s.C.any()

    def test_no_diffusion_has_no_noise_terms(self):
        wz = trajectory(make_coefficients("tanh", 2, sigma=0.0), 10)
        s = term_samples(wz, bump("b", [1.0, 1.0], [1.5, 1.5], 1.0), nodes=8)
        assert not s.B.any() and not s.C.any() and not s.C2.any()
        ibp = ibp_residual(s)
        assert ibp.lhs.estimate == 0.0 and ibp.rhs.estimate == 0.0 and ibp.within()

    def test_list_and_single_agree(self):
        wz = trajectory(make_coefficients("tanh", 1), 8)
        phis = shipped_bumps(wz)
        many = term_samples(wz, phis, nodes=8)
        one = term_samples(wz, phis[2], nodes=8)
        assert np.array_equal(many[2].C, one.C) and np.array_equal(many[2].A, one.A)

    def test_path_subset_and_concat(self):
        wz = trajectory(make_coefficients("tanh", 1), 10)
        phi = shipped_bumps(wz)[0]
        whole = term_samples(wz, phi, nodes=8)
        parts = [term_samples(wz, phi, nodes=8, paths=range(a, b)) for a, b in ((0, 4), (4, 10))]
        joined = concat_samples(parts)
        assert np.allclose(joined.B, whole.B, rtol=1e-10, atol=1e-12)
        assert np.array_equal(joined.boundary, whole.boundary)

    def test_coverage_flag(self):
        wz = trajectory(make_coefficients("tanh", 1), 20)
        narrow = bump("narrow", [1.0], [0.05], 1.0)
        s = term_samples(wz, narrow, nodes=4)
        assert not s.covered
        assert any("support" in f for f in summarize(narrow, s, 4).flags)


class TestTelescoping:
    @pytest.mark.parametrize("family,dim", [("zero", 1), ("tanh", 2)])
    def test_pathwise_identity(self, family, dim):
        cs = make_coefficients(family, dim, sigma=[1.0, 0.5][:dim])
        wz = trajectory(cs, 4)
        checks = telescoping_check(wz, shipped_bumps(wz), nodes=64, paths=4)
        for c in checks:
            assert c.residuals[0] <= 1e-6, c
            assert c.passed, c

    def test_pathwise_identity_coupled(self):
        # the non-separable solver is slow; the 1e-6 gate is reached at 128 nodes, here only the decay is checked
        cs = make_coefficients("coupled_tanh", 2, sigma=[1.0, 0.5], coupling=[[1.0, 0.4], [-0.3, 1.0]])
        wz = trajectory(cs, 4)
        for c in telescoping_check(wz, shipped_bumps(wz), nodes=32, paths=4):
            coarse, fine = c.residuals
            assert fine <= 1e-5 and fine <= 0.5 * coarse, c

    def test_gap_shrinks_with_nodes(self):
        wz = trajectory(make_coefficients("tanh", 1), 4)
        phi = shipped_bumps(wz)[1]
        gaps = [telescoping_residual(wz, phi, m) for m in (4, 8, 16)]
        assert gaps[1] < gaps[0] and gaps[2] < gaps[1]

    def test_check_logic(self):
        assert TelescopingCheck(4, 32, (64, 128), (1e-7, 4e-8)).passed
        assert not TelescopingCheck(4, 32, (64, 128), (1e-7, 9e-8)).passed
        assert not TelescopingCheck(4, 32, (64, 128), (2e-6, 1e-7)).passed
        assert TelescopingCheck(4, 32, (64, 128), (1e-12, 1e-12)).passed


class TestStatistics:
    def test_estimate_z(self):
        assert Estimate(1.0, 0.5).z == 2.0 and Estimate(1.0, 0.5).within()
        assert Estimate(2.0, 0.5).within(4.0) and not Estimate(2.0, 0.5).within()
        assert math.isnan(Estimate(0.0, 0.0).z) and Estimate(0.0, 0.0).within()
        assert Estimate(-1.0, 0.0).z == -math.inf and not Estimate(-1.0, 0.0).within()

    def test_identities_hold_in_distribution(self):
        cs = make_coefficients("tanh", 2, sigma=[1.0, 0.5])
        wz = trajectory(cs, 400, seed=11)
        for r in estimate_terms(wz, shipped_bumps(wz), nodes=8, telescoping_nodes=None):
            assert abs(r.zz.z) <= 4, r
            assert abs(r.ibp.z_pooled) <= 4, r

    def test_ibp_error_bar_shrinks(self):
        cs = make_coefficients("tanh", 1)
        wz = trajectory(cs, 800, seed=5)
        phi = shipped_bumps(wz)[1]
        s = term_samples(wz, phi, nodes=8)
        small = ibp_residual(concat_samples([term_samples(wz, phi, nodes=8, paths=range(200))]))
        big = ibp_residual(s)
        ratio = small.lhs.se / big.lhs.se
        assert 1.6 <= ratio <= 2.5


class TestOutput:
    @pytest.fixture
    def reports(self):
        wz = trajectory(make_coefficients("tanh", 1), 6)
        return estimate_terms(wz, shipped_bumps(wz) + [constant_function(1)], nodes=4, telescoping_nodes=8,
                              telescoping_paths=2, telescoping_steps=16)

    def test_csv(self, reports, tmp_path):
        write_fp_csv(reports, tmp_path / "fp.csv")
        rows = list(csv.DictReader(open(tmp_path / "fp.csv")))
        assert list(rows[0]) == ["phi_id", "term", "estimate", "se", "z"]
        terms = [r["term"] for r in rows if r["phi_id"] == "bump_mid"]
        assert terms == ["A", "B", "C", "D", "zz", "weak_form", "ibp_lhs", "ibp_rhs", "telescoping_8",
                         "telescoping_16"]
        const = {r["term"]: r for r in rows if r["phi_id"] == "constant"}
        assert const["zz"]["z"] == "undefined" and float(const["A"]["estimate"]) == 0.0
        assert float(next(r for r in rows if r["term"] == "A")["estimate"]) == reports[0].A.estimate

    def test_json(self, reports, tmp_path):
        write_fp_json(reports, tmp_path / "fp.json")
        data = json.load(open(tmp_path / "fp.json"))
        assert [d["phi_id"] for d in data] == ["bump_low", "bump_mid", "bump_high", "constant"]
        assert data[3]["zz"]["z"] is None and data[3]["flags"]
        assert data[0]["telescoping"]["nodes"] == [8, 16]
        assert set(data[0]) >= {"A", "B", "C", "D", "zz", "weak_form", "ibp", "telescoping", "passed", "n_paths"}
