import json
import math

import numpy as np

from wickwz.coeffs import make_coefficients
from wickwz.hyperbolic import SolverConfig
from wickwz.suites import Check, SuiteResult, lp_suite, mild_suite, pde_oracle_suite, run_all, wick_suite


def test_wick_suite_small():
    r = wick_suite(7, probes=60, samples=2000)
    assert r.passed, r.to_dict()
    names = [c.name for c in r.checks]
    assert names == ["flow", "wick_law", "inverse", "translation_group",
                     "mean_polygonal_exponential", "mean_ito_exponential"]


def test_wick_suite_is_deterministic():
    a = wick_suite(3, probes=20, samples=500).to_dict()
    b = wick_suite(3, probes=20, samples=500).to_dict()
    assert a == b


def test_pde_oracle_suite():
    r = pde_oracle_suite(1, probes=6)
    assert r.passed, r.to_dict()
    assert len(r.checks) == 4


def test_mild_suite_passes_for_tanh():
    r = mild_suite(make_coefficients("tanh", 2, sigma=[1.0, 0.5]), 2, probes=2, paths=3)
    assert r.passed, r.to_dict()
    assert r.checks[0].name == "residual_tanh"


def test_mild_suite_reports_picard_failure():
    r = mild_suite(make_coefficients("tanh", 1, beta=2.0), 2, SolverConfig(picard_max=1), probes=1, paths=2)
    model = r.checks[0]
    assert not r.passed and model.value == math.inf and "Picard" in model.detail["error"]
    assert json.dumps(r.to_dict())  # inf is written as null
    assert r.to_dict()["checks"][0]["value"] is None


def test_pde_suite_reports_picard_failure():
    r = pde_oracle_suite(1, SolverConfig(picard_max=1), probes=2)
    by_name = {c.name: c for c in r.checks}
    assert by_name["zero_drift_closed_form"].passed  # solved without iteration
    assert by_name["linear_drift_closed_form"].value == math.inf
    assert "Picard" in by_name["linear_drift_closed_form"].detail["error"]


def test_lp_suite_small():
    r = lp_suite(make_coefficients("tanh", 1), 4, paths=2000)
    assert r.passed, r.to_dict()
    assert [c.name for c in r.checks] == ["lp_bound_p2", "lp_bound_p4"]


def test_lp_suite_catches_a_broken_bound(monkeypatch):
    import wickwz.suites as suites
    monkeypatch.setattr(suites, "lp_first_cell_bound", lambda cs, part, t, p: np.zeros(cs.dim))
    assert not suites.lp_suite(make_coefficients("zero", 1), 4, paths=500).passed


def test_run_all_shape():
    out = run_all(make_coefficients("zero", 1), 5, paths=300, wick_probes=10, wick_samples=300, mild_probes=1)
    assert [s.name for s in out] == ["wick", "pde_oracle", "mild_residual", "lp_bound"]


def test_result_serialization():
    r = SuiteResult("x", [Check("a", True, np.float64(1.0), 2.0, {"n": np.int64(3)}),
                          Check("b", np.bool_(False), math.nan, 1.0)])
    d = r.to_dict()
    assert d == {"name": "x", "passed": False,
                 "checks": [{"name": "a", "passed": True, "value": 1.0, "limit": 2.0, "detail": {"n": 3}},
                            {"name": "b", "passed": False, "value": None, "limit": 1.0, "detail": {}}]}
