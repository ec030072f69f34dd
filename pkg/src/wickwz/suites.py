"""Self-checking suites run by ``wickwz validate``.

Each suite returns named checks with the measured quantity next to its
threshold, so a failing report says by how much it failed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .coeffs import CoefficientSet, make_coefficients, sigma_integrals
from .hyperbolic import (GridSpec, PdeProblem, PicardConvergenceError, SolverConfig, eval_u,
                         grid_solve_v)
from .paths import IncrementTable, Partition, partition_increments, sample_brownian_paths
from .process import (_mean_se, build_wz, lp_first_cell_bound, lp_norm_estimate, mild_residual)
from .wick import (ITO, StochExpSpec, exp_functional, stoch_exp_ito, stoch_exp_pi, translate,
                   wick_mul_exp)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    detail: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    name: str
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "checks": [_clean(asdict(c)) for c in self.checks]}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _at_most(name, value, limit, **detail) -> Check:
    return Check(name, bool(value <= limit), float(value), float(limit), detail)


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


# Wick algebra ---------------------------------------------------------------

def _probe_coefficients(rng: np.random.Generator, d: int) -> CoefficientSet:
    sigma = rng.uniform(0.3, 1.5, d)
    slope = rng.uniform(-0.25, 0.25, d)
    return make_coefficients("zero", d, sigma=sigma, sigma_slope=slope)


def wick_suite(seed: int, probes: int = 1000, samples: int = 100_000, tol: float = 1e-12) -> SuiteResult:
    """Exponential algebra on random tables and intervals, then the unit means."""
    rng = np.random.default_rng([seed, 1])
    d = 2
    models = [_probe_coefficients(rng, d) for _ in range(4)]
    worst = {"flow": 0.0, "wick_law": 0.0, "inverse": 0.0, "translation_group": 0.0}
    for _ in range(probes):
        cs = models[rng.integers(len(models))]
        N = int(rng.integers(2, 9))
        part = Partition.uniform(1.0, N)
        table = IncrementTable(rng.normal(size=(d, N)) * np.sqrt(np.diff(part.nodes)), part)
        i = int(rng.integers(d))
        k = int(rng.integers(1, N))
        tk = float(part.nodes[k])
        s, t = float(rng.uniform(0, tk)), float(rng.uniform(tk, 1.0))
        whole = stoch_exp_pi(StochExpSpec(i, s, t), cs, table)
        split = stoch_exp_pi(StochExpSpec(i, s, tk), cs, table) * stoch_exp_pi(StochExpSpec(i, tk, t), cs, table)
        worst["flow"] = max(worst["flow"], _rel(split, whole))

        r = float(rng.uniform(s, t))
        law = wick_mul_exp(exp_functional(StochExpSpec(i, s, r), cs, part), StochExpSpec(i, r, t), cs, table)
        worst["wick_law"] = max(worst["wick_law"], _rel(law, whole))

        inv = wick_mul_exp(exp_functional(StochExpSpec(i, s, t, -1), cs, part), StochExpSpec(i, s, t), cs, table)
        worst["inverse"] = max(worst["inverse"], _rel(inv, 1.0))

        cell = int(rng.integers(N))
        a, b = rng.normal(size=2)
        twice = translate(translate(table, i, cell, a), i, cell, b)
        once = translate(table, i, cell, a + b)
        back = translate(translate(table, i, cell, a), i, cell, -a)
        scale = max(1.0, float(np.max(np.abs(table.values))))
        gap = max(np.max(np.abs(twice.values - once.values)), np.max(np.abs(back.values - table.values)))
        worst["translation_group"] = max(worst["translation_group"], float(gap) / scale)

    checks = [_at_most(name, v, tol, probes=probes) for name, v in worst.items()]
    checks += _unit_means(seed, samples)
    return SuiteResult("wick", checks)


def _unit_means(seed: int, samples: int) -> list[Check]:
    cs = make_coefficients("zero", 1, sigma=0.8, sigma_slope=0.4)
    part = Partition.uniform(1.0, 8)
    path = sample_brownian_paths(1, part.refine(8), seed, range(samples))
    table = partition_increments(path, part)
    out = []
    for name, vals in (("mean_polygonal_exponential", stoch_exp_pi(StochExpSpec(0, 0.0, 1.0), cs, table)),
                       ("mean_ito_exponential", stoch_exp_ito(StochExpSpec(0, 0.0, 1.0, 1, ITO), cs, path))):
        m, se = _mean_se(vals)
        z = abs(m - 1.0) / se
        out.append(Check(name, bool(z <= 3.0), float(z), 3.0, {"mean": m, "se": se, "samples": samples}))
    return out


# PDE oracles ----------------------------------------------------------------

def _first_term(cs, r, t, h, alpha, x):
    S = sigma_integrals(cs, r, t)
    return alpha * np.exp(x * S / h - S * S / (2 * h))


def pde_oracle_suite(seed: int, cfg: SolverConfig = SolverConfig(), probes: int = 32) -> SuiteResult:
    """``eval_u`` against closed forms, an ODE integrator, and a grid solver."""
    rng = np.random.default_rng([seed, 2])
    h = 0.25
    cs0 = make_coefficients("zero", 2, sigma=[1.0, 0.6], sigma_slope=[0.3, -0.2])
    beta = np.array([0.7, -0.4])
    cs1 = make_coefficients("linear", 2, sigma=[1.0, 0.6], sigma_slope=[0.3, -0.2], beta=beta)
    cs2 = make_coefficients("coupled_tanh", 2, sigma=0.0, coupling=[[1.0, 0.5], [-0.3, 1.0]])
    cs3 = make_coefficients("tanh", 1, sigma=1.0, beta=1.0)

    draws = []
    for _ in range(probes):
        r = int(rng.integers(4)) * h
        draws.append((r, float(rng.uniform(r, r + h)), rng.uniform(0.2, 2.0, 2), rng.normal(0, np.sqrt(h), (8, 2))))

    def closed_form(cs, growth):
        err = 0.0
        for r, t, alpha, x in draws:
            want = _first_term(cs0, r, t, h, alpha, x) * growth(t - r)
            err = max(err, _rel(eval_u(PdeProblem(r, r + h, alpha, h, cs), t, x, cfg), want))
        return err

    def ode():
        err = 0.0
        for _ in range(4):
            alpha = rng.uniform(-1.5, 1.5, 2)
            sol = solve_ivp(lambda s, y: cs2.b(s, y), (0.0, h), alpha, method="DOP853", rtol=1e-13, atol=1e-14)
            got = eval_u(PdeProblem(0.0, h, alpha, h, cs2), h, np.zeros(2), cfg)
            err = max(err, float(np.max(np.abs(got - sol.y[:, -1]))))
        return err

    def grid():
        p = PdeProblem(0.0, h, np.array([1.0]), h, cs3)
        g = grid_solve_v(p, GridSpec((-4.0,), (4.0,), points=801, steps=200))
        xs = np.linspace(-1.5, 1.5, 13)[:, None]
        return _rel(g.u_at(xs), eval_u(p, h, xs, cfg))

    zero_err, e0 = _guarded(lambda: closed_form(cs0, lambda dt: 1.0), math.inf)
    lin_err, e1 = _guarded(lambda: closed_form(cs1, lambda dt: np.exp(beta * dt)), math.inf)
    ode_err, e2 = _guarded(ode, math.inf)
    grid_err, e3 = _guarded(grid, math.inf)
    return SuiteResult("pde_oracle", [
        _at_most("zero_drift_closed_form", zero_err, 1e-12, probes=probes, **e0),
        _at_most("linear_drift_closed_form", lin_err, 1e-8, probes=probes, **e1),
        _at_most("no_diffusion_vs_ode", ode_err, 1e-8, **e2),
        _at_most("grid_cross_check", grid_err, 1e-3, **e3),
    ])


def _guarded(fn, failed):
    """``(fn(), {})``, or ``(failed, {"error": ...})`` when the Picard iteration gives up."""
    try:
        return fn(), {}
    except PicardConvergenceError as err:
        return failed, {"error": f"Picard iteration failed: {err}"}


# mild form and moment bound ------------------------------------------------

def mild_suite(cs: CoefficientSet, seed: int, cfg: SolverConfig = SolverConfig(), probes: int = 8,
               T: float = 1.0, N: int = 4, paths: int = 8, tol: float = 1e-6) -> SuiteResult:
    """Cell-wise mild residual for ``cs`` at random cells, times and seeds, and exactness for zero drift."""
    rng = np.random.default_rng([seed, 3])
    part = Partition.uniform(T, N)
    free = make_coefficients("zero", cs.dim, c=cs.c, sigma=cs.params["sigma"],
                             sigma_slope=cs.params.get("sigma_slope"))
    worst = {"model": 0.0, "zero_drift": 0.0}
    detail: dict = {}
    for _ in range(probes):
        path_seed = int(rng.integers(2**31))
        k = int(rng.integers(N))
        t = float(rng.uniform(part.nodes[k], part.nodes[k + 1]))
        table = partition_increments(sample_brownian_paths(cs.dim, part.nodes, path_seed, range(paths)), part)
        for key, model in (("model", cs), ("zero_drift", free)):
            times = np.unique(np.concatenate([part.nodes, [t]]))
            try:
                traj = build_wz(model, part, table, times, cfg)
                res = mild_residual(traj, k, t)
                scale = np.maximum(np.abs(traj.at(t)), 1.0)
                worst[key] = max(worst[key], float(np.max(np.abs(res) / scale)))
            except PicardConvergenceError as err:
                worst[key] = math.inf
                detail[key] = f"Picard iteration failed: {err}"
    return SuiteResult("mild_residual", [
        _at_most("residual_" + cs.name, worst["model"], tol, probes=probes, **_pick(detail, "model")),
        _at_most("residual_zero_drift", worst["zero_drift"], 1e-12, probes=probes, **_pick(detail, "zero_drift")),
    ])


def _pick(detail, key):
    return {"error": detail[key]} if key in detail else {}


def lp_suite(cs: CoefficientSet, seed: int, cfg: SolverConfig = SolverConfig(), paths: int = 10_000,
             T: float = 1.0, N: int = 4, powers=(2, 4), points: int = 3) -> SuiteResult:
    """Monte Carlo ``L^p`` norms in the first cell against the closed-form bound (3 SE slack)."""
    part = Partition.uniform(T, N)
    h = part.cell_length(0)
    times = h * np.arange(1, points + 1) / points
    first = Partition(np.array([0.0, h]))
    path = sample_brownian_paths(cs.dim, first.nodes, seed, range(paths))
    traj, err = _guarded(lambda: build_wz(cs, first, partition_increments(path, first),
                                          np.concatenate([[0.0], times]), cfg), None)
    if traj is None:
        return SuiteResult("lp_bound", [_at_most(f"lp_bound_p{p}", math.inf, 0.0, paths=paths, **err)
                                        for p in powers])
    checks = []
    for p in powers:
        margin = -math.inf
        for t in times:
            est, se = lp_norm_estimate(traj.at(t), p)
            bound = lp_first_cell_bound(cs, part, t, p)
            margin = max(margin, float(np.max((est - 3 * se) - bound)))
        checks.append(_at_most(f"lp_bound_p{p}", margin, 0.0, paths=paths, times=times.tolist()))
    return SuiteResult("lp_bound", checks)


def run_all(cs: CoefficientSet, seed: int, cfg: SolverConfig = SolverConfig(), T: float = 1.0, N: int = 4,
            paths: int = 10_000, wick_probes: int = 1000, wick_samples: int = 100_000,
            mild_probes: int = 8) -> list[SuiteResult]:
    return [
        wick_suite(seed, wick_probes, wick_samples),
        pde_oracle_suite(seed, cfg),
        mild_suite(cs, seed, cfg, mild_probes, T, N),
        lp_suite(cs, seed, cfg, paths, T, N),
    ]
