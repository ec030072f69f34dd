"""Monte Carlo check of the weak Fokker-Planck identity for the approximants.

Along every path, ``phi(t, X(t))`` is differentiated through the hyperbolic
equation. This splits ``phi(T, X(T)) - phi(0, c)`` into four time integrals:

* ``A``: the time derivative of ``phi``;
* ``B``: the transport part;
* ``C``: the zeroth-order part carrying ``Z/h``;
* ``D``: the drift part.

Their sum ``A - B + C + D`` telescopes per path. The Gaussian
integration-by-parts identity replaces ``E[C]`` by ``E[C2] + E[B]`` with a
term ``C2`` built from second derivatives of ``phi``. That identity holds
only in expectation and is checked by z-scores.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .hyperbolic import PdeProblem, eval_u_and_grad
from .process import WzTrajectory, _batched_table, _mean_se, build_wz
from .quadrature import gauss_legendre

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class TestFunction:
    """``phi`` with exact derivatives, vectorized over ``x[..., d]`` and broadcast ``t``."""

    __test__ = False  # not a pytest class

    name: str
    phi: Field
    dt: Field
    grad: Field
    hess: Field
    lo: np.ndarray
    hi: np.ndarray

    def check(self, rng: np.random.Generator, T: float, probes: int = 200, tol: float = 1e-6) -> None:
        """Spot-check derivatives against central differences and vanishing off the support."""
        d = len(self.lo)
        span = self.hi - self.lo
        t = rng.uniform(0, T, probes)
        x = self.lo + span * rng.uniform(-0.1, 1.1, (probes, d))
        eps = 1e-5
        fd_t = (self.phi(t + eps, x) - self.phi(t - eps, x)) / (2 * eps)
        _close(fd_t, self.dt(t, x), tol, "time derivative")
        g = self.grad(t, x)
        H = self.hess(t, x)
        for j in range(d):
            e = np.zeros(d)
            e[j] = eps
            _close((self.phi(t, x + e) - self.phi(t, x - e)) / (2 * eps), g[:, j], tol, "gradient")
            _close((self.grad(t, x + e) - self.grad(t, x - e)) / (2 * eps), H[:, j, :], tol, "Hessian")
        outside = self.hi + span * rng.uniform(0.01, 1.0, (probes, d))
        vals = [self.phi(t, outside), self.dt(t, outside), self.grad(t, outside), self.hess(t, outside)]
        if any(np.any(v != 0) for v in vals):
            raise AssertionError(f"{self.name}: nonzero outside the declared support")


def _close(a, b, tol, what):
    scale = max(1.0, float(np.max(np.abs(b))))
    if np.max(np.abs(a - b)) > tol * scale:
        raise AssertionError(f"{what} disagrees with finite differences by {np.max(np.abs(a - b)):.2e}")


def _step(s):
    """C-infinity step from 0 at ``s <= 0`` to 1 at ``s >= 1``, with two derivatives.

    Written as ``expit(-q)`` with ``q = 1/s - 1/(1-s)``. Inputs are clipped
    to ``[1e-3, 1 - 1e-3]``, where the step already equals 0 or 1 in double
    precision.
    """
    c = np.clip(s, 1e-3, 1 - 1e-3)
    q = 1 / c - 1 / (1 - c)
    q1 = -1 / c ** 2 - 1 / (1 - c) ** 2
    q2 = 2 / c ** 3 - 2 / (1 - c) ** 3
    v = expit(-q)
    w = v * (1 - v)
    d1 = -w * q1
    d2 = -((1 - 2 * v) * d1 * q1 + w * q2)
    return v, d1, d2


def _profile(z, ramp):
    """Plateau bump on ``|z| <= 1``: value, first and second derivative in ``z``."""
    a = np.abs(z)
    s = np.clip((1 - a) / ramp, 0.0, 1.0)
    inside = (s > 0) & (s < 1)
    v, d1, d2 = _step(s)
    v = np.where(s <= 0, 0.0, np.where(s >= 1, 1.0, v))
    d1 = np.where(inside, -np.sign(z) * d1 / ramp, 0.0)
    d2 = np.where(inside, d2 / ramp ** 2, 0.0)
    return v, d1, d2


def bump(name: str, center, halfwidth, T: float, ramp: float = 0.6, modulated: bool = True) -> TestFunction:
    """Product of one-dimensional plateau bumps, optionally times ``sin^2(pi t / T)``.

    The modulation makes ``phi`` vanish at ``t = 0`` and ``t = T``.
    """
    c = np.asarray(center, dtype=float)
    w = np.asarray(halfwidth, dtype=float)
    d = len(c)

    def time(t):
        t = np.asarray(t, dtype=float)
        if not modulated:
            return np.ones_like(t), np.zeros_like(t)
        return np.sin(np.pi * t / T) ** 2, (np.pi / T) * np.sin(2 * np.pi * t / T)

    def parts(x):
        z = (np.asarray(x, dtype=float) - c) / w
        v, d1, d2 = _profile(z, ramp)
        return v, d1 / w, d2 / w ** 2

    def phi(t, x):
        v, _, _ = parts(x)
        return time(t)[0] * np.prod(v, axis=-1)

    def dt(t, x):
        v, _, _ = parts(x)
        return time(t)[1] * np.prod(v, axis=-1)

    def grad(t, x):
        v, d1, _ = parts(x)
        out = np.empty(v.shape)
        for j in range(d):
            out[..., j] = d1[..., j] * np.prod(np.delete(v, j, axis=-1), axis=-1)
        return time(t)[0][..., None] * out

    def hess(t, x):
        v, d1, d2 = parts(x)
        out = np.empty(v.shape + (d,))
        for j in range(d):
            for l in range(d):
                if j == l:
                    out[..., j, j] = d2[..., j] * np.prod(np.delete(v, j, axis=-1), axis=-1)
                else:
                    rest = np.prod(np.delete(v, [j, l], axis=-1), axis=-1)
                    out[..., j, l] = d1[..., j] * d1[..., l] * rest
        return time(t)[0][..., None, None] * out

    return TestFunction(name, phi, dt, grad, hess, c - w, c + w)


def constant_function(d: int, value: float = 1.0, extent: float = 1e6) -> TestFunction:
    """``phi = value`` on a huge box; every derivative vanishes."""
    return TestFunction(
        "constant",
        lambda t, x: np.full(np.shape(x)[:-1], value),
        lambda t, x: np.zeros(np.shape(x)[:-1]),
        lambda t, x: np.zeros(np.shape(x)),
        lambda t, x: np.zeros(np.shape(x) + (d,)),
        np.full(d, -extent), np.full(d, extent),
    )


def shipped_bumps(wz: WzTrajectory | np.ndarray, T: float | None = None, modulated: bool = True,
                  ramp: float = 1.0) -> list[TestFunction]:
    """Three bumps placed on the empirical range of an ensemble.

    ``wz`` may also be a bare ``states`` array, in which case ``T`` is required.
    """
    states = wz if isinstance(wz, np.ndarray) else wz.states
    T = T if T is not None else wz.partition.T
    flat = states.reshape(-1, states.shape[-1])
    lo, hi = np.quantile(flat, 0.02, axis=0), np.quantile(flat, 0.98, axis=0)
    span = np.maximum(hi - lo, 1e-3)
    specs = [("bump_low", 0.35, 0.35), ("bump_mid", 0.5, 0.5), ("bump_high", 0.65, 0.3)]
    return [bump(name, lo + span * at, span * width, T, ramp=ramp, modulated=modulated) for name, at, width in specs]


@dataclass(frozen=True, eq=False)
class TermSamples:
    """Per-path values of the four terms and of the second-order IBP term."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    C2: np.ndarray
    boundary: np.ndarray        # phi(T, X(T)) - phi(0, c)
    covered: bool


def term_samples(wz: WzTrajectory, phis, nodes: int | None = None, paths=None):
    """Per-path term values with ``nodes`` Gauss-Legendre points per cell.

    ``phis`` is one test function or a list; ``u`` and its Jacobian are
    computed once per quadrature time and shared. ``paths`` selects a subset
    of the ensemble by index.
    """
    single = isinstance(phis, TestFunction)
    phis = [phis] if single else list(phis)
    cs, part, cfg = wz.cs, wz.partition, wz.cfg
    m = nodes or cfg.quad_nodes
    sel = np.arange(wz.n_paths) if paths is None else np.asarray(paths)
    Z = _batched_table(wz.increments)[sel]
    n = len(sel)
    acc = [{k: np.zeros(n) for k in ("A", "B", "C", "D", "C2")} for _ in phis]
    for k in range(part.N):
        t0, t1 = part.nodes[k], part.nodes[k + 1]
        hk = part.cell_length(k)
        p = PdeProblem(t0, t1, wz.at(t0)[sel], hk, cs)
        x = Z[:, :, k]
        tq, wq = gauss_legendre(t0, t1, m)
        for t, w in zip(tq, wq):
            t = float(t)
            u, G = eval_u_and_grad(p, t, x, cfg)           # G[b, i, j] = d u_j / d x_i
            tt = np.full(n, t)
            sig = cs.sigma_at(t)
            diag = sig * np.einsum("bii->bi", G)
            zero_order = sig * (x / hk) * u
            drift = cs.b(t, u)
            for phi, a in zip(phis, acc):
                g = phi.grad(tt, u)
                a["A"] += w * phi.dt(tt, u)
                a["B"] += w * np.einsum("bi,bi->b", g, diag)
                a["C"] += w * np.einsum("bi,bi->b", g, zero_order)
                a["D"] += w * np.einsum("bi,bi->b", g, drift)
                a["C2"] += w * np.einsum("i,bji,bij,bi->b", sig, phi.hess(tt, u), G, u)
    XT = wz.at(part.T)[sel]
    states = wz.states[sel]
    out = []
    for phi, a in zip(phis, acc):
        boundary = phi.phi(np.full(n, part.T), XT) - phi.phi(np.zeros(1), cs.c[None])
        covered = bool(np.all((states >= phi.lo) & (states <= phi.hi)))
        out.append(TermSamples(boundary=boundary, covered=covered, **a))
    return out[0] if single else out


@dataclass
class Estimate:
    estimate: float
    se: float

    @property
    def z(self) -> float:
        """``estimate / se``; NaN when both vanish, infinite when only the SE does."""
        if self.se == 0:
            return math.nan if self.estimate == 0 else math.copysign(math.inf, self.estimate)
        return self.estimate / self.se

    def within(self, limit: float = 3.0) -> bool:
        """``|z| <= limit``; an identically zero estimate counts as agreement."""
        if self.se == 0:
            return self.estimate == 0
        return abs(self.z) <= limit


@dataclass
class IbpResult:
    lhs: Estimate
    rhs: Estimate
    z: float            # paired: SE of the per-path difference
    z_pooled: float     # independent-sample SE, sqrt(se_lhs^2 + se_rhs^2)

    def within(self, limit: float = 3.0) -> bool:
        if math.isnan(self.z_pooled):
            return self.lhs.estimate == self.rhs.estimate
        return abs(self.z_pooled) <= limit


@dataclass
class TelescopingCheck:
    """Worst pathwise gap ``|A - B + C + D - (phi(T, X(T)) - phi(0, c))|`` at ``m`` and ``2m`` nodes."""

    paths: int
    solver_steps: int
    nodes: tuple[int, int]
    residuals: tuple[float, float]
    tol: float = 1e-6
    floor: float = 1e-10

    @property
    def passed(self) -> bool:
        coarse, fine = self.residuals
        shrinking = fine <= 0.5 * coarse or max(coarse, fine) <= self.floor
        return coarse <= self.tol and shrinking


@dataclass
class FpReport:
    phi_id: str
    n_paths: int
    nodes: int
    A: Estimate
    B: Estimate
    C: Estimate
    D: Estimate
    zz: Estimate                    # E[A] - E[B] + E[C] + E[D], pooled SE
    zz_paired_z: float              # same, SE of the per-path sum
    weak_form: Estimate             # E[A + C2 + D], after integration by parts
    telescoping: TelescopingCheck | None
    ibp: IbpResult
    flags: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.zz.within() and self.ibp.within() and (self.telescoping is None or self.telescoping.passed)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("A", "B", "C", "D", "zz", "weak_form"):
            out[key]["z"] = _finite_or_none(getattr(self, key).z)
        out["zz_paired_z"] = _finite_or_none(self.zz_paired_z)
        out["ibp"]["z"] = _finite_or_none(self.ibp.z)
        out["ibp"]["z_pooled"] = _finite_or_none(self.ibp.z_pooled)
        if self.telescoping is not None:
            out["telescoping"]["passed"] = self.telescoping.passed
        out["passed"] = self.passed
        return out


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


def _z(diff: np.ndarray) -> float:
    est, se = _mean_se(diff)
    if se == 0:
        return math.nan
    return est / se


def _pooled(estimates, signs) -> Estimate:
    return Estimate(float(sum(s * e.estimate for s, e in zip(signs, estimates))),
                    math.sqrt(sum(e.se ** 2 for e in estimates)))


def ibp_residual(wz_or_samples, phi: TestFunction | None = None, nodes: int | None = None) -> IbpResult:
    """``E[C]`` against ``E[C2] + E[B]``; both sides with SEs and the z-score of their gap."""
    s = wz_or_samples if isinstance(wz_or_samples, TermSamples) else term_samples(wz_or_samples, phi, nodes)
    lhs = Estimate(*_mean_se(s.C))
    rhs = Estimate(*_mean_se(s.C2 + s.B))
    pooled = math.hypot(lhs.se, rhs.se)
    gap = lhs.estimate - rhs.estimate
    z_pooled = (math.nan if gap == 0 else math.copysign(math.inf, gap)) if pooled == 0 else gap / pooled
    return IbpResult(lhs, rhs, _z(s.C - s.C2 - s.B), z_pooled)


def telescoping_residual(wz: WzTrajectory, phis, nodes: int, paths=None):
    """Worst pathwise telescoping gap per test function."""
    single = isinstance(phis, TestFunction)
    samples = term_samples(wz, [phis] if single else phis, nodes, paths)
    out = [float(np.max(np.abs(s.A - s.B + s.C + s.D - s.boundary))) for s in samples]
    return out[0] if single else out


def telescoping_check(wz: WzTrajectory, phis, nodes: int = 128, paths: int = 16,
                      steps: int | None = None) -> list[TelescopingCheck]:
    """Pathwise telescoping gaps at ``nodes`` and ``2 * nodes`` on the first ``paths`` paths.

    The subset is rebuilt with ``steps`` solver steps (default: twice the
    ensemble's) so that the solver's own error sits below the quadrature
    error being measured.
    """
    phis = [phis] if isinstance(phis, TestFunction) else list(phis)
    sel = np.arange(min(paths, wz.n_paths))
    steps = steps or 2 * wz.cfg.steps
    table = wz.increments.with_values(_batched_table(wz.increments)[sel])
    sub = build_wz(wz.cs, wz.partition, table, wz.times, replace(wz.cfg, steps=steps))
    coarse = telescoping_residual(sub, phis, nodes)
    fine = telescoping_residual(sub, phis, 2 * nodes)
    return [TelescopingCheck(len(sel), steps, (nodes, 2 * nodes), (c, f)) for c, f in zip(coarse, fine)]


def concat_samples(parts: list[TermSamples]) -> TermSamples:
    """Join per-chunk samples of one test function in chunk order."""
    arrays = {k: np.concatenate([getattr(p, k) for p in parts]) for k in ("A", "B", "C", "D", "C2", "boundary")}
    return TermSamples(covered=all(p.covered for p in parts), **arrays)


def summarize(phi: TestFunction, s: TermSamples, nodes: int,
              telescoping: TelescopingCheck | None = None) -> FpReport:
    """Estimates and identity z-scores from per-path samples."""
    terms = [Estimate(*_mean_se(getattr(s, k))) for k in "ABCD"]
    flags = []
    if not s.covered:
        flags.append("support does not cover the trajectory range; phi is zero there")
    ibp = ibp_residual(s)
    if all(e.se == 0 and e.estimate == 0 for e in terms):
        flags.append("z undefined: every term vanishes identically")
    elif math.isnan(ibp.z):
        flags.append("paired z undefined: the per-path gap has zero spread")
    return FpReport(
        phi_id=phi.name, n_paths=len(s.A), nodes=nodes,
        A=terms[0], B=terms[1], C=terms[2], D=terms[3],
        zz=_pooled(terms, (1, -1, 1, 1)), zz_paired_z=_z(s.A - s.B + s.C + s.D),
        weak_form=Estimate(*_mean_se(s.A + s.C2 + s.D)),
        telescoping=telescoping, ibp=ibp, flags=flags,
    )


def estimate_terms(wz: WzTrajectory, phis, nodes: int | None = None,
                   telescoping_nodes: int | None = 128, telescoping_paths: int = 16,
                   telescoping_steps: int | None = None):
    """Term estimates, identity z-scores and the telescoping check for each test function.

    The z-scores use all paths at ``nodes`` points per cell; see
    :func:`telescoping_check` for the pathwise check. Pass ``None`` as
    ``telescoping_nodes`` to skip it.
    """
    single = isinstance(phis, TestFunction)
    phis = [phis] if single else list(phis)
    m = nodes or wz.cfg.quad_nodes
    samples = term_samples(wz, phis, m)
    tele = [None] * len(phis)
    if telescoping_nodes:
        tele = telescoping_check(wz, phis, telescoping_nodes, telescoping_paths, telescoping_steps)
    reports = [summarize(phi, s, m, tc) for phi, s, tc in zip(phis, samples, tele)]
    return reports[0] if single else reports


def write_fp_json(reports: list[FpReport], dest: str | Path) -> None:
    with open(dest, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_fp_csv(reports: list[FpReport], dest: str | Path) -> None:
    """Columns ``phi_id, term, estimate, se, z``; ``z`` only on rows that test an identity."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi_id", "term", "estimate", "se", "z"])
        for r in reports:
            for name in ("A", "B", "C", "D"):
                e = getattr(r, name)
                w.writerow([r.phi_id, name, repr(e.estimate), repr(e.se), ""])
            for name, e in (("zz", r.zz), ("weak_form", r.weak_form)):
                w.writerow([r.phi_id, name, repr(e.estimate), repr(e.se), _fmt_z(e.z)])
            w.writerow([r.phi_id, "ibp_lhs", repr(r.ibp.lhs.estimate), repr(r.ibp.lhs.se), ""])
            w.writerow([r.phi_id, "ibp_rhs", repr(r.ibp.rhs.estimate), repr(r.ibp.rhs.se), _fmt_z(r.ibp.z_pooled)])
            if r.telescoping is not None:
                for m, res in zip(r.telescoping.nodes, r.telescoping.residuals):
                    w.writerow([r.phi_id, f"telescoping_{m}", repr(res), "", ""])


def _fmt_z(z: float) -> str:
    return "undefined" if not math.isfinite(z) else repr(z)
