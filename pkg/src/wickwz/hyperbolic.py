"""Point evaluation of the auxiliary semilinear hyperbolic system on one cell.

Component ``i`` of ``u`` is transported along ``x_i`` with speed ``sigma_i``
and satisfies the mild identity

    u_i(t, x) = alpha_i e^{(x_i/h) S_i(r,t) - S_i(r,t)^2 / 2h}
              + int_r^t b_i(s, u(s, x - S_i(s,t) e_i)) e^{(x_i/h) S_i(s,t) - S_i(s,t)^2 / 2h} ds

with ``S_i = Sigma_i``. Evaluating ``u`` at ``(t, x)`` only needs ``u`` on the
characteristic fan below ``(t, x)``. On uniform time nodes ``s_0 = r < ... <
s_K = t`` that fan lives on a lattice: at level ``n`` the points
``x_j - Sigma_j(s_{K - p_j}, t)`` with ``0 <= p_j <= K - n``. For constant
``sigma`` every fan foot is again a lattice point; otherwise feet are placed
by cubic interpolation along the moving axis.

Picard sweeps act on the whole lattice at once: one sweep is one application
of the mild map, with the time integral done by the running-integral rule of
:func:`wickwz.quadrature.volterra_weights`. The integral term is linear in
``b(u)`` once the path-dependent factor ``e^{x_i S_i(s,t)/h}`` is split as
``e^{x_i S_i(r,t)/h} e^{-x_i S_i(r,s)/h}``, so it is stored as one sparse
matrix per component and shared by every path of a batch.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .coeffs import CoefficientSet, component_view, sigma_integrals
from .quadrature import gauss_legendre, lagrange_weights, volterra_weights

EXP_LIMIT = 700.0


class PicardConvergenceError(RuntimeError):
    def __init__(self, residual: float, sweeps: int, cell: int | None = None):
        self.residual = residual
        self.sweeps = sweeps
        self.cell = cell
        where = "" if cell is None else f" in cell {cell}"
        super().__init__(f"Picard iteration did not converge{where}: residual {residual:.3e} after {sweeps} sweeps")

    def in_cell(self, cell: int) -> "PicardConvergenceError":
        return PicardConvergenceError(self.residual, self.sweeps, cell)


class DomainCoverageError(ValueError):
    """A characteristic foot leaves the computational grid."""


@dataclass(frozen=True)
class SolverConfig:
    """Controls of the fan solver and of the independent quadratures.

    ``steps`` uniform time nodes per fan and local interpolation degree
    ``order`` set the solver's own discretization. ``quad_nodes`` is the
    Gauss-Legendre count used by residual checks and time integrals, which
    deliberately never share nodes with the solver.
    """

    steps: int = 10
    order: int = 6
    quad_nodes: int = 8
    picard_max: int = 12
    picard_tol: float = 1e-10
    fd_step: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.quad_nodes < 2:
            raise ValueError("quad_nodes must be >= 2")
        if self.picard_max < 1:
            raise ValueError("picard_max must be >= 1")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")


@dataclass(frozen=True, eq=False)
class PdeProblem:
    r: float
    horizon: float
    alpha: np.ndarray
    h: float
    cs: CoefficientSet

    def __post_init__(self):
        if not self.r < self.horizon:
            raise ValueError(f"need r < horizon, got r={self.r}, horizon={self.horizon}")
        if not self.h > 0:
            raise ValueError("mesh h must be positive")
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape[-1] != self.cs.dim:
            raise ValueError(f"alpha has {alpha.shape[-1]} components, dimension is {self.cs.dim}")
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True, eq=False)
class _Fan:
    times: np.ndarray       # (K+1,)
    S: np.ndarray           # (K+1, d): Sigma_i(r, s_n)
    offsets: np.ndarray     # (d, V): Sigma_i(s_{K-p_i}, t) at every lattice entry
    level: np.ndarray       # (V,)
    origin: np.ndarray      # (K+1,): entry of (level n, p = 0)
    mats: tuple             # d sparse (V, V)


@lru_cache(maxsize=512)
def _fan(cs: CoefficientSet, r: float, t: float, h: float, steps: int, order: int) -> _Fan:
    d, K = cs.dim, steps
    E = min(order, K)
    dt = (t - r) / K
    # nodes past t only place the extra lattice points of the start-up levels
    ext = r + dt * np.arange(K + E + 1)
    ext[K] = t
    S_ext = sigma_integrals(cs, np.full(K + E + 1, r), ext)
    off = (S_ext[K] - S_ext[K - np.arange(-E, K + 1)]).T       # off[:, p + E]
    times, S = ext[:K + 1], S_ext[:K + 1]

    # Level n holds p_j in [-lo_n, K - n] on every axis that moves. Negative
    # indices let start-up rows (n < E) reach levels above n with full-order
    # stencils; with one moving axis the range lo_n = min(n, E) is closed
    # under all fan moves. With several moving axes that closure is unbounded,
    # so the lattice stays causal (lo_n = 0) and start-up rows use the
    # reduced-order causal rule. Axes without diffusion never spread and
    # collapse to the single index 0.
    frozen = np.array([cs.sigma_const is not None and cs.sigma_const[j] == 0.0 for j in range(d)])
    extended = int(np.sum(~frozen)) <= 1
    lows = [min(n, E) if extended else 0 for n in range(K + 1)]

    def span(n, j):
        return range(0, 1) if frozen[j] else range(-lows[n], K - n + 1)

    entries = []
    index = np.full((K + 1,) + (K + E + 1,) * d, -1, dtype=np.int64)
    for n in range(K + 1):
        for P in itertools.product(*(span(n, j) for j in range(d))):
            index[(n,) + tuple(q + E for q in P)] = len(entries)
            entries.append((n,) + P)
    ent = np.array(entries, dtype=np.int64)
    level, lattice = ent[:, 0], ent[:, 1:]
    origin = index[(np.arange(K + 1),) + (np.full(K + 1, E),) * d]
    offsets = off[np.arange(d)[:, None], lattice.T + E]

    W = volterra_weights(K, order, causal=not extended) * dt
    exact = cs.sigma_const is not None
    mats = []
    for i in range(d):
        rows, cols, vals = [], [], []
        for n in range(1, K + 1):
            at_n = np.flatnonzero(level == n)
            P = lattice[at_n]
            off_p = off[i, P[:, i] + E]
            for m in np.flatnonzero(W[n]):
                sig = S[n, i] - S[m, i]
                coef = W[n, m] * np.exp(-(off_p * sig) / h - sig * sig / (2 * h))
                if frozen[i]:
                    feet = [(P[:, i], np.ones(len(P)))]
                else:
                    feet = _fan_feet(off[i], E, P[:, i], n, m, sig, -lows[m], K - m, exact)
                for q, w in feet:
                    Q = P.copy()
                    Q[:, i] = q
                    cols.append(index[(np.full(len(Q), m),) + tuple((Q + E).T)])
                    rows.append(at_n)
                    vals.append(coef * w)
        rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
        if np.any(cols < 0):
            raise AssertionError("fan foot left the lattice")
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(ent), len(ent))))
    return _Fan(times, S, offsets, level, origin, tuple(mats))


def _fan_feet(off, E, p, n, m, sig, lo, hi, exact):
    """Lattice indices and weights of the feet ``off[p] + sig`` at a level with ``p`` in ``[lo, hi]``."""
    if exact or m == n:
        return [(p + (n - m), np.ones(len(p)))]
    nodes = off[lo + E:hi + E + 1]
    step = np.diff(nodes)
    if np.all(step > 0):
        flip = False
    elif np.all(step < 0):
        flip = True
        nodes = nodes[::-1]
    else:
        raise ValueError("sigma vanishes or changes sign inside a cell; fan lattice is degenerate")
    out: dict[int, np.ndarray] = {}
    for row, pv in enumerate(p):
        start, w = lagrange_weights(nodes, off[pv + E] + sig)
        for k, wk in enumerate(w):
            q = start + k
            if flip:
                q = len(nodes) - 1 - q
            out.setdefault(q + lo, np.zeros(len(p)))[row] += wk
    return [(np.full(len(p), q), w) for q, w in out.items()]


@dataclass(frozen=True, eq=False)
class FanSolution:
    """``u`` along the anchor's vertical line ``(s_n, x)`` for a batch of anchors."""

    times: np.ndarray           # (K+1,)
    values: np.ndarray          # (B, d, K+1)
    residuals: tuple[float, ...]

    @property
    def sweeps(self) -> int:
        return len(self.residuals)

    def at_level(self, n: int) -> np.ndarray:
        """``u(s_n, x)`` for every anchor: shape ``(B, d)``."""
        return self.values[:, :, n]


def _batch(alpha, x, d: int) -> tuple[np.ndarray, np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    single = x.ndim == 1 and alpha.ndim == 1
    x2 = np.atleast_2d(x)
    a2 = np.atleast_2d(alpha)
    B = max(len(x2), len(a2))
    if x2.shape[-1] != d or a2.shape[-1] != d:
        raise ValueError(f"points and initial values need {d} components")
    return np.broadcast_to(a2, (B, d)), np.broadcast_to(x2, (B, d)), single


def solve_fan(p: PdeProblem, t: float, x, cfg: SolverConfig = SolverConfig()) -> FanSolution:
    """Picard solve on the fan lattice anchored at ``(t, x)``; ``x`` may be batched ``(B, d)``.

    Separable drifts are solved one component at a time on one-axis fans.
    """
    if not p.r < t <= p.horizon:
        raise ValueError(f"anchor time {t} outside ]{p.r}, {p.horizon}]")
    cs = p.cs
    alpha, x, _ = _batch(p.alpha, x, cs.dim)
    if cs.zero_drift:
        return _solve_free(cs, float(p.r), float(t), float(p.h), alpha, x, cfg)
    if cs.dim == 1 or cs.separable_drift is None:
        times, vals, res = _solve_lattice(cs, float(p.r), float(t), float(p.h), alpha, x, cfg)
        return FanSolution(times, vals, res)
    parts = [_solve_lattice(component_view(cs, i), float(p.r), float(t), float(p.h),
                            alpha[:, i:i + 1], x[:, i:i + 1], cfg) for i in range(cs.dim)]
    sweeps = max(len(r) for _, _, r in parts)
    res = tuple(max(r[k] if k < len(r) else 0.0 for _, _, r in parts) for k in range(sweeps))
    return FanSolution(parts[0][0], np.concatenate([v for _, v, _ in parts], axis=1), res)


def _solve_free(cs, r, t, h, alpha, x, cfg) -> FanSolution:
    """Zero drift: only the closed-form first term, on the same time nodes as the fan."""
    K = cfg.steps
    times = r + (t - r) / K * np.arange(K + 1)
    times[K] = t
    S = sigma_integrals(cs, np.full(K + 1, r), times)                         # (K+1, d)
    if np.any(np.abs(x) * np.abs(S[-1]) / h > EXP_LIMIT):
        raise OverflowError("fan exponent exceeds the representable range; |x| too large for this mesh")
    ep = np.exp(S.T[None] * (x[:, :, None] / h))
    vals = ep * np.exp(-S.T * S.T / (2 * h))[None] * alpha[:, :, None]
    if not np.all(np.isfinite(vals)):
        raise OverflowError("stochastic exponential overflow in the initial term")
    return FanSolution(times, vals, ())


_BLOCK = 512


def _solve_lattice(cs, r, t, h, alpha, x, cfg):
    """Picard sweeps in path blocks small enough to stay in cache."""
    if len(x) <= _BLOCK:
        return _solve_block(cs, r, t, h, alpha, x, cfg)
    parts = [_solve_block(cs, r, t, h, alpha[a:a + _BLOCK], x[a:a + _BLOCK], cfg)
             for a in range(0, len(x), _BLOCK)]
    sweeps = max(len(p[2]) for p in parts)
    residuals = tuple(max(p[2][j] for p in parts if j < len(p[2])) for j in range(sweeps))
    return parts[0][0], np.concatenate([p[1] for p in parts]), residuals


def _solve_block(cs, r, t, h, alpha, x, cfg):
    """Picard sweeps on one lattice; arrays are laid out ``(component, entry, path)``."""
    fan = _fan(cs, r, t, h, cfg.steps, cfg.order)
    if np.any(np.abs(x) * np.abs(fan.S[-1]) / h > EXP_LIMIT):
        raise OverflowError("fan exponent exceeds the representable range; |x| too large for this mesh")
    d = cs.dim
    S_lvl = fan.S[fan.level].T                                                 # (d, V)
    # exponent of the first term is x S / h minus a path-independent part
    const = np.exp(-fan.offsets * S_lvl / h - S_lvl * S_lvl / (2 * h))         # (d, V)
    ep = np.exp(S_lvl[:, :, None] * (x.T[:, None, :] / h))                     # (d, V, B)
    first = ep * const[:, :, None] * alpha.T[:, None, :]
    if not np.all(np.isfinite(first)):
        raise OverflowError("stochastic exponential overflow in the initial term")
    if cs.zero_drift:
        return fan.times, np.moveaxis(first[:, fan.origin], -1, 0), ()

    em = 1.0 / ep
    t_lvl = fan.times[fan.level][:, None]
    sep = cs.separable_drift
    u = first.copy()
    residuals = []
    for sweep in range(cfg.picard_max):
        if sep is not None:
            drift = [sep(i, t_lvl, u[i]) for i in range(d)]
        else:
            full = np.moveaxis(cs.b(t_lvl[..., None], np.moveaxis(u, 0, -1)), -1, 0)
            drift = [full[i] for i in range(d)]
        new = np.empty_like(u)
        for i in range(d):
            drift[i] *= em[i]
            new[i] = fan.mats[i] @ drift[i]
            new[i] *= ep[i]
            new[i] += first[i]
        diff = np.subtract(new, u, out=u)
        np.abs(diff, out=diff)
        diff /= np.maximum(np.abs(new), 1.0)
        res = float(np.max(diff))
        residuals.append(res)
        u = new
        if not np.isfinite(res):
            raise PicardConvergenceError(res, sweep + 1)
        if res <= cfg.picard_tol:
            return fan.times, np.moveaxis(u[:, fan.origin], -1, 0), tuple(residuals)
    raise PicardConvergenceError(residuals[-1], cfg.picard_max)


def eval_u(p: PdeProblem, t: float, x, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """``u(t, x; r, alpha)``; batched over leading axis of ``x`` / ``alpha``."""
    alpha, xb, single = _batch(p.alpha, x, p.cs.dim)
    if t < p.r or t > p.horizon:
        raise ValueError(f"t={t} outside [{p.r}, {p.horizon}]")
    if t == p.r:
        out = np.array(alpha, dtype=float)
    else:
        out = solve_fan(p, t, xb, cfg).at_level(cfg.steps)
    return out[0] if single else out


def _fd_steps(x: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    if cfg.fd_step is not None:
        base = np.full_like(x, cfg.fd_step)
    else:
        base = np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(x))
    return (x + base) - x


def eval_u_grad(p: PdeProblem, t: float, x, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """``G[..., i, j] = d u_j / d x_i`` by central differences of :func:`eval_u`.

    All shifted points go through one batched solve so they share the same
    number of Picard sweeps.
    """
    return eval_u_and_grad(p, t, x, cfg)[1]


def eval_u_and_grad(p: PdeProblem, t: float, x, cfg: SolverConfig = SolverConfig()):
    """``u`` and its central-difference Jacobian from one batched solve per group.

    For a separable drift ``u_j`` does not depend on ``x_i`` (``i != j``), so
    only the diagonal differences are formed; the off-diagonal ones would be
    exactly zero.
    """
    alpha, xb, single = _batch(p.alpha, x, p.cs.dim)
    B, d = xb.shape
    step = _fd_steps(xb, cfg)
    grad = np.zeros((B, d, d))
    if p.cs.separable_drift is not None and d > 1:
        vals = np.empty((B, d))
        for i in range(d):
            view = component_view(p.cs, i)
            xi = xb[:, i:i + 1]
            pts = np.concatenate([xi, xi + step[:, i:i + 1], xi - step[:, i:i + 1]])
            q = PdeProblem(p.r, p.horizon, np.concatenate([alpha[:, i:i + 1]] * 3), p.h, view)
            ui = eval_u(q, t, pts, cfg)[:, 0].reshape(3, B)
            vals[:, i] = ui[0]
            grad[:, i, i] = (ui[1] - ui[2]) / (2 * step[:, i])
    else:
        pts = [xb]
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            pts += [xb + step[:, i:i + 1] * e, xb - step[:, i:i + 1] * e]
        q = PdeProblem(p.r, p.horizon, np.concatenate([alpha] * (2 * d + 1)), p.h, p.cs)
        out = eval_u(q, t, np.concatenate(pts), cfg).reshape(2 * d + 1, B, d)
        vals = out[0]
        for i in range(d):
            grad[:, i, :] = (out[1 + 2 * i] - out[2 + 2 * i]) / (2 * step[:, i:i + 1])
    if single:
        return vals[0], grad[0]
    return vals, grad


def growth_bound_check(p: PdeProblem, t: float, x, cfg: SolverConfig = SolverConfig()) -> bool:
    """Check ``|u_i| <= |alpha_i| e^{x_i S_i(r,t)/h} + M int_r^t e^{x_i S_i(s,t)/h} ds``."""
    alpha, xb, _ = _batch(p.alpha, x, p.cs.dim)
    lhs = np.abs(np.atleast_2d(eval_u(p, t, xb, cfg)))
    if t == p.r:
        return bool(np.all(lhs <= np.abs(alpha) * (1 + 1e-9) + 1e-9))
    full = sigma_integrals(p.cs, p.r, t)
    s, w = gauss_legendre(p.r, t, max(cfg.quad_nodes, 16))
    part = sigma_integrals(p.cs, s, np.full_like(s, t))                       # (q, d)
    integral = np.einsum("q,bqi->bi", w, np.exp(xb[:, None, :] * part[None] / p.h))
    M = 0.0 if p.cs.zero_drift else p.cs.M
    rhs = np.abs(alpha) * np.exp(xb * full / p.h) + M * integral
    return bool(np.all(lhs <= rhs * (1 + 1e-9) + 1e-9))


# semi-Lagrangian grid backend, used as an independent cross-check -----------

@dataclass(frozen=True)
class GridSpec:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    points: int = 512
    steps: int = 200


@dataclass(frozen=True, eq=False)
class GridField:
    """``v`` on a tensor grid at time ``t``; ``u = v e^{|x|^2 / 2h}``."""

    axes: tuple[np.ndarray, ...]
    values: np.ndarray          # (d, *grid)
    problem: PdeProblem
    t: float

    def _coords(self, x: np.ndarray) -> np.ndarray:
        return np.stack([(x[:, j] - ax[0]) / (ax[1] - ax[0]) for j, ax in enumerate(self.axes)])

    def v_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self._check_cover(x)
        coords = self._coords(x)
        return np.stack([ndimage.map_coordinates(self.values[i], coords, order=3, mode="grid-constant")
                         for i in range(len(self.axes))], axis=-1)

    def u_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.v_at(x) * np.exp(np.sum(x * x, axis=-1, keepdims=True) / (2 * self.problem.h))

    def _check_cover(self, x: np.ndarray) -> None:
        p = self.problem
        exc = sigma_integrals(p.cs, p.r, self.t)
        lo = np.array([ax[0] for ax in self.axes])
        hi = np.array([ax[-1] for ax in self.axes])
        feet_lo = x - np.maximum(exc, 0.0)
        feet_hi = x - np.minimum(exc, 0.0)
        if np.any(feet_lo < lo) or np.any(feet_hi > hi):
            raise DomainCoverageError("characteristic foot of an evaluation point lies outside the grid")


def grid_solve_v(p: PdeProblem, grid: GridSpec, cfg: SolverConfig = SolverConfig()) -> GridField:
    """Semi-Lagrangian solve of the ``v``-system on ``[r, horizon]``, ``d <= 2``.

    Each step moves component ``i`` along ``x_i`` by ``Sigma_i(t_n, t_{n+1})``
    (cubic spline shift, zero inflow) and integrates the source with Heun's
    trapezoidal rule along the characteristic.
    """
    cs = p.cs
    d = cs.dim
    if d > 2:
        raise ValueError("grid backend supports d <= 2")
    alpha = np.asarray(p.alpha, dtype=float)
    if alpha.ndim != 1:
        raise ValueError("grid backend takes one constant initial vector")
    lo = np.broadcast_to(np.asarray(grid.lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(grid.hi, dtype=float), (d,))
    axes = tuple(np.linspace(lo[j], hi[j], grid.points) for j in range(d))
    dx = np.array([ax[1] - ax[0] for ax in axes])
    mesh = np.meshgrid(*axes, indexing="ij")
    sq = sum(m * m for m in mesh) / (2 * p.h)
    damp = np.exp(-sq)
    lift = np.exp(np.minimum(sq, EXP_LIMIT))
    v = np.stack([alpha[i] * damp for i in range(d)])
    times = np.linspace(p.r, p.horizon, grid.steps + 1)
    xs = np.stack(mesh, axis=-1)

    def source(t, vv):
        if cs.zero_drift:
            return np.zeros_like(vv)
        u = np.moveaxis(vv * lift, 0, -1)
        return np.moveaxis(cs.b(t, u), -1, 0) * damp

    def move(field, i, shift):
        vec = np.zeros(d)
        vec[i] = shift / dx[i]
        return ndimage.shift(field, vec, order=3, mode="grid-constant")

    del xs
    for n in range(grid.steps):
        t0, t1 = times[n], times[n + 1]
        dt = t1 - t0
        shifts = sigma_integrals(cs, t0, t1)
        f0 = source(t0, v)
        pred = np.stack([move(v[i] + dt * f0[i], i, shifts[i]) for i in range(d)])
        f1 = source(t1, pred)
        v = np.stack([move(v[i] + 0.5 * dt * f0[i], i, shifts[i]) + 0.5 * dt * f1[i] for i in range(d)])
    return GridField(axes, v, p, float(p.horizon))
