"""Wong-Zakai-Wick trajectories, the coupled Ito reference, and error measures.

On cell ``k`` the approximant is the hyperbolic solution started from the
previous node value and evaluated at the cell's Brownian increment, so a
trajectory is a chain of fan solves, one per cell, batched over paths.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coeffs import CoefficientSet, sigma_integrals
from .hyperbolic import PdeProblem, PicardConvergenceError, SolverConfig, eval_u, solve_fan
from .paths import BrownianPath, IncrementTable, Partition, _node_index, partition_increments
from .quadrature import gauss_legendre
from .wick import (ITO, POLYGONAL, PathFunctional, StochExpSpec, stoch_exp_ito, stoch_exp_pi,
                   translate_path, wick_mul_exp, wick_shifts)

SCHEMES = ("euler", "milstein", "exact-gbm")


def default_sample_times(partition: Partition, interior: int = 4) -> np.ndarray:
    """Partition nodes plus ``interior`` equally spaced points inside every cell."""
    pts = [partition.nodes[:1]]
    for a, b in zip(partition.nodes[:-1], partition.nodes[1:]):
        inner = a + (b - a) * np.arange(1, interior + 1) / (interior + 1)
        pts += [inner, np.array([b])]
    return np.concatenate(pts)


def _check_times(times, partition: Partition) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if times[0] < 0 or times[-1] > partition.T:
        raise ValueError(f"sample times must lie in [0, {partition.T}]")
    missing = np.setdiff1d(partition.nodes, times)
    if len(missing):
        raise ValueError(f"sample times miss partition nodes {missing[:3]}")
    return times


@dataclass(frozen=True, eq=False)
class WzTrajectory:
    """``states[b, j, i]`` is component ``i`` of path ``b`` at ``times[j]``."""

    times: np.ndarray
    states: np.ndarray
    partition: Partition
    cs: CoefficientSet
    cfg: SolverConfig
    increments: IncrementTable
    seed: int | None = None
    path_ids: np.ndarray | None = None
    source_digest: str | None = None
    sweeps: tuple[int, ...] = field(default=())

    def at(self, t: float) -> np.ndarray:
        return self.states[:, _node_index(self.times, t)]

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True, eq=False)
class ItoTrajectory:
    times: np.ndarray
    states: np.ndarray
    scheme: str
    seed: int | None = None
    path_ids: np.ndarray | None = None
    source_digest: str | None = None

    def at(self, t: float) -> np.ndarray:
        return self.states[:, _node_index(self.times, t)]

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def _batched_table(increments: IncrementTable) -> np.ndarray:
    z = increments.values
    return z[None] if z.ndim == 2 else z


def build_wz(cs: CoefficientSet, partition: Partition, increments: IncrementTable,
             sample_times=None, cfg: SolverConfig = SolverConfig(),
             source: BrownianPath | None = None) -> WzTrajectory:
    """Chain the cell solves; ``increments`` may carry a leading path axis.

    Requested times that coincide with the solver's own time nodes are read
    off the fan anchored at the cell's right end; any others get a solve
    anchored at that time.
    """
    times = default_sample_times(partition) if sample_times is None else _check_times(sample_times, partition)
    Z = _batched_table(increments)
    if Z.shape[1] != cs.dim:
        raise ValueError(f"increment table has {Z.shape[1]} components, coefficients have {cs.dim}")
    B = Z.shape[0]
    out = np.empty((B, len(times), cs.dim))
    X = np.broadcast_to(cs.c, (B, cs.dim)).copy()
    out[:, 0] = X
    sweeps = []
    for k in range(partition.N):
        t0, t1 = partition.nodes[k], partition.nodes[k + 1]
        p = PdeProblem(t0, t1, X, partition.cell_length(k), cs)
        x = Z[:, :, k]
        inside = np.flatnonzero((times > t0) & (times <= t1))
        try:
            sol = solve_fan(p, t1, x, cfg)
            sweeps.append(sol.sweeps)
            for j in inside:
                n = np.flatnonzero(np.abs(sol.times - times[j]) <= 1e-12 * (1.0 + abs(times[j])))
                if len(n):
                    out[:, j] = sol.at_level(int(n[0]))
                else:
                    out[:, j] = eval_u(p, float(times[j]), x, cfg)
        except PicardConvergenceError as err:
            raise err.in_cell(k) from None
        X = out[:, inside[-1]].copy()
    ids = None if source is None else source.path_ids
    return WzTrajectory(times, out, partition, cs, cfg, increments,
                        seed=None if source is None else source.seed, path_ids=ids,
                        source_digest=None if source is None else source.digest(), sweeps=tuple(sweeps))


def build_wz_from_path(cs: CoefficientSet, partition: Partition, path: BrownianPath,
                       sample_times=None, cfg: SolverConfig = SolverConfig()) -> WzTrajectory:
    return build_wz(cs, partition, partition_increments(path, partition), sample_times, cfg, source=path)


def build_ito(cs: CoefficientSet, path: BrownianPath, sample_times, scheme: str = "milstein") -> ItoTrajectory:
    """Reference solution on the path's fine grid.

    ``euler`` is Euler-Maruyama, ``milstein`` adds the diagonal Milstein
    correction (strong order one for this noise), ``exact-gbm`` is the
    closed form for zero drift.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    times = np.asarray(sample_times, dtype=float)
    idx = np.array([_node_index(path.fine_nodes, t) for t in times])
    W = path.values if path.batched else path.values[None]
    B, d = W.shape[0], W.shape[-1]
    if d != cs.dim:
        raise ValueError(f"path has {d} components, coefficients have {cs.dim}")
    out = np.empty((B, len(times), d))
    if scheme == "exact-gbm":
        if not cs.zero_drift:
            raise ValueError("exact-gbm needs zero drift")
        for j, t in enumerate(times):
            for i in range(d):
                out[:, j, i] = cs.c[i] * stoch_exp_ito(StochExpSpec(i, 0.0, float(t), 1, ITO), cs, path)
        return ItoTrajectory(times, out, scheme, path.seed, path.path_ids, path.digest())

    nodes = path.fine_nodes
    dts = np.diff(nodes)
    sig = cs.sigma_at(nodes[:-1])                                # (F-1, d)
    dW = np.diff(W, axis=1)                                       # (B, F-1, d)
    X = np.broadcast_to(cs.c, (B, d)).copy()
    want = {int(j): n for n, j in enumerate(idx)}
    if 0 in want:
        out[:, want[0]] = X
    for f in range(len(dts)):
        dw = dW[:, f]
        step = cs.b(nodes[f], X) * dts[f] + sig[f] * X * dw
        if scheme == "milstein":
            step = step + 0.5 * sig[f] ** 2 * X * (dw * dw - dts[f])
        X = X + step
        if f + 1 in want:
            out[:, want[f + 1]] = X
    return ItoTrajectory(times, out, scheme, path.seed, path.path_ids, path.digest())


def coarsen(path: BrownianPath, factor: int = 2) -> BrownianPath:
    """The same path seen on every ``factor``-th fine node."""
    if (len(path.fine_nodes) - 1) % factor:
        raise ValueError("fine grid size not divisible by the coarsening factor")
    return BrownianPath(path.fine_nodes[::factor], path.values[..., ::factor, :], path.seed, path.path_ids)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(np.mean(x)), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(len(x)))


def l1_samples(wz: WzTrajectory, ito: ItoTrajectory, t: float) -> np.ndarray:
    """Per-path ``sum_i |X^pi_i(t) - X_i(t)|`` for a coupled pair of ensembles."""
    if wz.n_paths != ito.n_paths:
        raise ValueError("ensembles differ in size")
    if wz.source_digest is None or wz.source_digest != ito.source_digest:
        raise ValueError("ensembles were not built from the same Brownian paths")
    return np.sum(np.abs(wz.at(t) - ito.at(t)), axis=-1)


def l1_error(wz: WzTrajectory, ito: ItoTrajectory, t: float) -> tuple[float, float]:
    """Monte Carlo mean of ``sum_i |X^pi_i(t) - X_i(t)|`` and its standard error."""
    return _mean_se(l1_samples(wz, ito, t))


def reference_gaps(cs: CoefficientSet, path: BrownianPath, times, scheme: str = "milstein") -> np.ndarray:
    """Per-path ``sum_i |X_R(t) - X_{R/2}(t)|`` at each time, shape ``(paths, times)``.

    ``X_{R/2}`` is the same scheme on every second fine node of the same path.
    """
    fine = build_ito(cs, path, times, scheme).states
    coarse = build_ito(cs, coarsen(path), times, scheme).states
    return np.sum(np.abs(fine - coarse), axis=-1)


def reference_self_error(cs: CoefficientSet, path: BrownianPath, t: float, scheme: str = "milstein") -> tuple[float, float]:
    """``E sum_i |X_R(t) - X_{R/2}(t)|`` between the reference and its half-resolution twin."""
    return _mean_se(reference_gaps(cs, path, [t], scheme)[:, 0])


# mild-form residuals -------------------------------------------------------

def node_functional(cs: CoefficientSet, partition: Partition, k: int, cfg: SolverConfig) -> PathFunctional:
    """``X^pi(t_k)`` as a functional of the increment table (reads cells ``< k`` only)."""
    nodes = partition.nodes[:k + 1]

    def fn(table: IncrementTable) -> np.ndarray:
        if k == 0:
            return np.broadcast_to(cs.c, _batched_table(table).shape[:1] + (cs.dim,)).copy()
        traj = build_wz(cs, partition, table, _with_all_nodes(nodes, partition), cfg)
        return traj.at(nodes[-1])

    return PathFunctional(fn, frozenset((i, j) for i in range(cs.dim) for j in range(k)))


def _with_all_nodes(head: np.ndarray, partition: Partition) -> np.ndarray:
    return np.concatenate([head, partition.nodes[len(head):]])


def mild_residual(traj: WzTrajectory, k: int, t: float, quad_nodes: int | None = None) -> np.ndarray:
    """Right minus left side of the cell-wise mild identity at ``t`` in cell ``k``.

    The right side is assembled from Wick products: the node value against
    the exponential over ``[t_k, t]``, plus a Gauss-Legendre integral of the
    drift Wick-multiplied by ``E_i(s, t)``. Returns shape ``(paths, d)``.
    """
    cs, part, cfg = traj.cs, traj.partition, traj.cfg
    t0, t1 = part.nodes[k], part.nodes[k + 1]
    if not t0 <= t <= t1:
        raise ValueError(f"t={t} not in cell {k}")
    m = quad_nodes or cfg.quad_nodes + 1
    table = traj.increments
    node = node_functional(cs, part, k, cfg)
    left = traj.at(t)
    right = np.empty_like(left)
    s_nodes, s_w = gauss_legendre(t0, t, m)
    for i in range(cs.dim):
        first = wick_mul_exp(PathFunctional(lambda tb: node(tb)[..., i], node.deps),
                             StochExpSpec(i, float(t0), float(t)), cs, table)
        integral = np.zeros_like(first)
        if t > t0 and not cs.zero_drift:
            for s, w in zip(s_nodes, s_w):
                integral = integral + w * wick_mul_exp(_drift_functional(cs, part, k, float(s), i, cfg, node),
                                                       StochExpSpec(i, float(s), float(t)), cs, table)
        right[:, i] = first + integral
    return right - left


def _drift_functional(cs, part, k, s, i, cfg, node) -> PathFunctional:
    """``b_i(s, X^pi(s))`` for ``s`` in cell ``k``, read from the table."""

    def fn(table: IncrementTable) -> np.ndarray:
        Z = _batched_table(table)
        alpha = node(table)
        p = PdeProblem(part.nodes[k], part.nodes[k + 1], alpha, part.cell_length(k), cs)
        x = Z[:, :, k]
        u = alpha if s == part.nodes[k] else eval_u(p, s, x, cfg)
        return cs.b(s, u)[..., i]

    deps = node.deps | frozenset((j, k) for j in range(cs.dim))
    return PathFunctional(fn, deps)


def global_residual(traj: WzTrajectory, t: float, quad_nodes: int | None = None) -> np.ndarray:
    """Right minus left of the identity started at time 0, integrated cell by cell."""
    cs, part, cfg = traj.cs, traj.partition, traj.cfg
    m = quad_nodes or cfg.quad_nodes + 1
    table = traj.increments
    left = traj.at(t)
    right = np.empty_like(left)
    for i in range(cs.dim):
        total = cs.c[i] * stoch_exp_pi(StochExpSpec(i, 0.0, float(t)), cs, table)
        total = np.broadcast_to(total, left.shape[:1]).copy()
        if not cs.zero_drift:
            for k, a, b in part.cells_meeting(0.0, t):
                node = node_functional(cs, part, k, cfg)
                s_nodes, s_w = gauss_legendre(a, b, m)
                for s, w in zip(s_nodes, s_w):
                    total += w * wick_mul_exp(_drift_functional(cs, part, k, float(s), i, cfg, node),
                                              StochExpSpec(i, float(s), float(t)), cs, table)
        right[:, i] = total
    return right - left


# moment bounds -------------------------------------------------------------

def lp_first_cell_bound(cs: CoefficientSet, partition: Partition, t: float, p: float, nodes: int = 64) -> np.ndarray:
    """Per-component bound on ``||X^pi_i(t)||_p`` for ``t`` in the first cell."""
    t1 = partition.nodes[1]
    if not 0 < t <= t1:
        raise ValueError("bound applies inside the first cell")
    h = partition.cell_length(0)
    full = sigma_integrals(cs, 0.0, t)
    s = np.linspace(0.0, t, nodes + 1)
    sup = np.max(sigma_integrals(cs, s, np.full_like(s, t)) ** 2, axis=0)
    M = 0.0 if cs.zero_drift else cs.M
    return np.abs(cs.c) * np.exp(p * full ** 2 / (2 * h)) + M * t * np.exp(p * sup / (2 * h))


def lp_norm_estimate(samples: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """``(E|Y|^p)^(1/p)`` per column with a delta-method standard error."""
    a = np.abs(np.asarray(samples, dtype=float)) ** p
    m = np.mean(a, axis=0)
    se_m = np.std(a, axis=0, ddof=1) / np.sqrt(len(a))
    est = m ** (1.0 / p)
    return est, est / (p * m) * se_m


# Gronwall sanity check -----------------------------------------------------

def gronwall_m_hat(cs: CoefficientSet, partition: Partition, path: BrownianPath, t: float,
                   scheme: str = "milstein", per_cell: int = 2) -> tuple[float, float]:
    """Monte Carlo estimate of the forcing term of the Gronwall argument at ``t``.

    It is the exponential mismatch ``sum_i |c_i| E|E^pi_i(0,t) - E_i(0,t)|``
    plus the time integral of ``E|b_i(s, X(s)) <> E^pi_i(s,t) - b_i(s, X(s)) E_i(s,t)|``.
    The polygonal Wick product shifts the fine path by the polygonal ramp
    and re-simulates ``X(s)``; on the Ito side ``X(s)`` does not see the
    increments after ``s``, so the product is a plain one. The ``s``
    integral is a trapezoidal sum on fine nodes, ``per_cell`` panels per cell.
    """
    table = partition_increments(path, partition)
    W = path.values if path.batched else path.values[None]
    B = W.shape[0]
    per_path = np.zeros(B)
    for i in range(cs.dim):
        e_pi = stoch_exp_pi(StochExpSpec(i, 0.0, t), cs, table)
        e_it = stoch_exp_ito(StochExpSpec(i, 0.0, t, 1, ITO), cs, path)
        per_path += abs(cs.c[i]) * np.abs(e_pi - e_it)
    if not cs.zero_drift and t > 0:
        grid = _trapezoid_grid(partition, path.fine_nodes, t, per_cell)
        weights = np.zeros(len(grid))
        gaps = np.diff(grid)
        weights[:-1] += gaps / 2
        weights[1:] += gaps / 2
        plain = build_ito(cs, path, grid, scheme)
        for i in range(cs.dim):
            for j, s in enumerate(grid):
                s = float(s)
                spec = StochExpSpec(i, s, t)
                shifted = translate_path(path, partition, i, wick_shifts(spec, cs, partition))
                xs = build_ito(cs, shifted, [s], scheme).states[:, 0]
                wick = cs.b(s, xs)[:, i] * stoch_exp_pi(spec, cs, table)
                ito = cs.b(s, plain.states[:, j])[:, i] * stoch_exp_ito(StochExpSpec(i, s, t, 1, ITO), cs, path)
                per_path += weights[j] * np.abs(wick - ito)
    return _mean_se(per_path)


def _trapezoid_grid(partition: Partition, fine: np.ndarray, t: float, per_cell: int) -> np.ndarray:
    pts = [0.0]
    for k, a, b in partition.cells_meeting(0.0, t):
        for q in range(1, per_cell + 1):
            target = a + (b - a) * q / per_cell
            pts.append(float(fine[np.argmin(np.abs(fine - target))]))
    return np.unique(np.array(pts))


# output --------------------------------------------------------------------

def write_trajectory_csv(wz: WzTrajectory, ito: ItoTrajectory, dest: str | Path, path: int = 0) -> None:
    """One path of a coupled pair: columns ``seed, t, component, x_wz, x_ito``."""
    if not np.array_equal(wz.times, ito.times):
        raise ValueError("trajectories are sampled at different times")
    seed = "" if wz.seed is None else wz.seed
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "t", "component", "x_wz", "x_ito"])
        for j, t in enumerate(wz.times):
            for i in range(wz.states.shape[-1]):
                w.writerow([seed, repr(float(t)), i, repr(float(wz.states[path, j, i])),
                            repr(float(ito.states[path, j, i]))])


__all__ = [
    "SCHEMES", "WzTrajectory", "ItoTrajectory", "default_sample_times", "build_wz", "build_wz_from_path",
    "build_ito", "coarsen", "l1_samples", "l1_error", "reference_gaps", "reference_self_error", "mild_residual", "global_residual",
    "node_functional", "lp_first_cell_bound", "lp_norm_estimate", "gronwall_m_hat", "write_trajectory_csv",
    "POLYGONAL",
]
