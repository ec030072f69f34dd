"""Problem data: drift, diagonal diffusion profiles, bounds and initial state.

The diffusion of component ``i`` is ``sigma_i(t) X_i``; its time integrals
``Sigma_i(s, t)`` drive every exponential in the construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from .paths import IncrementTable, Partition
from .quadrature import gauss_legendre

Drift = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Drift ``b(t, x)`` (vectorized over ``x[..., d]``), diffusions and bounds.

    ``sigma`` holds one vectorized callable per component. When every profile
    is constant, ``sigma_const`` carries the values; solvers use it to place
    characteristic feet exactly on their lattices. ``separable_drift(i, t, y)``
    may be given when ``b_i`` depends on ``x_i`` alone; solvers then treat the
    components independently.
    """

    dim: int
    drift: Drift
    sigma: tuple[Callable[[np.ndarray], np.ndarray], ...]
    M: float
    L: float
    c: np.ndarray
    name: str = "custom"
    sigma_integral_closed: Callable[[int, float, float], float] | None = None
    sigma_const: np.ndarray | None = None
    drift_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    zero_drift: bool = False
    oracle_only: bool = False
    separable_drift: Callable[[int, np.ndarray, np.ndarray], np.ndarray] | None = None
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        if c.shape != (self.dim,):
            raise ValueError(f"initial condition has shape {c.shape}, expected ({self.dim},)")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        if len(self.sigma) != self.dim:
            raise ValueError(f"{len(self.sigma)} diffusion profiles for dimension {self.dim}")
        if not (self.M >= 0 and self.L >= 0):
            raise ValueError("bounds M and L must be nonnegative")
        if not self.oracle_only and not (np.isfinite(self.M) and np.isfinite(self.L)):
            raise ValueError("M and L must be finite unless the set is flagged oracle-only")
        if self.sigma_const is not None:
            s = np.array(self.sigma_const, dtype=float)
            s.setflags(write=False)
            object.__setattr__(self, "sigma_const", s)

    def b(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.zero_drift:
            return np.zeros_like(x)
        return self.drift(t, x)

    def sigma_at(self, t) -> np.ndarray:
        """``sigma_i(t)`` stacked on a trailing axis."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(s(t), dtype=float), t.shape) for s in self.sigma], axis=-1)

    def check_bounds(self, rng: np.random.Generator, probes: int = 1000, scale: float = 10.0) -> None:
        """Spot-check ``|b_i| <= M`` and ``|b(x) - b(y)|_1 <= L |x - y|_1``."""
        if self.oracle_only:
            return
        t = rng.uniform(0.0, 1.0, probes)
        x = rng.normal(0.0, scale, (probes, self.dim))
        y = x + rng.normal(0.0, 1.0, (probes, self.dim))
        bx, by = self.b(t, x), self.b(t, y)
        if np.max(np.abs(bx)) > self.M * (1 + 1e-12) + 1e-15:
            raise ValueError(f"drift exceeds declared bound M={self.M}")
        lhs = np.sum(np.abs(bx - by), axis=-1)
        rhs = self.L * np.sum(np.abs(x - y), axis=-1)
        if np.any(lhs > rhs * (1 + 1e-12) + 1e-15):
            raise ValueError(f"drift violates declared Lipschitz constant L={self.L}")


@lru_cache(maxsize=256)
def component_view(cs: CoefficientSet, i: int) -> CoefficientSet:
    """One-dimensional set for component ``i`` of a separable drift."""
    if cs.separable_drift is None:
        raise ValueError("drift is not separable")
    closed = cs.sigma_integral_closed
    return CoefficientSet(
        dim=1,
        drift=lambda t, x: cs.separable_drift(i, t, x[..., 0])[..., None],
        sigma=(cs.sigma[i],), M=cs.M, L=cs.L, c=cs.c[i:i + 1], name=f"{cs.name}[{i}]",
        sigma_integral_closed=None if closed is None else (lambda _, s, t: closed(i, s, t)),
        sigma_const=None if cs.sigma_const is None else cs.sigma_const[i:i + 1],
        zero_drift=cs.zero_drift, oracle_only=cs.oracle_only,
        separable_drift=lambda _, t, y: cs.separable_drift(i, t, y),
    )


def sigma_integral(cs: CoefficientSet, i: int, s: float, t: float, nodes: int = 16) -> float:
    """``Sigma_i(s, t)``: closed form when known, Gauss-Legendre otherwise."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if s == t:
        return 0.0
    if cs.sigma_integral_closed is not None:
        return float(cs.sigma_integral_closed(i, s, t))
    x, w = gauss_legendre(s, t, nodes)
    return float(np.dot(w, cs.sigma[i](x)))


def sigma_integrals(cs: CoefficientSet, s, t, nodes: int = 16) -> np.ndarray:
    """Vectorized ``Sigma_i(s, t)`` for all components; shape ``broadcast(s, t) + (d,)``."""
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    if np.any(s > t):
        raise ValueError("need s <= t")
    if cs.sigma_const is not None:
        return (t - s)[..., None] * cs.sigma_const
    if cs.sigma_integral_closed is not None:
        # closed forms of the shipped families are numpy expressions
        return np.stack([np.broadcast_to(cs.sigma_integral_closed(i, s, t), s.shape)
                         for i in range(cs.dim)], axis=-1)
    knots, weights = np.polynomial.legendre.leggauss(nodes)
    half, mid = 0.5 * (t - s), 0.5 * (t + s)
    r = mid[..., None] + half[..., None] * knots
    vals = cs.sigma_at(r)
    return np.einsum("...q,q,...qi->...i", half[..., None] * np.ones_like(knots), weights, vals)


class SigmaIntegralCache:
    """Memo of ``Sigma_i`` over whole cells, plus sub-cell pieces on demand."""

    def __init__(self, cs: CoefficientSet, partition: Partition, nodes: int = 16):
        self.cs = cs
        self.partition = partition
        self.nodes = nodes
        self.cells = np.array(
            [[sigma_integral(cs, i, a, b, nodes) for i in range(cs.dim)]
             for a, b in zip(partition.nodes[:-1], partition.nodes[1:])]
        )

    def between(self, i: int, s: float, t: float) -> float:
        total = 0.0
        for k, a, b in self.partition.cells_meeting(s, t):
            if a == self.partition.nodes[k] and b == self.partition.nodes[k + 1]:
                total += self.cells[k, i]
            else:
                total += sigma_integral(self.cs, i, a, b, self.nodes)
        return total


def polygonal_pieces(cs: CoefficientSet, partition: Partition, i: int, s: float, t: float):
    """``(cell, Sigma_i over the overlap, cell length)`` for every cell meeting ``[s, t]``."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if s < 0 or t > partition.T:
        raise ValueError(f"[{s}, {t}] not inside [0, {partition.T}]")
    return [(k, sigma_integral(cs, i, a, b), partition.cell_length(k))
            for k, a, b in partition.cells_meeting(s, t)]


def polygonal_weighted_integral(cs: CoefficientSet, increments: IncrementTable, i: int,
                                s: float, t: float) -> tuple[np.ndarray, float]:
    """``int_s^t sigma_i dB_i^pi`` as a combination of increments, and its variance."""
    value = np.zeros(increments.values.shape[:-2])
    variance = 0.0
    for k, sig, hk in polygonal_pieces(cs, increments.partition, i, s, t):
        value = value + sig * increments.values[..., i, k] / hk
        variance += sig * sig / hk
    return value, variance


# built-in families ---------------------------------------------------------

def _as_vec(v, d: int, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.full(d, float(arr[0]))
    if arr.shape != (d,):
        raise ValueError(f"parameter {name!r} needs {d} entries, got {arr.size}")
    return arr


def _sigma_profiles(sigma: np.ndarray, slope: np.ndarray | None):
    if slope is None or not np.any(slope):
        profiles = tuple((lambda t, v=v: np.full(np.shape(t), v)) for v in sigma)
        closed = lambda i, s, t: sigma[i] * (t - s)
        return profiles, closed, sigma
    profiles = tuple((lambda t, a=a, b=b: a + b * np.asarray(t, dtype=float)) for a, b in zip(sigma, slope))
    closed = lambda i, s, t: sigma[i] * (t - s) + 0.5 * slope[i] * (t * t - s * s)
    return profiles, closed, None


def make_coefficients(family: str, dim: int, c: Sequence[float] | float = 1.0,
                      sigma: Sequence[float] | float = 1.0,
                      sigma_slope: Sequence[float] | float | None = None,
                      beta: Sequence[float] | float = 1.0,
                      coupling: Sequence[Sequence[float]] | None = None) -> CoefficientSet:
    """Build one of the shipped coefficient families.

    ``zero``: ``b = 0``. ``tanh``: ``b_i = beta_i tanh(x_i)``. ``coupled_tanh``:
    ``b_i = tanh(sum_j A_ij x_j)``. ``linear``: ``b_i = beta_i x_i``, unbounded,
    flagged oracle-only.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    c_vec = _as_vec(c, dim, "c")
    sig = _as_vec(sigma, dim, "sigma")
    slope = None if sigma_slope is None else _as_vec(sigma_slope, dim, "sigma_slope")
    profiles, closed, const = _sigma_profiles(sig, slope)
    params = {"family": family, "dim": dim, "c": c_vec.tolist(), "sigma": sig.tolist()}
    if slope is not None:
        params["sigma_slope"] = slope.tolist()
    common = dict(dim=dim, sigma=profiles, c=c_vec, name=family,
                  sigma_integral_closed=closed, sigma_const=const)

    if family == "zero":
        return CoefficientSet(drift=lambda t, x: np.zeros_like(x), M=0.0, L=0.0,
                              zero_drift=True, params=params,
                              separable_drift=lambda i, t, y: np.zeros_like(y),
                              drift_jacobian=lambda t, x: np.zeros(np.shape(x) + (dim,)), **common)
    if family == "tanh":
        b = _as_vec(beta, dim, "beta")
        params["beta"] = b.tolist()

        def jac(t, x, b=b):
            x = np.asarray(x, dtype=float)
            return np.eye(dim) * (b / np.cosh(x) ** 2)[..., None, :]

        return CoefficientSet(drift=lambda t, x, b=b: b * np.tanh(x), M=float(np.max(np.abs(b))),
                              L=float(np.max(np.abs(b))), params=params, drift_jacobian=jac,
                              separable_drift=lambda i, t, y, b=b: b[i] * np.tanh(y), **common)
    if family == "coupled_tanh":
        A = np.eye(dim) if coupling is None else np.array(coupling, dtype=float)
        if A.shape != (dim, dim):
            raise ValueError(f"coupling matrix must be {dim}x{dim}, got {A.shape}")
        params["coupling"] = A.tolist()

        def jac(t, x, A=A):
            z = np.asarray(x, dtype=float) @ A.T
            return (1.0 / np.cosh(z) ** 2)[..., :, None] * A

        return CoefficientSet(drift=lambda t, x, A=A: np.tanh(np.asarray(x) @ A.T), M=1.0,
                              L=float(np.max(np.sum(np.abs(A), axis=0))), params=params,
                              drift_jacobian=jac, **common)
    if family == "linear":
        b = _as_vec(beta, dim, "beta")
        params["beta"] = b.tolist()
        return CoefficientSet(drift=lambda t, x, b=b: b * np.asarray(x), M=np.inf,
                              L=float(np.max(np.abs(b))), oracle_only=True, params=params,
                              separable_drift=lambda i, t, y, b=b: b[i] * np.asarray(y),
                              drift_jacobian=lambda t, x, b=b: np.eye(dim) * b * np.ones(np.shape(x) + (1,)),
                              **common)
    raise ValueError(f"unknown coefficient family {family!r}")


FAMILIES = ("zero", "tanh", "coupled_tanh", "linear")
