"""Stochastic exponentials and Wick products against them.

Wick products are only ever taken against a stochastic exponential, where
they reduce to a Cameron-Martin shift of the argument followed by an
ordinary product. For the polygonal noise the shift moves the partition
increment of each cell met by ``[s, t]`` by the diffusion integral over the
overlap, so everything stays a function of the increment table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .coeffs import CoefficientSet, polygonal_pieces, polygonal_weighted_integral
from .paths import BrownianPath, IncrementTable, Partition, _node_index

EXP_LIMIT = 700.0
POLYGONAL = "polygonal"
ITO = "ito"


@dataclass(frozen=True)
class StochExpSpec:
    """Component ``i``, interval ``[s, t]``, sign (+1 or -1) and noise side."""

    i: int
    s: float
    t: float
    sign: int = 1
    side: str = POLYGONAL

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if self.side not in (POLYGONAL, ITO):
            raise ValueError(f"side must be {POLYGONAL!r} or {ITO!r}, got {self.side!r}")
        if not 0 <= self.s <= self.t:
            raise ValueError(f"need 0 <= s <= t, got s={self.s}, t={self.t}")
        if self.i < 0:
            raise ValueError("component index must be nonnegative")


@dataclass(frozen=True, eq=False)
class PathFunctional:
    """A random variable given as a function of the increment table.

    ``deps`` lists the ``(component, cell)`` increments the map may read;
    ``None`` means it may read all of them.
    """

    fn: Callable[[IncrementTable], np.ndarray]
    deps: frozenset | None = None

    def __call__(self, table: IncrementTable) -> np.ndarray:
        return np.asarray(self.fn(table), dtype=float)

    def reads(self, i: int, k: int) -> bool:
        return self.deps is None or (i, k) in self.deps

    def __abs__(self) -> "PathFunctional":
        return PathFunctional(lambda table: np.abs(self(table)), self.deps)

    @classmethod
    def constant(cls, value: float) -> "PathFunctional":
        return cls(lambda table: np.full(table.values.shape[:-2], float(value)), frozenset())

    def spot_check(self, table: IncrementTable, rng: np.random.Generator, probes: int = 3) -> None:
        """Perturb undeclared increments and require a bit-identical value."""
        if self.deps is None:
            return
        base = self(table)
        free = np.ones(table.values.shape[-2:], dtype=bool)
        for i, k in self.deps:
            free[i, k] = False
        if not free.any():
            return
        for _ in range(probes):
            noise = rng.normal(size=table.values.shape) * free
            if not np.array_equal(self(table.with_values(table.values + noise)), base):
                raise AssertionError("functional reads increments outside its declared dependencies")


def exp_functional(spec: StochExpSpec, cs: CoefficientSet, partition: Partition) -> PathFunctional:
    """The polygonal stochastic exponential of ``spec`` as a path functional."""
    deps = frozenset((spec.i, k) for k, _, _ in partition.cells_meeting(spec.s, spec.t))
    return PathFunctional(lambda table: stoch_exp_pi(spec, cs, table), deps)


def _exp_checked(exponent) -> np.ndarray:
    exponent = np.asarray(exponent, dtype=float)
    if np.any(exponent > EXP_LIMIT):
        raise OverflowError(f"stochastic exponential exponent {np.max(exponent):.1f} exceeds {EXP_LIMIT}")
    return np.exp(exponent)


def log_stoch_exp_pi(spec: StochExpSpec, cs: CoefficientSet, increments: IncrementTable) -> np.ndarray:
    if spec.side != POLYGONAL:
        raise ValueError("spec is not on the polygonal side")
    value, variance = polygonal_weighted_integral(cs, increments, spec.i, spec.s, spec.t)
    return spec.sign * value - 0.5 * variance


def stoch_exp_pi(spec: StochExpSpec, cs: CoefficientSet, increments: IncrementTable) -> np.ndarray:
    """Polygonal exponential ``exp(sign * int sigma_i dB^pi_i - variance / 2)``."""
    return _exp_checked(log_stoch_exp_pi(spec, cs, increments))


def _ito_sums(spec: StochExpSpec, cs: CoefficientSet, path: BrownianPath) -> tuple[np.ndarray, float]:
    nodes = path.fine_nodes
    a, b = _node_index(nodes, spec.s), _node_index(nodes, spec.t)
    left = nodes[a:b]
    sig = cs.sigma_at(left)[..., spec.i]
    dB = np.diff(path.values[..., a:b + 1, spec.i], axis=-1)
    return dB @ sig, float(np.sum(sig * sig * np.diff(nodes[a:b + 1])))


def log_stoch_exp_ito(spec: StochExpSpec, cs: CoefficientSet, path: BrownianPath) -> np.ndarray:
    if spec.side != ITO:
        raise ValueError("spec is not on the Ito side")
    value, compensator = _ito_sums(spec, cs, path)
    return spec.sign * value - 0.5 * compensator


def stoch_exp_ito(spec: StochExpSpec, cs: CoefficientSet, path: BrownianPath) -> np.ndarray:
    """Left-point Ito exponential on the fine grid; ``s`` and ``t`` must be fine nodes.

    The compensator is the matching left-point sum of ``sigma_i^2``, which
    keeps the mean exactly one for any grid.
    """
    return _exp_checked(log_stoch_exp_ito(spec, cs, path))


def translate(increments: IncrementTable, i: int, k: int, a: float) -> IncrementTable:
    """Shift the path by ``a`` spread uniformly over cell ``k`` in component ``i``."""
    if not 0 <= k < increments.partition.N:
        raise ValueError(f"cell {k} outside 0..{increments.partition.N - 1}")
    if not 0 <= i < increments.dim:
        raise ValueError(f"component {i} outside 0..{increments.dim - 1}")
    values = np.array(increments.values)
    values[..., i, k] -= a
    return increments.with_values(values)


def wick_shifts(spec: StochExpSpec, cs: CoefficientSet, partition: Partition) -> list[tuple[int, float]]:
    """Per-cell shift amounts ``(cell, a)`` realizing the Wick product with ``spec``."""
    return [(k, spec.sign * sig) for k, sig, _ in polygonal_pieces(cs, partition, spec.i, spec.s, spec.t)]


def wick_mul_exp(X: PathFunctional, spec: StochExpSpec, cs: CoefficientSet,
                 increments: IncrementTable) -> np.ndarray:
    """``X`` Wick-multiplied by the polygonal exponential of ``spec``.

    ``X`` is evaluated on the table shifted cell by cell, then multiplied by
    the exponential. When ``X`` reads none of the shifted increments the
    shift is a no-op; that shortcut is checked against the shifted
    evaluation rather than assumed.
    """
    if spec.side != POLYGONAL:
        raise ValueError("Wick products are formed on the polygonal side only")
    shifts = wick_shifts(spec, cs, increments.partition)
    shifted = increments
    for k, a in shifts:
        shifted = translate(shifted, spec.i, k, a)
    value = X(shifted)
    if not any(X.reads(spec.i, k) for k, _ in shifts):
        plain = X(increments)
        if not np.array_equal(plain, value):
            raise AssertionError("functional changed under a shift of increments it does not read")
    return value * stoch_exp_pi(spec, cs, increments)


def translate_path(path: BrownianPath, partition: Partition, i: int,
                   shifts: Iterable[tuple[int, float]]) -> BrownianPath:
    """Fine-grid version of :func:`translate` for functionals of the whole path.

    Each ``(k, a)`` subtracts the ramp rising linearly from 0 to ``a`` across
    cell ``k`` (and staying at ``a`` afterwards) from component ``i``.
    """
    fine = path.fine_nodes
    ramp = np.zeros(len(fine))
    for k, a in shifts:
        t0, t1 = partition.nodes[k], partition.nodes[k + 1]
        ramp += a * np.clip((fine - t0) / (t1 - t0), 0.0, 1.0)
    values = np.array(path.values)
    values[..., :, i] -= ramp
    return BrownianPath(fine, values, path.seed, path.path_ids)
