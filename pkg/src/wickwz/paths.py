"""Brownian paths, partitions, partition increments and polygonal interpolation.

Randomness comes from a Philox counter-based generator keyed by
``(seed, path index)``, so path ``j`` of an ensemble is the same array no
matter how many paths are drawn, in which order, or on which thread.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class AlignmentError(ValueError):
    """A partition node is missing from the fine grid of a path."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Partition:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = _freeze(self.nodes)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("a partition needs at least the nodes 0 and T")
        if nodes[0] != 0.0:
            raise ValueError(f"first node must be 0, got {nodes[0]}")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("partition nodes must be strictly increasing")
        # narrower cells cannot be refined in double precision and make Z/h meaningless
        if np.any(np.diff(nodes) <= 1e-12 * nodes[-1]):
            raise ValueError("partition cells must be wider than 1e-12 T")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, T: float, N: int) -> "Partition":
        if N < 1 or T <= 0:
            raise ValueError(f"need T > 0 and N >= 1, got T={T}, N={N}")
        nodes = np.array([k * T / N for k in range(N + 1)])
        return cls(nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def cell_length(self, k: int) -> float:
        return float(self.nodes[k + 1] - self.nodes[k])

    def cell_of(self, t: float) -> int:
        """Index ``k`` of the cell ``[t_k, t_{k+1}]`` holding ``t``; nodes go left."""
        if t < 0 or t > self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        k = int(np.searchsorted(self.nodes, t, side="left")) - 1
        return min(max(k, 0), self.N - 1)

    def cells_meeting(self, s: float, t: float) -> list[tuple[int, float, float]]:
        """Cells with a nonempty overlap with ``[s, t]`` and the overlap ends."""
        out = []
        for k in range(self.N):
            a = max(s, self.nodes[k])
            b = min(t, self.nodes[k + 1])
            if b > a:
                out.append((k, float(a), float(b)))
        return out

    def refine(self, factor: int) -> np.ndarray:
        """Fine grid splitting every cell into ``factor`` equal pieces."""
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        pieces = [np.linspace(a, b, factor + 1)[:-1] for a, b in zip(self.nodes[:-1], self.nodes[1:])]
        fine = np.concatenate(pieces + [self.nodes[-1:]])
        # exact node values, linspace can drift in the last ulp
        fine[::factor] = self.nodes
        return fine


def _philox(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_nodes(fine_nodes) -> np.ndarray:
    nodes = np.asarray(fine_nodes, dtype=float)
    if nodes.ndim != 1 or len(nodes) == 0:
        raise ValueError("fine_nodes must be a nonempty 1-d sequence")
    if nodes[0] != 0.0:
        raise ValueError("fine_nodes must start at 0")
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("fine_nodes must be strictly increasing")
    return nodes


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """``values[..., j, i]`` is ``B_i(fine_nodes[j])``; a leading axis batches paths."""

    fine_nodes: np.ndarray
    values: np.ndarray
    seed: int
    path_ids: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "fine_nodes", _freeze(self.fine_nodes))
        object.__setattr__(self, "values", _freeze(self.values))
        ids = np.array(self.path_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "path_ids", ids)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def batched(self) -> bool:
        return self.values.ndim == 3

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.seed).tobytes())
        h.update(self.path_ids.tobytes())
        h.update(self.fine_nodes.tobytes())
        h.update(self.values.tobytes())
        return h.hexdigest()

    def at(self, t: float) -> np.ndarray:
        j = _node_index(self.fine_nodes, t)
        return self.values[..., j, :]


def _node_index(nodes: np.ndarray, t: float) -> int:
    j = int(np.searchsorted(nodes, t))
    if j >= len(nodes) or nodes[j] != t:
        raise AlignmentError(f"time {t!r} is not a node of the fine grid")
    return j


def sample_brownian(d: int, fine_nodes, seed: int, path_index: int = 0) -> BrownianPath:
    """One ``d``-dimensional Brownian path sampled at ``fine_nodes``."""
    nodes = _check_nodes(fine_nodes)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return BrownianPath(nodes, _draw(d, nodes, seed, path_index), seed, np.array([path_index]))


def sample_brownian_paths(d: int, fine_nodes, seed: int, path_ids) -> BrownianPath:
    """Batch of paths; path ``j`` equals ``sample_brownian(d, nodes, seed, j)``."""
    nodes = _check_nodes(fine_nodes)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    ids = np.asarray(path_ids, dtype=np.int64)
    values = np.stack([_draw(d, nodes, seed, int(j)) for j in ids])
    return BrownianPath(nodes, values, seed, ids)


def _draw(d: int, nodes: np.ndarray, seed: int, index: int) -> np.ndarray:
    out = np.zeros((len(nodes), d))
    if len(nodes) > 1:
        gen = _philox(seed, index)
        dt = np.diff(nodes)
        # component-major draw order: stream layout is independent of the grid refinement code
        z = gen.standard_normal((d, len(nodes) - 1))
        out[1:] = np.cumsum((z * np.sqrt(dt)).T, axis=0)
    return out


@dataclass(frozen=True, eq=False)
class IncrementTable:
    """``values[..., i, k] = B_i(t_{k+1}) - B_i(t_k)`` (cell ``k`` is ``[t_k, t_{k+1}]``)."""

    values: np.ndarray
    partition: Partition

    def __post_init__(self):
        v = _freeze(self.values)
        if v.shape[-1] != self.partition.N:
            raise ValueError(f"table has {v.shape[-1]} cells, partition has {self.partition.N}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[-2]

    def cell(self, k: int) -> np.ndarray:
        return self.values[..., :, k]

    def node_values(self) -> np.ndarray:
        """``B(t_k)`` for every node, rebuilt by cumulative summation."""
        zero = np.zeros(self.values.shape[:-1] + (1,))
        return np.concatenate([zero, np.cumsum(self.values, axis=-1)], axis=-1)

    def with_values(self, values: np.ndarray) -> "IncrementTable":
        return IncrementTable(values, self.partition)


def partition_increments(path: BrownianPath, partition: Partition) -> IncrementTable:
    idx = [_node_index(path.fine_nodes, t) for t in partition.nodes]
    at_nodes = path.values[..., idx, :]
    z = np.diff(at_nodes, axis=-2)
    return IncrementTable(np.swapaxes(z, -1, -2), partition)


def polygonal_eval(path: BrownianPath, partition: Partition, t: float) -> np.ndarray:
    """Piecewise linear interpolation of the path between partition nodes."""
    if t < 0 or t > partition.T:
        raise ValueError(f"t={t} outside [0, {partition.T}]")
    nodes = partition.nodes
    if t == partition.T:
        return path.at(partition.T).copy()
    k = int(np.searchsorted(nodes, t, side="right")) - 1
    left, right = path.at(nodes[k]), path.at(nodes[k + 1])
    if t == nodes[k]:
        return left.copy()
    theta = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
    return (1.0 - theta) * left + theta * right


def polygonal_sup_error(path: BrownianPath, partition: Partition) -> np.ndarray:
    """``max_t |B^pi(t) - B(t)|`` over the fine grid (per path, max over components)."""
    fine = path.fine_nodes
    nodes = partition.nodes
    k = np.clip(np.searchsorted(nodes, fine, side="right") - 1, 0, partition.N - 1)
    theta = (fine - nodes[k]) / (nodes[k + 1] - nodes[k])
    idx = np.array([_node_index(fine, t) for t in nodes])
    left = path.values[..., idx[k], :]
    right = path.values[..., idx[k + 1], :]
    poly = (1.0 - theta)[:, None] * left + theta[:, None] * right
    return np.max(np.abs(poly - path.values), axis=(-2, -1))


def dump_path_csv(path: BrownianPath | IncrementTable, dest: str | Path) -> None:
    """Flat dump with columns ``path, component, node, value``."""
    if isinstance(path, IncrementTable):
        arr = path.values
        arr = arr.reshape((1,) + arr.shape) if arr.ndim == 2 else arr
    else:
        arr = path.values
        arr = arr.reshape((1,) + arr.shape) if arr.ndim == 2 else arr
        arr = np.swapaxes(arr, -1, -2)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "component", "node", "value"])
        for p in range(arr.shape[0]):
            for i in range(arr.shape[1]):
                for k in range(arr.shape[2]):
                    w.writerow([p, i, k, repr(float(arr[p, i, k]))])


def load_increments_csv(src: str | Path, partition: Partition) -> IncrementTable:
    rows = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    p, i, k = (rows[:, c].astype(int) for c in range(3))
    out = np.zeros((p.max() + 1, i.max() + 1, k.max() + 1))
    out[p, i, k] = rows[:, 3]
    return IncrementTable(out[0] if out.shape[0] == 1 else out, partition)
