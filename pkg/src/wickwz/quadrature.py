"""Quadrature rules shared by the solvers and the verification harness."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    knots, weights = _leggauss(n)
    half = 0.5 * (b - a)
    return half * knots + 0.5 * (b + a), half * weights


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError(f"need at least one node, got {n}")
    knots, weights = np.polynomial.legendre.leggauss(n)
    knots.setflags(write=False)
    weights.setflags(write=False)
    return knots, weights


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite rule: integrates against the N(0, 1) density."""
    knots, weights = np.polynomial.hermite.hermgauss(n)
    return knots * np.sqrt(2.0), weights / np.sqrt(np.pi)


@lru_cache(maxsize=32)
def volterra_weights(steps: int, order: int, causal: bool = False) -> np.ndarray:
    """Weights for running integrals on a uniform grid of unit spacing.

    Row ``n`` holds ``w[n, m]`` with ``sum_m w[n, m] f(m) ~ int_0^n f``. Each
    unit subinterval is integrated exactly against the Lagrange interpolant
    through ``order + 1`` consecutive nodes, so the rule has local order
    ``order + 2`` on every row. Rows ``n < order`` therefore reach past ``n``
    to the nodes ``0..order``; callers must be able to supply those values.
    With ``causal=True`` row ``n`` uses only the nodes ``0..n`` instead, at
    reduced order for ``n < order``.
    Multiply by the grid spacing to get physical weights.
    """
    if steps < 1 or order < 1:
        raise ValueError("steps and order must be positive")
    w = np.zeros((steps + 1, steps + 1))
    basis_cache: dict[tuple[int, int], np.ndarray] = {}
    for n in range(1, steps + 1):
        width = min(order, n) if causal else min(order, steps)
        for j in range(n):
            start = min(max(j - (width - 1) // 2, 0), max(n, width) - width)
            key = (width, j - start)
            if key not in basis_cache:
                basis_cache[key] = _lagrange_cell_integrals(*key)
            w[n, start:start + width + 1] += basis_cache[key]
    w.setflags(write=False)
    return w


def _lagrange_cell_integrals(width: int, cell: int) -> np.ndarray:
    # integrals over [cell, cell+1] of the Lagrange basis on nodes 0..width
    nodes = np.arange(width + 1, dtype=float)
    out = np.empty(width + 1)
    for q in range(width + 1):
        others = np.delete(nodes, q)
        poly = np.polynomial.Polynomial.fromroots(others) / np.prod(nodes[q] - others)
        anti = poly.integ()
        out[q] = anti(cell + 1) - anti(cell)
    return out


def lagrange_weights(nodes: np.ndarray, x: float, npts: int = 4) -> tuple[int, np.ndarray]:
    """Local Lagrange interpolation weights at ``x`` from ``npts`` nearest nodes.

    ``nodes`` must be sorted ascending. Returns the first stencil index and the
    weights. An exact hit on a node returns a one-point stencil.
    """
    n = len(nodes)
    k = int(np.searchsorted(nodes, x))
    scale = max(abs(nodes[-1] - nodes[0]), 1.0)
    for cand in (k - 1, k):
        if 0 <= cand < n and abs(nodes[cand] - x) <= 1e-13 * scale:
            return cand, np.ones(1)
    npts = min(npts, n)
    start = min(max(k - npts // 2, 0), n - npts)
    stencil = nodes[start:start + npts]
    weights = np.ones(npts)
    for a in range(npts):
        for b in range(npts):
            if a != b:
                weights[a] *= (x - stencil[b]) / (stencil[a] - stencil[b])
    return start, weights
