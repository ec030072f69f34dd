"""Independent reference values for zero drift, where both processes are
stochastic exponentials of jointly Gaussian exponents."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .coeffs import CoefficientSet, sigma_integral
from .paths import Partition
from .quadrature import gauss_hermite, gauss_legendre


def exponent_moments(cs: CoefficientSet, partition: Partition, i: int, t: float, nodes: int = 32):
    """Means and covariance of ``(G_pi, G)``, the exponents of ``log(X^pi_i / c_i)`` and ``log(X_i / c_i)``.

    ``G_pi`` is the polygonal stochastic integral over ``[0, t]`` minus half
    its variance, ``G`` the Ito one. The covariance of the two integrals is
    ``sum_k Sigma(overlap_k)^2 / h_k``, the variance of the polygonal one.
    """
    var_pi = 0.0
    for k, a, b in partition.cells_meeting(0.0, t):
        sig = sigma_integral(cs, i, a, b)
        var_pi += sig * sig / partition.cell_length(k)
    x, w = gauss_legendre(0.0, t, nodes)
    var_ito = float(np.dot(w, cs.sigma_at(x)[:, i] ** 2))
    mean = np.array([-0.5 * var_pi, -0.5 * var_ito])
    cov = np.array([[var_pi, var_pi], [var_pi, var_ito]])
    return mean, cov


def abs_diff_exp_gh(mean, cov, n: int = 200) -> float:
    """``E|e^X - e^Y|`` for a Gaussian pair by tensor Gauss-Hermite quadrature.

    The pair is parametrized through ``D = X - Y`` first, so the kink of the
    absolute value lies along a single coordinate line.
    """
    mx, my = mean
    vx, vy, cxy = float(cov[0][0]), float(cov[1][1]), float(cov[0][1])
    vd = max(vx + vy - 2 * cxy, 0.0)
    sd = np.sqrt(vd)
    cyd = cxy - vy
    a = cyd / sd if sd > 0 else 0.0
    b = np.sqrt(max(vy - a * a, 0.0))
    z, w = gauss_hermite(n)
    Z1, Z2 = np.meshgrid(z, z, indexing="ij")
    D = (mx - my) + sd * Z1
    Y = my + a * Z1 + b * Z2
    return float(np.einsum("i,j,ij->", w, w, np.exp(Y) * np.abs(np.expm1(D))))


def abs_diff_exp_closed(mean, cov) -> float:
    """The same expectation from normal CDFs: ``2 E[(e^X - e^Y) 1{X > Y}] - E[e^X - e^Y]``."""
    mx, my = mean
    vx, vy, cxy = cov[0][0], cov[1][1], cov[0][1]
    vd = vx + vy - 2 * cxy
    ex, ey = np.exp(mx + vx / 2), np.exp(my + vy / 2)
    if vd <= 0:
        return abs(ex - ey)
    sd = np.sqrt(vd)
    md = mx - my
    part_x = ex * norm.cdf((md + vx - cxy) / sd)
    part_y = ey * norm.cdf((md + cxy - vy) / sd)
    return float(2 * (part_x - part_y) - (ex - ey))


def l1_oracle(cs: CoefficientSet, partition: Partition, t: float, n: int = 200) -> float:
    """Expected ``sum_i |X^pi_i(t) - X_i(t)|`` for zero drift by Gauss-Hermite quadrature."""
    if not cs.zero_drift:
        raise ValueError("the Gaussian oracle needs zero drift")
    total = 0.0
    for i in range(cs.dim):
        mean, cov = exponent_moments(cs, partition, i, t)
        total += abs(cs.c[i]) * abs_diff_exp_gh(mean, cov, n)
    return total
