"""Closed-form constructions used in the preservation/annihilation analysis.

Contains the maximum-interaction root ``s*``, the absorbing set ``X`` whose
entry forces divergence of ``A``, the nullcline curves ``G`` and ``H``, the
``D0 / D+ / D-`` split of state space and the slow-manifold relation for ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .system import ReducedParams, ep_coordinates, rhs_symmetric

__all__ = [
    "sstar_root",
    "sstar_asymptotic",
    "sstar_function",
    "InvariantSetX",
    "invariant_set_X",
    "nullcline_G",
    "nullcline_H",
    "interaction_side",
    "center_manifold_A",
]


def sstar_function(s, v_star: float, p: ReducedParams):
    m = abs(p.M1)
    return 16 * p.alpha * v_star**2 / p.M2 - s * np.log((2 * v_star + m * s) / (v_star + m * s))


def sstar_asymptotic(v_star: float, p: ReducedParams) -> float:
    return 16 * p.alpha * v_star**2 / (p.M2 * math.log(2.0))


def sstar_root(v_star: float, p: ReducedParams, xtol: float = 0.0) -> float:
    """Unique zero of the decreasing function ``f(s)`` bounding the peak interaction.

    ``f`` tends to ``16 alpha v*^2 / M2 - v*/|M1|`` as ``s`` grows, so a root
    exists only for ``16 alpha |M1| v* < M2``; otherwise ``ValueError``.
    """
    if v_star <= 0:
        raise ValueError("v* must be positive")
    m = abs(p.M1)
    c = 16 * p.alpha * v_star**2 / p.M2
    if m > 0 and c >= v_star / m:
        raise ValueError(
            f"no root: 16*alpha*|M1|*v*/M2 = {16 * p.alpha * m * v_star / p.M2:.4g} >= 1"
        )
    hi = sstar_asymptotic(v_star, p)
    while sstar_function(hi, v_star, p) > 0:
        hi *= 2.0
    return brentq(sstar_function, 0.0, hi, args=(v_star, p), xtol=xtol or 1e-300,
                  rtol=4 * np.finfo(float).eps, maxiter=500)


def nullcline_G(v, p: ReducedParams):
    """``A`` on which ``v' = 0`` when ``s = 0`` (NaN where undefined)."""
    r = (p.mu1 + p.p11 * np.asarray(v, dtype=float) ** 2) / p.p12
    return np.sqrt(np.where(r >= 0, r, np.nan))


def nullcline_H(v, p: ReducedParams):
    """``A`` on which ``A' = 0`` when ``s = 0`` (NaN where undefined)."""
    r = (p.mu2 + p.p21 * np.asarray(v, dtype=float) ** 2) / p.p22
    return np.sqrt(np.where(r >= 0, r, np.nan))


def interaction_side(v, s, p: ReducedParams):
    """Sign of ``v + M1 s``: +1 on D+, 0 on D0, -1 on D- (``s`` must be >= 0)."""
    return np.sign(np.asarray(v) + p.M1 * np.asarray(s))


@dataclass
class InvariantSetX:
    """Piecewise-linear absorbing region ``A >= F(v), v <= 0, s >= 0``."""

    p: ReducedParams
    a_inf: float
    v_hat: float
    A_hat: float
    mu2_star: float
    branch: str  # "ep3" or "X"
    v_ep3: float
    A_ep3: float

    def F(self, v):
        v = np.asarray(v, dtype=float)
        return np.where(v <= -self.v_hat, -self.a_inf * (v + self.v_hat) + self.A_hat, self.A_hat)

    def contains(self, v, A, s) -> np.ndarray:
        v, A, s = (np.asarray(z, dtype=float) for z in (v, A, s))
        return (A >= self.F(v)) & (v <= 0) & (s >= 0)

    def boundary_normal_flux(self, v, A, s, piece: str) -> np.ndarray:
        """Inward component of the vector field on one boundary piece.

        ``left``: normal ``(a_inf, 1, 0)``; ``right`` (v = 0): ``-v'``;
        ``bottom`` (A = A_hat): ``A'``.  Positive means pointing into X.
        """
        f = np.array([rhs_symmetric((a, b, c), self.p) for a, b, c in zip(np.atleast_1d(v), np.atleast_1d(A), np.atleast_1d(s))])
        if piece == "left":
            return self.a_inf * f[:, 0] + f[:, 1]
        if piece == "right":
            return -f[:, 0]
        if piece == "bottom":
            return f[:, 1]
        raise ValueError(piece)


def _mu2_star(p: ReducedParams, a: float) -> float:
    # solves mu2 = c * v_ep3(mu2)^2 with v_ep3^2 = (-p22 mu1 + p12 mu2) / det
    c = p.p21 * (p.p21 - p.p22 * a * a) / (p.p22 * a * a)
    return -c * p.p22 * p.mu1 / (p.det - c * p.p12)


def invariant_set_X(p: ReducedParams, a_inf: float | None = None) -> InvariantSetX:
    """Build the absorbing set for ``mu1 < 0`` and ``mu2`` between T2 and above.

    ``a_inf`` defaults to ``min(sqrt(p11/p12), M3/M2)`` and must lie in
    ``(sqrt(p21/p22), sqrt(p11/p12)]``.
    """
    lo, hi = math.sqrt(p.p21 / p.p22), math.sqrt(p.p11 / p.p12)
    a = min(hi, p.M3 / p.M2) if a_inf is None else float(a_inf)
    if not lo < a <= hi:
        raise ValueError(f"a_inf={a:g} outside ({lo:g}, {hi:g}]")
    if p.mu1 >= 0:
        raise ValueError("the absorbing set is built for mu1 < 0")
    ep3 = ep_coordinates(p)["EP3-"]
    if ep3 is None:
        raise ValueError("EP3 does not exist at these parameters (mu2 below T2)")
    v3, A3 = -ep3[0], ep3[1]
    m2s = _mu2_star(p, a)
    if p.mu2 > m2s:
        return InvariantSetX(p, a, v3, A3, m2s, "ep3", v3, A3)
    vX = (p.p22 * (a * a * v3 * v3 - 2 * a * v3 * A3 + A3 * A3) - p.mu2) / ((a * a * p.p22 - p.p21) * v3)
    AX = math.sqrt((p.mu2 + p.p21 * vX * vX) / p.p22)
    return InvariantSetX(p, a, vX, AX, m2s, "X", v3, A3)


def center_manifold_A(s, v, p: ReducedParams, variant: str = "appendix"):
    """Slow-manifold value of ``A`` near the drift line for ``mu2 > 0``.

    ``variant="appendix"`` evaluates
    ``-2 alpha M2 M3 s^2 / mu2^3 + M3 s / mu2 - 2 alpha M3 v s / mu2^2``;
    ``variant="main"`` the alternative
    ``-2 M1 M2 alpha s^2 / mu2^3 + 2 M2 alpha s v / mu2^2 - M2 s / mu2``.
    """
    if p.mu2 <= 0:
        raise ValueError("the slow manifold needs mu2 > 0")
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    m2, al = p.mu2, p.alpha
    if variant == "appendix":
        return -2 * al * p.M2 * p.M3 / m2**3 * s**2 + p.M3 / m2 * s - 2 * al * p.M3 / m2**2 * v * s
    if variant == "main":
        return -2 * p.M1 * p.M2 * al / m2**3 * s**2 + 2 * p.M2 * al / m2**2 * s * v - p.M2 / m2 * s
    raise ValueError(f"unknown variant {variant!r}")
