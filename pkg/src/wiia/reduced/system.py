"""Principal-part pulse interaction ODEs near a drift-Hopf point.

State conventions
-----------------
symmetric : ``(v, A, s)`` with ``s = exp(-alpha * h)``
two-pulse : ``(v1, A1, v2, A2, s)``
single    : ``(v, A)`` (the ``s = 0`` restriction)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

__all__ = [
    "ReducedParams",
    "Equilibrium",
    "UNIT_COEFFS",
    "rhs_symmetric",
    "rhs_two_pulse",
    "rhs_single",
    "jacobian_symmetric",
    "jacobian_single",
    "ep_coordinates",
    "equilibria",
    "region_id",
    "stability",
    "REGIONS",
]

REGIONS = ("i", "ii", "iii", "iv", "v", "vi")

PDE_MEANING = {
    "EP0": "SP",
    "EP1": "SB",
    "EP2+": "TP",
    "EP2-": "TP",
    "EP3+": "TB",
    "EP3-": "TB",
}


@dataclass(frozen=True)
class ReducedParams:
    """Unfolding parameters and coefficients of the reduced system.

    ``alpha`` and ``M1`` default to 1; only ``alpha > 0`` and ``|M1|`` enter
    the estimates used here.
    """

    mu1: float = 0.0
    mu2: float = 0.0
    p11: float = 1.0
    p12: float = 1.0
    p21: float = 0.05
    p22: float = 0.1
    M1: float = 1.0
    M2: float = 1.0
    M3: float = 1.0
    alpha: float = 1.0

    def with_mu(self, mu1: float, mu2: float) -> "ReducedParams":
        return replace(self, mu1=float(mu1), mu2=float(mu2))

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def det(self) -> float:
        """``p11 p22 - p12 p21``; positive under the criticality condition."""
        return self.p11 * self.p22 - self.p12 * self.p21

    @property
    def mu2_t2(self) -> float:
        """Value of mu2 on the line T2 at the current mu1."""
        return self.p21 / self.p11 * self.mu1

    def violations(self) -> list[str]:
        """Human-readable list of violated structural conditions.

        Tags follow the usual numbering: S4 (repulsive interaction and positive
        Hopf forcing), S5 (super/subcritical drift/Hopf), S6 (strong Hopf forcing).
        """
        out = []
        ps = (self.p11, self.p12, self.p21, self.p22)
        if not all(x > 0 for x in ps):
            out.append("S5: p11, p12, p21, p22 must all be positive")
        elif self.p12 * self.p21 >= self.p11 * self.p22:
            out.append("S5: p12*p21/(p11*p22) must be < 1")
        if not (self.M2 > 0 and self.M3 > 0):
            out.append("S4: M2 and M3 must be positive")
        if not self.alpha > 0:
            out.append("alpha must be positive")
        if not out:
            bound = max(
                math.sqrt(3 * self.p21 / self.p22),
                2 * self.p21 * math.sqrt(self.p11 * self.p12) / self.det,
            )
            if not self.M3 / self.M2 > bound:
                out.append(f"S6: M3/M2 = {self.M3 / self.M2:.6g} must exceed {bound:.6g}")
        return out

    def validate(self) -> "ReducedParams":
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))
        return self


UNIT_COEFFS = ReducedParams(p11=1.0, p12=1.0, p21=0.05, p22=0.1, M1=1.0, M2=1.0, M3=1.0, alpha=1.0)


def rhs_symmetric(x, p: ReducedParams) -> np.ndarray:
    """Vector field of the symmetric head-on collision system."""
    v, A, s = x
    return np.array(
        [
            (-p.mu1 - p.p11 * v * v + p.p12 * A * A) * v - p.M2 * s,
            (-p.mu2 - p.p21 * v * v + p.p22 * A * A) * A + p.M3 * s,
            2.0 * p.alpha * (v + p.M1 * s) * s,
        ]
    )


def rhs_two_pulse(x, p: ReducedParams) -> np.ndarray:
    """Vector field of the two-pulse system in ``(v1, A1, v2, A2, s)``."""
    v1, A1, v2, A2, s = x
    return np.array(
        [
            (-p.mu1 - p.p11 * v1 * v1 + p.p12 * A1 * A1) * v1 - p.M2 * s,
            (-p.mu2 - p.p21 * v1 * v1 + p.p22 * A1 * A1) * A1 + p.M3 * s,
            (-p.mu1 - p.p11 * v2 * v2 + p.p12 * A2 * A2) * v2 + p.M2 * s,
            (-p.mu2 - p.p21 * v2 * v2 + p.p22 * A2 * A2) * A2 + p.M3 * s,
            -p.alpha * s * (v2 - v1 - 2.0 * p.M1 * s),
        ]
    )


def rhs_single(x, p: ReducedParams) -> np.ndarray:
    v, A = x
    return np.array(
        [
            (-p.mu1 - p.p11 * v * v + p.p12 * A * A) * v,
            (-p.mu2 - p.p21 * v * v + p.p22 * A * A) * A,
        ]
    )


def jacobian_symmetric(x, p: ReducedParams) -> np.ndarray:
    v, A, s = x
    return np.array(
        [
            [-p.mu1 - 3 * p.p11 * v * v + p.p12 * A * A, 2 * p.p12 * A * v, -p.M2],
            [-2 * p.p21 * v * A, -p.mu2 - p.p21 * v * v + 3 * p.p22 * A * A, p.M3],
            [2 * p.alpha * s, 0.0, 2 * p.alpha * (v + 2 * p.M1 * s)],
        ]
    )


def jacobian_single(x, p: ReducedParams) -> np.ndarray:
    v, A = x
    return jacobian_symmetric((v, A, 0.0), p)[:2, :2]


@dataclass
class Equilibrium:
    label: str
    coords: tuple[float, float, float]
    exists: bool
    eigenvalues: np.ndarray = field(default_factory=lambda: np.array([]))
    pde: str = ""

    @property
    def vA(self) -> np.ndarray:
        return np.array(self.coords[:2])


def ep_coordinates(p: ReducedParams) -> dict[str, tuple[float, float] | None]:
    """Closed-form ``(v, A)`` of the six equilibria, ``None`` where absent."""
    out: dict[str, tuple[float, float] | None] = {"EP0": (0.0, 0.0)}
    out["EP1"] = (0.0, math.sqrt(p.mu2 / p.p22)) if p.mu2 >= 0 else None
    if p.mu1 <= 0:
        v2 = math.sqrt(-p.mu1 / p.p11)
        out["EP2+"], out["EP2-"] = (v2, 0.0), (-v2, 0.0)
    else:
        out["EP2+"] = out["EP2-"] = None
    rv = (-p.p22 * p.mu1 + p.p12 * p.mu2) / p.det
    ra = (-p.p21 * p.mu1 + p.p11 * p.mu2) / p.det
    if rv >= 0 and ra >= 0:
        v3, a3 = math.sqrt(rv), math.sqrt(ra)
        out["EP3+"], out["EP3-"] = (v3, a3), (-v3, a3)
    else:
        out["EP3+"] = out["EP3-"] = None
    return out


def region_id(mu1: float, mu2: float, p: ReducedParams) -> str:
    """Sector of the unfolding plane cut by mu1=0, mu2=0, T1 and T2.

    Counterclockwise from the positive mu1 axis: (i) up to T1, (ii) up to the
    positive mu2 axis, (iii) up to the negative mu1 axis, (iv) up to T2, (v) up
    to the negative mu2 axis, (vi) back to the positive mu1 axis.  A point on a
    boundary ray belongs to the region that starts there (the counterclockwise
    next one).
    """
    if mu1 == 0 and mu2 == 0:
        raise ValueError("region_id is undefined at the origin")
    t1 = p.p12 / p.p22 * mu2
    t2 = p.p21 / p.p11 * mu1
    if mu2 >= 0 and mu1 > 0:
        return "i" if (mu2 == 0 or mu1 > t1) else "ii"
    if mu1 <= 0 and mu2 > 0:
        return "iii"
    if mu1 < 0:
        return "iv" if mu2 > t2 else "v"
    return "vi"


def _closed_form_eigs(label: str, vA, p: ReducedParams) -> np.ndarray | None:
    v, A = vA
    if label == "EP3-" and A > 0 and v < 0:
        vv, aa = v * v, A * A
        tr = p.p22 * aa - p.p11 * vv
        root = math.sqrt(tr * tr + 4 * p.det * vv * aa)
        return np.array([tr + root, tr - root, 2 * p.alpha * v], dtype=complex)
    if label in ("EP2+", "EP2-"):
        return np.array(
            [-2 * p.p11 * v * v, -p.mu2 - p.p21 * v * v, 2 * p.alpha * v], dtype=complex
        )
    return None


def stability(e: Equilibrium, p: ReducedParams, restricted: bool = False) -> np.ndarray:
    """Eigenvalues at an equilibrium of the symmetric system.

    With ``restricted=True`` the 2x2 eigenvalues of the ``s = 0`` system are
    returned instead.  Closed forms are used for EP2 and EP3- and checked by the
    test-suite against the numerical Jacobian.
    """
    if not e.exists:
        raise ValueError(f"{e.label} does not exist at these parameters")
    if restricted:
        return np.linalg.eigvals(jacobian_single(e.vA, p))
    closed = _closed_form_eigs(e.label, e.vA, p)
    if closed is not None:
        return closed
    return np.linalg.eigvals(jacobian_symmetric(e.coords, p))


def unstable_eigenvector_ep2(p: ReducedParams) -> np.ndarray:
    """Eigenvector of EP2+ for the eigenvalue ``2 alpha v_ep2`` scaled so ``s = 1``."""
    if p.mu1 >= 0:
        raise ValueError("EP2+ requires mu1 < 0")
    v = math.sqrt(-p.mu1 / p.p11)
    lam = 2 * p.alpha * v
    return np.array(
        [
            -p.M2 / (2 * p.p11 * v * v + lam),
            p.M3 / (lam + p.mu2 + p.p21 * v * v),
            1.0,
        ]
    )


def equilibria(p: ReducedParams) -> list[Equilibrium]:
    """All six equilibria on ``s = 0`` with existence flags and 3D eigenvalues."""
    coords = ep_coordinates(p)
    out = []
    for label in ("EP0", "EP1", "EP2+", "EP2-", "EP3+", "EP3-"):
        vA = coords[label]
        if vA is None:
            out.append(Equilibrium(label, (math.nan, math.nan, 0.0), False, pde=PDE_MEANING[label]))
            continue
        e = Equilibrium(label, (vA[0], vA[1], 0.0), True, pde=PDE_MEANING[label])
        e.eigenvalues = stability(e, p)
        out.append(e)
    return out


def is_stable_restricted(label: str, p: ReducedParams) -> bool:
    """Linear stability of an equilibrium of the ``s = 0`` system (Table-1 sense)."""
    vA = ep_coordinates(p)[label]
    if vA is None:
        return False
    return bool(np.all(np.linalg.eigvals(jacobian_single(vA, p)).real < 0))
