"""Trajectories, outcome classification and the critical-mu2 search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .system import (
    ReducedParams,
    ep_coordinates,
    is_stable_restricted,
    region_id,
    rhs_symmetric,
)

log = logging.getLogger(__name__)

EPS_CONV = 1e-6
S_GONE = 1e-30
A_CUTOFF = 1.0
RTOL = 1e-10

OUTCOMES = ("standing", "preservation", "annihilation", "background")


class UndecidedError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Output of :func:`integrate`.

    ``event`` is one of ``divergence``, ``preservation``, ``standing`` or
    ``horizon``.  ``t_collision`` is the first time the orbit meets
    ``v + M1 s = 0`` (None if never) and ``s_max`` is the largest ``s`` seen.
    """

    t: np.ndarray
    y: np.ndarray
    event: str
    t_end: float
    t_collision: float | None
    s_at_collision: float | None
    s_max: float
    t_s_max: float
    sol: object = field(default=None, repr=False)

    @property
    def h(self) -> np.ndarray:
        return -np.log(np.maximum(self.y[2], 1e-300))


def appendix_a_initial(p: ReducedParams) -> np.ndarray:
    """Initial data next to EP2+ when it exists, next to the origin otherwise."""
    if p.mu1 < 0:
        return np.array([math.sqrt(-p.mu1 / p.p11) + 0.001, 0.001, math.exp(-50.0)])
    return np.array([0.001, 0.001, math.exp(-50.0)])


def integrate(x0, p: ReducedParams, horizon: float, eps_conv: float = EPS_CONV,
              rtol: float = RTOL, dense: bool = False) -> Trajectory:
    """Integrate the symmetric system with outcome events.

    Uses the embedded 8(5,3) Dormand-Prince pair.  Terminal events: ``|A|``
    reaching 1, convergence to EP2- with ``s < 1e-30`` (only when EP2- exists)
    and convergence to the origin (only when the origin is stable on ``s = 0``).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    x0 = np.asarray(x0, dtype=float)
    coords = ep_coordinates(p)
    ep2m = coords["EP2-"]
    standing_ok = p.mu1 > 0 and p.mu2 > 0

    def f(t, x):
        return rhs_symmetric(x, p)

    def ev_div(t, x):
        return abs(x[1]) - A_CUTOFF

    ev_div.terminal = True

    def ev_pres(t, x):
        if ep2m is None:
            return 1.0
        d = math.hypot(x[0] - ep2m[0], x[1] - ep2m[1])
        return max(d - eps_conv, x[2] - S_GONE)

    ev_pres.terminal = True
    ev_pres.direction = -1

    def ev_stand(t, x):
        if not standing_ok:
            return 1.0
        return math.hypot(x[0], x[1]) - eps_conv

    ev_stand.terminal = True
    ev_stand.direction = -1

    def ev_d0(t, x):
        return x[0] + p.M1 * x[2]

    ev_d0.direction = -1

    sol = solve_ivp(
        f, (0.0, horizon), x0, method="DOP853", rtol=rtol, atol=1e-300,
        events=[ev_div, ev_pres, ev_stand, ev_d0], dense_output=True,
    )
    if sol.status == 1:
        if len(sol.t_events[0]):
            event = "divergence"
        elif len(sol.t_events[1]):
            event = "preservation"
        else:
            event = "standing"
    elif sol.status == -1:
        # step-size underflow only happens on blow-up
        event = "divergence"
    else:
        event = "horizon"
    t_col = float(sol.t_events[3][0]) if len(sol.t_events[3]) else None
    s_col = float(sol.y_events[3][0][2]) if t_col is not None else None
    k = int(np.argmax(sol.y[2]))
    s_max, t_s_max = float(sol.y[2, k]), float(sol.t[k])
    # the located D0 crossing is where s peaks; sampled points may straddle it
    if s_col is not None and s_col > s_max:
        s_max, t_s_max = s_col, t_col
    return Trajectory(
        t=sol.t, y=sol.y, event=event, t_end=float(sol.t[-1]), t_collision=t_col,
        s_at_collision=s_col, s_max=s_max, t_s_max=t_s_max,
        sol=sol.sol if dense else None,
    )


def default_horizon(p: ReducedParams) -> float:
    """Generous time horizon covering approach, collision and final relaxation."""
    rates = [abs(p.mu1), abs(p.mu2), abs(p.mu2 - p.mu2_t2)]
    slow = min(r for r in rates if r > 0) if any(r > 0 for r in rates) else 1e-6
    v0 = math.sqrt(max(-p.mu1, 0.0) / p.p11) + 0.001
    return 60.0 / (2 * p.alpha * v0) + 40.0 / slow


def has_stable_state(p: ReducedParams) -> bool:
    """True when EP0 or EP2- is a stable state of the s=0 system."""
    return is_stable_restricted("EP0", p) or is_stable_restricted("EP2-", p)


def _label(traj: Trajectory, p: ReducedParams) -> str | None:
    if traj.event == "standing":
        return "standing"
    if traj.event == "preservation":
        return "preservation"
    if traj.event == "divergence":
        return "annihilation" if has_stable_state(p) else "background"
    return None


def classify_ode(mu1: float, mu2: float, p: ReducedParams, horizon: float | None = None,
                 with_trajectory: bool = False):
    """Outcome of the symmetric collision protocol at ``(mu1, mu2)``.

    The orbit starts from the Appendix-A initial data.  Divergence of ``A`` is
    annihilation when a stable single-pulse state (EP0 or EP2-) exists and
    background otherwise.  A run that reaches its horizon is retried once with
    twice the horizon before :class:`UndecidedError` is raised.
    """
    q = p.with_mu(mu1, mu2)
    T = default_horizon(q) if horizon is None else horizon
    for attempt in range(2):
        traj = integrate(appendix_a_initial(q), q, T)
        label = _label(traj, q)
        if label is not None:
            return (label, traj) if with_trajectory else label
        T *= 2
    raise UndecidedError(f"no outcome at mu=({mu1:g}, {mu2:g}) within horizon {T / 2:g}")


@dataclass
class OdePhaseDiagram:
    mu1: np.ndarray
    mu2: np.ndarray
    outcome: list[str]
    region: list[str]
    params: ReducedParams

    def rows(self):
        for a, b, o, r in zip(self.mu1, self.mu2, self.outcome, self.region):
            yield {"mu1": a, "mu2": b, "outcome": o, "region": r}


def _classify_cell(mu1, mu2, p):
    try:
        return classify_ode(mu1, mu2, p)
    except UndecidedError:
        return "undecided"


def sweep_ode_phase_diagram(mu1s, mu2s, p: ReducedParams, cell_done=None) -> OdePhaseDiagram:
    """Classify every ``(mu1[k], mu2[k])`` pair.

    ``cell_done(k, outcome)`` is called after each cell, which lets callers
    checkpoint.  Cells are independent.
    """
    mu1s = np.asarray(mu1s, dtype=float)
    mu2s = np.asarray(mu2s, dtype=float)
    if np.any(np.hypot(mu1s, mu2s) > 0.01 + 1e-15):
        log.warning("cells outside |mu| <= 0.01 lie beyond the weak-interaction regime")
    outcomes, regions = [], []
    for k, (a, b) in enumerate(zip(mu1s, mu2s)):
        o = _classify_cell(a, b, p)
        outcomes.append(o)
        regions.append(region_id(a, b, p) if (a or b) else "origin")
        if cell_done is not None:
            cell_done(k, o)
    return OdePhaseDiagram(mu1s, mu2s, outcomes, regions, p)


def polar_ring(radius: float, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``n`` cell centres on a circle, starting half a cell above the mu1 axis."""
    theta = (np.arange(n) + 0.5) * 2 * np.pi / n
    return theta, radius * np.cos(theta), radius * np.sin(theta)


def ring_sectors(outcomes) -> list[tuple[str, int]]:
    """Collapse a cyclic outcome sequence into ``(label, length)`` runs.

    The run containing index 0 is merged with the wrap-around run.
    """
    seq = list(outcomes)
    runs: list[list] = []
    for o in seq:
        if runs and runs[-1][0] == o:
            runs[-1][1] += 1
        else:
            runs.append([o, 1])
    if len(runs) > 1 and runs[0][0] == runs[-1][0]:
        runs[0][1] += runs.pop()[1]
    return [(a, b) for a, b in runs]


@dataclass
class CriticalResult:
    mu2c: float
    closest_approach: float
    ep3_norm: float
    bracket: tuple[float, float]
    history: list[tuple[float, float, str]]


def closest_approach_to_ep3(traj: Trajectory, p: ReducedParams) -> float:
    """Minimum distance between the orbit and EP3- in ``(v, A, s)``."""
    ep = ep_coordinates(p)["EP3-"]
    if ep is None:
        return math.inf
    target = np.array([ep[0], ep[1], 0.0])
    d = np.linalg.norm(traj.y - target[:, None], axis=0)
    k = int(np.argmin(d))
    best = float(d[k])
    if traj.sol is not None and 0 < k < len(traj.t) - 1:
        res = minimize_scalar(
            lambda t: float(np.linalg.norm(traj.sol(t) - target)),
            bounds=(traj.t[k - 1], traj.t[k + 1]), method="bounded",
            options={"xatol": 1e-9 * max(1.0, traj.t[k])},
        )
        best = min(best, float(res.fun))
    return best


def find_mu2_critical(mu1_0: float, p: ReducedParams, bracket=None, tol: float = 1e-10,
                      max_iter: int = 200) -> CriticalResult:
    """Bisect on mu2 for the switch from annihilation to preservation.

    The default bracket is ``(mu2 on T2, 0.001)``.  The bracket must straddle
    the switch.  At the end, the orbit on the preservation side of the final
    bracket is measured against EP3-.
    """
    if mu1_0 >= 0:
        raise ValueError("mu1_0 must be negative")
    lo, hi = bracket if bracket is not None else (p.p21 / p.p11 * mu1_0, 1e-3)
    o_lo = classify_ode(mu1_0, lo, p)
    o_hi = classify_ode(mu1_0, hi, p)
    history = [(lo, 0.0, o_lo), (hi, 0.0, o_hi)]
    # on T2 itself EP2- is only marginally stable, so divergence there is
    # labelled background; both labels mean A blew up
    diverged = {"annihilation", "background"}
    if o_lo == o_hi or (o_lo in diverged and o_hi in diverged):
        raise ValueError(f"bracket invalid: both ends give {o_lo}/{o_hi}")
    if {o_lo, o_hi} - diverged != {"preservation"}:
        raise ValueError(f"bracket ends give {o_lo} / {o_hi}")
    flip = o_lo == "preservation"
    for _ in range(max_iter):
        if hi - lo < tol:
            break
        mid = 0.5 * (lo + hi)
        o = classify_ode(mu1_0, mid, p)
        history.append((mid, hi - lo, o))
        if (o in diverged) != flip:
            lo = mid
        else:
            hi = mid
    pres_end = lo if flip else hi
    q = p.with_mu(mu1_0, pres_end)
    traj = integrate(appendix_a_initial(q), q, default_horizon(q), dense=True)
    d = closest_approach_to_ep3(traj, q)
    ep = ep_coordinates(q)["EP3-"]
    norm = math.hypot(*ep) if ep else math.nan
    return CriticalResult(0.5 * (lo + hi), d, norm, (lo, hi), history)
