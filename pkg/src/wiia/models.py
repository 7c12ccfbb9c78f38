"""Kinetics, parameter sets and uniform states of the two three-component models.

``fhn3`` is the FitzHugh-Nagumo type gas-discharge system

    u_t = D_u u_xx + k2 u - u^3 - k3 v - k4 w + k1
    tau v_t = D_v v_xx + u - gamma v
    theta w_t = D_w w_xx + u - w

and ``gs3`` the activator-substrate-inhibitor extension of Gray-Scott

    u_t = D_u Lap u - u v^2 / (1 + f2 w) + f0 (1 - u)
    v_t = D_v Lap v + u v^2 / (1 + f2 w) - (f0 + f1) v
    tau w_t = D_w Lap w + f3 (v - w)

Kinetics are returned unscaled; the time constants live in ``ModelSpec.tau``
and are applied by the stepper and by the linearisation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ModelSpec",
    "Fhn3Params",
    "Gs3Params",
    "UniformState",
    "fhn3_reaction",
    "fhn3_jacobian",
    "gs3_reaction",
    "gs3_jacobian",
    "homogeneous_equilibria",
    "linear_model",
    "EPS_DEN",
]

EPS_DEN = 1e-12


@dataclass(frozen=True)
class Fhn3Params:
    """Parameters of the three-component FHN system.

    Defaults are the standard setting used for the drift-Hopf study, with the
    two bifurcation parameters placed near the codimension-two point.
    """

    k1: float = -3.0
    k2: float = 2.0
    k3: float = 2.0
    k4: float = 2.965
    gamma: float = 8.0
    tau: float = 1220.0
    theta: float = 10.0
    D_u: float = 5.0e-6
    D_v: float = 6.5e-4
    D_w: float = 7.5e-4

    def __post_init__(self):
        for name in ("gamma", "tau", "theta", "D_u", "D_v", "D_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kw) -> "Fhn3Params":
        return replace(self, **kw)

    def model(self) -> "ModelSpec":
        return ModelSpec(
            name="fhn3",
            D=(self.D_u, self.D_v, self.D_w),
            tau=(1.0, self.tau, self.theta),
            params=self,
            kinetics=lambda U: np.stack(fhn3_reaction(U[0], U[1], U[2], self)),
            jacobian=lambda U: fhn3_jacobian(U[0], U[1], U[2], self),
        )


@dataclass(frozen=True)
class Gs3Params:
    """Parameters of the three-component Gray-Scott type system."""

    f0: float = 0.05
    f1: float = 0.05
    f2: float = 0.5
    f3: float = 0.2
    tau: float = 1.0
    D_u: float = 2.0e-4
    D_v: float = 1.0e-4
    D_w: float = 5.0e-4

    def __post_init__(self):
        for name in ("f0", "f1", "f2", "f3", "tau", "D_u", "D_v", "D_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kw) -> "Gs3Params":
        return replace(self, **kw)

    def model(self) -> "ModelSpec":
        return ModelSpec(
            name="gs3",
            D=(self.D_u, self.D_v, self.D_w),
            tau=(1.0, 1.0, self.tau),
            params=self,
            kinetics=lambda U: np.stack(gs3_reaction(U[0], U[1], U[2], self)),
            jacobian=lambda U: gs3_jacobian(U[0], U[1], U[2], self),
        )


@dataclass(frozen=True)
class ModelSpec:
    """Diffusivities, time constants and kinetics of an N-component system.

    ``kinetics(U)`` maps an array of shape ``(N, ...)`` to the raw rates and
    ``jacobian(U)`` to an array of shape ``(N, N, ...)``.
    """

    name: str
    D: tuple[float, ...]
    tau: tuple[float, ...]
    params: object = None
    kinetics: Callable = field(default=None, repr=False, compare=False)
    jacobian: Callable = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.D) != len(self.tau):
            raise ValueError("D and tau must have the same length")
        if any(d < 0 for d in self.D) or any(t <= 0 for t in self.tau):
            raise ValueError("diffusivities must be >= 0 and time constants positive")

    @property
    def n_components(self) -> int:
        return len(self.D)

    def params_dict(self) -> dict:
        return asdict(self.params) if self.params is not None else {}


def fhn3_reaction(u, v, w, p: Fhn3Params):
    return (
        p.k2 * u - u * u * u - p.k3 * v - p.k4 * w + p.k1,
        u - p.gamma * v,
        u - w,
    )


def fhn3_jacobian(u, v, w, p: Fhn3Params) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    one = np.ones_like(u)
    zero = np.zeros_like(u)
    return np.array(
        [
            [p.k2 - 3 * u * u, -p.k3 * one, -p.k4 * one],
            [one, -p.gamma * one, zero],
            [one, zero, -one],
        ]
    )


def _den(w, p: Gs3Params):
    d = 1.0 + p.f2 * np.asarray(w, dtype=float)
    if np.any(d <= EPS_DEN):
        raise ValueError("1 + f2*w is not positive: unphysical inhibitor level")
    return d


def gs3_reaction(u, v, w, p: Gs3Params):
    x = u * v * v / _den(w, p)
    return (-x + p.f0 * (1.0 - u), x - (p.f0 + p.f1) * v, p.f3 * (v - w))


def gs3_jacobian(u, v, w, p: Gs3Params) -> np.ndarray:
    u, v, w = (np.asarray(z, dtype=float) for z in (u, v, w))
    d = _den(w, p)
    xu = v * v / d
    xv = 2 * u * v / d
    xw = -p.f2 * u * v * v / d**2
    zero = np.zeros_like(u)
    return np.array(
        [
            [-xu - p.f0, -xv, -xw],
            [xu, xv - (p.f0 + p.f1), xw],
            [zero, p.f3 + zero, -p.f3 + zero],
        ]
    )


def linear_model(rates, D, tau=None, name="linear") -> ModelSpec:
    """Diagonal linear kinetics ``F_j(u) = rates[j] * u_j`` (useful for checks)."""
    rates = np.asarray(rates, dtype=float)
    tau = tuple(tau) if tau is not None else (1.0,) * len(rates)
    shape = (-1,)

    def kin(U):
        return rates.reshape(shape + (1,) * (U.ndim - 1)) * U

    def jac(U):
        J = np.zeros((len(rates), len(rates)) + U.shape[1:])
        for j, r in enumerate(rates):
            J[j, j] = r
        return J

    return ModelSpec(name, tuple(float(d) for d in D), tau, None, kin, jac)


@dataclass
class UniformState:
    state: np.ndarray
    stable: bool
    eigenvalues: np.ndarray
    informational: bool = False


def _classify(m: ModelSpec, state) -> UniformState:
    J = np.asarray(m.jacobian(np.asarray(state, dtype=float)), dtype=float)
    J = J / np.asarray(m.tau)[:, None]
    ev = np.linalg.eigvals(J)
    return UniformState(np.asarray(state, dtype=float), bool(np.all(ev.real < 0)), ev)


def _fhn3_uniform(p: Fhn3Params) -> list[np.ndarray]:
    lin = p.k2 - p.k3 / p.gamma - p.k4

    def g(u):
        return lin * u - u**3 + p.k1

    def dg(u):
        return lin - 3 * u * u

    xs = np.linspace(-5.0, 5.0, 2001)
    gs = g(xs)
    roots = []
    for a, b, ga, gb in zip(xs[:-1], xs[1:], gs[:-1], gs[1:]):
        if ga == 0.0:
            roots.append(a)
        elif ga * gb < 0:
            r = brentq(g, a, b, xtol=1e-15)
            for _ in range(3):  # Newton polish
                d = dg(r)
                if d == 0:
                    break
                r -= g(r) / d
            roots.append(r)
    if gs[-1] == 0.0:
        roots.append(xs[-1])
    return [np.array([u, u / p.gamma, u]) for u in roots]


def _gs3_uniform(p: Gs3Params) -> list[np.ndarray]:
    out = [np.array([1.0, 0.0, 0.0])]
    k = (p.f0 + p.f1) / p.f0
    c = p.f0 + p.f1
    # with w = v and u = 1 - k v: -k v^2 + (1 - c f2) v - c = 0
    disc = (1 - c * p.f2) ** 2 - 4 * k * c
    if disc >= 0:
        for sgn in (-1.0, 1.0):
            v = ((1 - c * p.f2) + sgn * np.sqrt(disc)) / (2 * k)
            if v > 0:
                out.append(np.array([1 - k * v, v, v]))
    return out


def homogeneous_equilibria(m: ModelSpec) -> list[UniformState]:
    """Spatially uniform roots of the kinetics with a kinetic stability flag.

    For ``gs3`` the saddle-node pair beside the ``(1, 0, 0)`` background is
    returned with ``informational=True``.
    """
    if isinstance(m.params, Fhn3Params):
        return [_classify(m, s) for s in _fhn3_uniform(m.params)]
    if isinstance(m.params, Gs3Params):
        res = [_classify(m, s) for s in _gs3_uniform(m.params)]
        for r in res[1:]:
            r.informational = True
        return res
    raise TypeError(f"no uniform-state solver for model {m.name!r}")


def background(m: ModelSpec) -> np.ndarray:
    """The stable uniform state used as pulse background (first stable root)."""
    states = homogeneous_equilibria(m)
    for s in states:
        if s.stable and not s.informational:
            return s.state
    return states[0].state
