"""Lattices, multi-component fields and the semi-implicit time stepper.

Space is discretised by second-order central differences on a vertex-centred
lattice.  Zero-flux boundaries use mirrored ghost values, periodic boundaries
wrap around.  Time stepping treats diffusion by backward Euler and kinetics by
forward Euler; in two dimensions the implicit part is split into one sweep per
axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "Grid",
    "Field",
    "DivergenceError",
    "laplacian_1d",
    "laplacian_matrix",
    "laplacian_apply",
    "ImexStepper",
    "imex_step",
]

BOUNDARIES = ("neumann", "periodic")


class DivergenceError(FloatingPointError):
    """Raised when a field picks up NaN or Inf values."""


@dataclass(frozen=True)
class Grid:
    """Uniform lattice in one or two dimensions.

    Parameters
    ----------
    extent : tuple of float
        Domain length per axis.
    points : tuple of int
        Lattice points per axis, at least 8.
    bc : tuple of str
        ``"neumann"`` or ``"periodic"`` per axis.  For Neumann axes the
        points include both end points, so ``spacing * (points - 1) = extent``;
        periodic axes satisfy ``spacing * points = extent``.
    """

    extent: tuple[float, ...]
    points: tuple[int, ...]
    bc: tuple[str, ...]

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extent))
        pts = tuple(int(n) for n in np.atleast_1d(self.points))
        bc = (self.bc,) * len(pts) if isinstance(self.bc, str) else tuple(self.bc)
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bc", bc)
        if not (len(ext) == len(pts) == len(bc)) or len(pts) not in (1, 2):
            raise ValueError("extent, points and bc must all have length 1 or 2")
        if any(n < 8 for n in pts):
            raise ValueError("need at least 8 points per axis")
        if any(e <= 0 for e in ext):
            raise ValueError("extent must be positive")
        for b in bc:
            if b not in BOUNDARIES:
                raise ValueError(f"unknown boundary condition {b!r}")

    @classmethod
    def from_spacing(cls, extent, dx, bc="neumann") -> "Grid":
        """Grid with the given spacing; ``extent / dx`` must be an integer."""
        ext = np.atleast_1d(np.asarray(extent, dtype=float))
        dxs = np.broadcast_to(np.asarray(dx, dtype=float), ext.shape)
        bcs = (bc,) * len(ext) if isinstance(bc, str) else tuple(bc)
        pts = []
        for e, d, b in zip(ext, dxs, bcs):
            m = e / d
            if abs(m - round(m)) > 1e-9 * m:
                raise ValueError(f"extent {e} is not a multiple of spacing {d}")
            pts.append(int(round(m)) + (1 if b == "neumann" else 0))
        return cls(tuple(ext), tuple(pts), bcs)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(
            e / (n - 1) if b == "neumann" else e / n
            for e, n, b in zip(self.extent, self.points, self.bc)
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    def coords(self, axis: int = 0) -> np.ndarray:
        """Node positions along ``axis``, starting at 0."""
        return np.arange(self.points[axis]) * self.spacing[axis]

    def quadrature_weights(self, axis: int = 0) -> np.ndarray:
        """Trapezoid weights along one axis (uniform for periodic axes)."""
        w = np.full(self.points[axis], self.spacing[axis])
        if self.bc[axis] == "neumann":
            w[0] = w[-1] = 0.5 * self.spacing[axis]
        return w

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid integral of a scalar array shaped like the grid."""
        out = np.asarray(values, dtype=float)
        for ax in reversed(range(self.dim)):
            out = np.tensordot(out, self.quadrature_weights(ax), axes=([ax], [0]))
        return float(out)

    def mean(self, values: np.ndarray) -> float:
        return self.integrate(values) / float(np.prod(self.extent))


@dataclass
class Field:
    """Values of ``N`` components on a grid, stored with shape ``(N, *points)``."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def uniform(cls, grid: Grid, state) -> "Field":
        state = np.asarray(state, dtype=float)
        vals = np.empty((len(state),) + grid.shape)
        vals[:] = state.reshape((-1,) + (1,) * grid.dim)
        return cls(grid, vals)

    @property
    def n_components(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def check_finite(self) -> "Field":
        if not self.is_finite():
            raise DivergenceError("field contains non-finite values")
        return self


def laplacian_1d(n: int, dx: float, bc: str) -> sp.csr_matrix:
    """Three-point second difference as a sparse ``n x n`` matrix."""
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    L = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc == "neumann":
        # mirrored ghost: u[-1] = u[1], u[n] = u[n-2]
        L[0, 1] = 2.0
        L[n - 1, n - 2] = 2.0
    elif bc == "periodic":
        L[0, n - 1] = 1.0
        L[n - 1, 0] = 1.0
    else:
        raise ValueError(bc)
    return (L / dx**2).tocsr()


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Discrete Laplacian on the flattened (C-order) grid."""
    ops = [laplacian_1d(n, h, b) for n, h, b in zip(grid.points, grid.spacing, grid.bc)]
    if grid.dim == 1:
        return ops[0]
    nx, ny = grid.points
    return (sp.kron(ops[0], sp.identity(ny)) + sp.kron(sp.identity(nx), ops[1])).tocsr()


def _second_difference(a: np.ndarray, axis: int, dx: float, bc: str) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = a[:-2] - 2 * a[1:-1] + a[2:]
    if bc == "neumann":
        out[0] = 2 * (a[1] - a[0])
        out[-1] = 2 * (a[-2] - a[-1])
    else:
        out[0] = a[-1] - 2 * a[0] + a[1]
        out[-1] = a[-2] - 2 * a[-1] + a[0]
    return np.moveaxis(out / dx**2, 0, axis)


def laplacian_apply(f: Field, c: int) -> np.ndarray:
    """Discrete Laplacian of component ``c`` of ``f``."""
    a = f.values[c]
    g = f.grid
    out = np.zeros_like(a)
    for ax in range(g.dim):
        out += _second_difference(a, ax, g.spacing[ax], g.bc[ax])
    return out


@lru_cache(maxsize=64)
def _implicit_factor(n: int, dx: float, bc: str, coef: float):
    """LU factors of ``I - coef * d_xx`` for one axis (cyclic when periodic)."""
    A = sp.identity(n, format="csc") - coef * laplacian_1d(n, dx, bc).tocsc()
    return splu(A.tocsc())


class ImexStepper:
    """Reusable semi-implicit stepper for one (grid, model, dt) combination.

    Component ``j`` advances as
    ``(I - dt D_j / tau_j * Lap) u_j^{n+1} = u_j^n + dt / tau_j * F_j(u^n)``,
    with the implicit operator applied as one tridiagonal (or cyclic) solve
    per axis in two dimensions.
    """

    def __init__(self, grid: Grid, model, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.model = model
        self.dt = float(dt)
        self.rate = np.array([self.dt / t for t in model.tau])
        self._solvers = [
            [
                _implicit_factor(n, h, b, self.dt * d / t)
                for n, h, b in zip(grid.points, grid.spacing, grid.bc)
            ]
            for d, t in zip(model.D, model.tau)
        ]

    def step(self, state: Field) -> Field:
        if state.n_components != self.model.n_components:
            raise ValueError("component count of the field and model differ")
        g = self.grid
        rhs = state.values + self.rate.reshape((-1,) + (1,) * g.dim) * self.model.kinetics(state.values)
        out = np.empty_like(rhs)
        for j, solvers in enumerate(self._solvers):
            r = rhs[j]
            if g.dim == 1:
                r = solvers[0].solve(r)
            else:
                r = solvers[0].solve(r)  # columns are y-lines: solves along x
                r = solvers[1].solve(r.T).T
            out[j] = r
        res = Field(g, out)
        if not res.is_finite():
            raise DivergenceError("non-finite values after IMEX step")
        return res

    def run(self, state: Field, n_steps: int, callback=None, every: int = 1) -> Field:
        """Take ``n_steps`` steps; ``callback(k, field)`` every ``every`` steps."""
        for k in range(1, n_steps + 1):
            state = self.step(state)
            if callback is not None and k % every == 0:
                callback(k, state)
        return state


def imex_step(state: Field, model, dt: float) -> Field:
    """One semi-implicit step; see :class:`ImexStepper` for the scheme."""
    return ImexStepper(state.grid, model, dt).step(state)
