"""Standing and traveling pulses: Newton solvers, continuation and spectra.

Pulses live on a one-dimensional :class:`~wiia.grid.Grid`.  A traveling pulse
with speed ``c`` solves ``D U'' + c T U' + F(U) = 0`` in the comoving frame;
standing pulses are the ``c = 0`` case with the translation freedom removed by
fixing the centroid of ``u - u_background``.

The linearisation used everywhere is the time-constant scaled operator
``L = T^{-1} (D d_xx + c T d_x + F'(U))``, whose eigenvalues are growth rates
in physical time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigs, splu, spsolve

from .grid import Field, Grid, laplacian_1d
from .models import ModelSpec, background

log = logging.getLogger(__name__)

__all__ = [
    "NewtonDiverged",
    "ConvergedToUniform",
    "TailNotExponential",
    "SpectrumError",
    "NoIntersection",
    "PulseProfile",
    "PulseOperator",
    "pulse_grid",
    "gaussian_guess",
    "with_param",
    "find_standing_pulse",
    "find_traveling_pulse",
    "solve_at_speed",
    "Branch",
    "BranchPoint",
    "continue_branch",
    "SpectralData",
    "leading_spectrum",
    "critical_eigenvalues",
    "BifurcationPoint",
    "detect_bifurcations",
    "locate_dh_point",
    "TailFit",
    "tail_fit",
    "tail_amplitudes",
    "tail_pairings",
    "translation_residual",
    "InteractionConstants",
    "interaction_constants",
    "PerturbationRun",
    "perturb_and_evolve",
]

NEWTON_TOL = 1e-10
MAX_NEWTON = 50
UNIFORM_AMPLITUDE = 1e-3
BIF_TOL = 1e-6
OMEGA_GUESS = 0.19


class NewtonDiverged(RuntimeError):
    pass


class ConvergedToUniform(RuntimeError):
    pass


class TailNotExponential(ValueError):
    pass


class SpectrumError(RuntimeError):
    pass


class NoIntersection(RuntimeError):
    pass


def with_param(m: ModelSpec, name: str, value: float) -> ModelSpec:
    """Copy of a parameterised model with one kinetic/transport parameter changed."""
    if m.params is None or not hasattr(m.params, name):
        raise KeyError(f"model {m.name!r} has no parameter {name!r}")
    return m.params.with_(**{name: float(value)}).model()


def pulse_grid(length: float, dx: float, bc: str = "periodic") -> Grid:
    """1D grid whose centre is a lattice node (even point count when periodic)."""
    g = Grid.from_spacing(length, dx, bc)
    n = g.points[0]
    if bc == "periodic" and n % 2:
        raise ValueError("periodic pulse grids need an even number of points")
    if bc == "neumann" and n % 2 == 0:
        raise ValueError("Neumann pulse grids need an odd number of points")
    return g


def _center_index(grid: Grid) -> int:
    n = grid.points[0]
    return n // 2 if grid.bc[0] == "periodic" else (n - 1) // 2


def _mirror_index(grid: Grid) -> np.ndarray:
    n = grid.points[0]
    m = _center_index(grid)
    return (2 * m - np.arange(n)) % n


def _derivative_1d(n: int, dx: float, bc: str) -> sp.csr_matrix:
    """Central first difference; zero at Neumann ends (mirror ghosts)."""
    D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="lil")
    if bc == "periodic":
        D[0, n - 1] = -1.0
        D[n - 1, 0] = 1.0
    else:
        D[0, 1] = 0.0
        D[n - 1, n - 2] = 0.0
    return (D / (2 * dx)).tocsr()


class PulseOperator:
    """Discrete residual, Jacobian and linearisation for one (grid, model)."""

    def __init__(self, grid: Grid, model: ModelSpec):
        if grid.dim != 1:
            raise ValueError("pulse computations are one-dimensional")
        self.grid = grid
        self.model = model
        self.n = grid.points[0]
        self.N = model.n_components
        self.dx = grid.spacing[0]
        self.lap = laplacian_1d(self.n, self.dx, grid.bc[0])
        self.dz = _derivative_1d(self.n, self.dx, grid.bc[0])
        self.tau = np.asarray(model.tau, dtype=float)
        self.x = grid.coords(0)
        self.center = float(self.x[_center_index(grid)])
        self.weights = grid.quadrature_weights(0)

    def shape(self, U) -> np.ndarray:
        return np.asarray(U, dtype=float).reshape(self.N, self.n)

    def residual(self, U, c: float = 0.0) -> np.ndarray:
        U = self.shape(U)
        F = self.model.kinetics(U)
        out = np.empty_like(U)
        for j in range(self.N):
            out[j] = self.model.D[j] * (self.lap @ U[j]) + F[j]
            if c:
                out[j] += c * self.tau[j] * (self.dz @ U[j])
        return out.ravel()

    def jacobian(self, U, c: float = 0.0) -> sp.csc_matrix:
        J = self.model.jacobian(self.shape(U))
        blocks = []
        for i in range(self.N):
            row = []
            for j in range(self.N):
                b = sp.diags(np.broadcast_to(J[i, j], (self.n,)).astype(float))
                if i == j:
                    b = b + self.model.D[i] * self.lap
                    if c:
                        b = b + c * self.tau[i] * self.dz
                row.append(b)
            blocks.append(row)
        return sp.bmat(blocks, format="csc")

    def linearization(self, U, c: float = 0.0) -> sp.csc_matrix:
        tinv = sp.diags(np.repeat(1.0 / self.tau, self.n))
        return (tinv @ self.jacobian(U, c)).tocsc()

    def d_dz(self, U) -> np.ndarray:
        U = self.shape(U)
        return np.concatenate([self.dz @ U[j] for j in range(self.N)])

    def d_dc(self, U) -> np.ndarray:
        U = self.shape(U)
        return np.concatenate([self.tau[j] * (self.dz @ U[j]) for j in range(self.N)])

    def inner(self, f, g) -> complex:
        """Discrete ``L^2`` pairing ``sum_j int f_j conj(g_j) dx``."""
        f = np.asarray(f).reshape(self.N, self.n)
        g = np.asarray(g).reshape(self.N, self.n)
        val = np.sum(f * np.conj(g) * self.weights)
        return val if np.iscomplexobj(val) and abs(val.imag) > 0 else float(np.real(val))

    def pin_vector(self) -> np.ndarray:
        """Centroid weights ``(x - x_c) dx`` on the first component.

        The antipodal node of a periodic grid gets weight zero so the weights
        sum to zero and the pin does not depend on the background level.
        """
        g = np.zeros(self.N * self.n)
        r = self.x - self.center
        if self.grid.bc[0] == "periodic":
            r[np.isclose(np.abs(r), 0.5 * self.grid.extent[0])] = 0.0
        g[: self.n] = r * self.weights
        return g


@dataclass
class PulseProfile:
    """A converged standing or traveling pulse."""

    grid: Grid
    state: np.ndarray = field(repr=False)
    c: float
    model: ModelSpec = field(repr=False)
    residual: float
    background: np.ndarray
    iterations: int = 0
    symmetric: bool = False
    collapsed: bool = False

    @property
    def params(self) -> dict:
        return self.model.params_dict()

    @property
    def kind(self) -> str:
        return "standing" if self.c == 0.0 else "traveling"

    @property
    def amplitude(self) -> float:
        return float(np.max(np.abs(self.state[0] - self.background[0])))

    @property
    def x(self) -> np.ndarray:
        return self.grid.coords(0)

    def field(self) -> Field:
        return Field(self.grid, self.state.copy())

    def parity_residual(self) -> float:
        idx = _mirror_index(self.grid)
        return float(np.max(np.abs(self.state - self.state[:, idx])))

    def mirrored(self) -> "PulseProfile":
        """Reflection about the domain centre; the speed changes sign."""
        idx = _mirror_index(self.grid)
        return replace(self, state=self.state[:, idx].copy(), c=-self.c)

    def operator(self) -> PulseOperator:
        return PulseOperator(self.grid, self.model)


def spectral_derivative(values, grid: Grid) -> np.ndarray:
    """``d/dx`` of the trigonometric interpolant, row by row.

    Neumann data are mirrored into an even periodic sequence first.  Unlike
    the central difference, this derivative commutes with the discrete
    Laplacian, so it is the right probe for the discrete translation mode.
    """
    F = np.atleast_2d(np.asarray(values, dtype=float))
    n, dx = grid.points[0], grid.spacing[0]
    if grid.bc[0] == "neumann":
        F = np.concatenate([F, F[:, -2:0:-1]], axis=1)
    k = 2j * np.pi * np.fft.fftfreq(F.shape[1], d=dx)
    if F.shape[1] % 2 == 0:
        k[F.shape[1] // 2] = 0.0
    return np.real(np.fft.ifft(k * np.fft.fft(F, axis=1), axis=1))[:, :n]


def translation_residual(p: PulseProfile) -> float:
    """``||L S_x||_inf / ||S_x||_inf`` with ``S_x`` from :func:`spectral_derivative`."""
    op = p.operator()
    Sx = spectral_derivative(p.state, p.grid).ravel()
    L = op.linearization(p.state, p.c)
    return float(np.max(np.abs(L @ Sx)) / np.max(np.abs(Sx)))


def gaussian_guess(m: ModelSpec, grid: Grid, amplitude: float = 2.3, width: float = 0.01,
                   center: float | None = None) -> Field:
    """Bump in the first component over the background.

    The remaining components of the FHN model are linear in ``u`` at steady
    state, so they are filled in by one linear solve each.
    """
    bg = background(m)
    x = grid.coords(0)
    xc = float(x[_center_index(grid)]) if center is None else center
    u = bg[0] + amplitude * np.exp(-(((x - xc) / width) ** 2))
    vals = [u]
    lap = laplacian_1d(grid.points[0], grid.spacing[0], grid.bc[0])
    I = sp.identity(grid.points[0], format="csc")
    if m.name == "fhn3":
        p = m.params
        vals.append(spsolve((p.gamma * I - p.D_v * lap).tocsc(), u))
        vals.append(spsolve((I - p.D_w * lap).tocsc(), u))
    else:
        for j in range(1, m.n_components):
            vals.append(np.full_like(u, bg[j]))
    return Field(grid, np.array(vals))


def _newton(fun, jac, X, tol, max_iter, what="Newton"):
    """Damped Newton: halve the step until the residual norm decreases."""
    r = fun(X)
    nr = np.max(np.abs(r))
    for it in range(1, max_iter + 1):
        if nr < tol:
            return X, nr, it - 1
        d = spsolve(jac(X), -r)
        if not np.all(np.isfinite(d)):
            raise NewtonDiverged(f"{what}: singular Jacobian")
        lam = 1.0
        while True:
            Xn = X + lam * d
            rn = fun(Xn)
            nrn = np.max(np.abs(rn))
            if nrn < nr or lam < 1.0 / 64:
                break
            lam *= 0.5
        X, r, nr = Xn, rn, nrn
    if nr < tol:
        return X, nr, max_iter
    raise NewtonDiverged(f"{what}: residual {nr:.3e} after {max_iter} iterations")


def find_standing_pulse(m: ModelSpec, guess: Field, tol: float = NEWTON_TOL,
                        max_iter: int = MAX_NEWTON) -> PulseProfile:
    """Newton for ``D S'' + F(S) = 0`` with the centroid pinned at the centre.

    The pinning row is bordered by an extra unknown multiplying the pinning
    vector itself, which keeps the extended Jacobian regular on the
    translation mode.

    Raises
    ------
    ConvergedToUniform
        If the guess or the converged state has no bump.
    NewtonDiverged
        After ``max_iter`` iterations without reaching ``tol``.
    """
    op = PulseOperator(guess.grid, m)
    bg = background(m)
    if np.max(np.abs(guess.values[0] - bg[0])) < UNIFORM_AMPLITUDE:
        raise ConvergedToUniform("guess is the uniform state")
    g = op.pin_vector()

    def fun(X):
        U, eps = X[:-1], X[-1]
        return np.concatenate([op.residual(U) + eps * g, [g @ U]])

    def jac(X):
        return sp.bmat([[op.jacobian(X[:-1]), g[:, None]], [g[None, :], None]], format="csc")

    X0 = np.concatenate([guess.values.ravel(), [0.0]])
    X, nr, it = _newton(fun, jac, X0, tol, max_iter, "standing pulse")
    U = op.shape(X[:-1])
    res = float(np.max(np.abs(op.residual(U))))
    prof = PulseProfile(guess.grid, U.copy(), 0.0, m, res, bg, it)
    if prof.amplitude < UNIFORM_AMPLITUDE:
        raise ConvergedToUniform("Newton converged to the uniform state")
    prof.symmetric = prof.parity_residual() < 1e-8
    return prof


def find_traveling_pulse(m: ModelSpec, guess: PulseProfile, c_guess: float,
                         tol: float = NEWTON_TOL, max_iter: int = MAX_NEWTON,
                         c_floor: float = 1e-9) -> PulseProfile:
    """Newton on ``(U, c)`` with the phase condition ``<U - guess, guess'> = 0``.

    If the speed collapses below ``c_floor`` the standing pulse is returned
    with ``collapsed=True``.
    """
    op = PulseOperator(guess.grid, m)
    ref = guess.state.ravel()
    g = op.d_dz(ref) * np.tile(op.weights, op.N)

    def fun(X):
        U, c = X[:-1], X[-1]
        return np.concatenate([op.residual(U, c), [g @ (U - ref)]])

    def jac(X):
        U, c = X[:-1], X[-1]
        return sp.bmat(
            [[op.jacobian(U, c), op.d_dc(U)[:, None]], [g[None, :], None]], format="csc"
        )

    X, nr, it = _newton(fun, jac, np.concatenate([ref, [c_guess]]), tol, max_iter, "traveling pulse")
    U, c = op.shape(X[:-1]), float(X[-1])
    bg = background(m)
    if abs(c) < c_floor:
        prof = PulseProfile(guess.grid, U.copy(), 0.0, m, nr, bg, it, collapsed=True)
        prof.symmetric = prof.parity_residual() < 1e-8
        return prof
    prof = PulseProfile(guess.grid, U.copy(), c, m, float(np.max(np.abs(op.residual(U, c)))), bg, it)
    if prof.amplitude < UNIFORM_AMPLITUDE:
        raise ConvergedToUniform("traveling pulse collapsed to the uniform state")
    return prof


def solve_at_speed(guess: PulseProfile, c: float, param: str, tol: float = NEWTON_TOL,
                   max_iter: int = MAX_NEWTON, h: float = 1e-6) -> PulseProfile:
    """Traveling pulse with prescribed speed; ``param`` becomes the unknown.

    Near a drift bifurcation the speed is a better branch coordinate than the
    parameter, so this seeds the traveling branch from a standing pulse.
    """
    m = guess.model
    k0 = float(getattr(m.params, param))
    ref = guess.state.ravel()
    op0 = PulseOperator(guess.grid, m)
    g = op0.d_dz(ref) * np.tile(op0.weights, op0.N)

    def ops(k):
        return PulseOperator(guess.grid, with_param(m, param, k))

    def fun(X):
        U, k = X[:-1], X[-1]
        return np.concatenate([ops(k).residual(U, c), [g @ (U - ref)]])

    def jac(X):
        U, k = X[:-1], X[-1]
        dk = (ops(k + h).residual(U, c) - ops(k - h).residual(U, c)) / (2 * h)
        return sp.bmat([[ops(k).jacobian(U, c), dk[:, None]], [g[None, :], None]], format="csc")

    X, nr, it = _newton(fun, jac, np.concatenate([ref, [k0]]), tol, max_iter, "fixed-speed pulse")
    mk = with_param(m, param, X[-1])
    return PulseProfile(guess.grid, op0.shape(X[:-1]).copy(), float(c), mk, nr, background(mk), it)


# ---------------------------------------------------------------------------
# spectra


def _eigs(L, sigma, k, left=False):
    A = L.T.tocsc() if left else L
    if np.iscomplexobj(sigma) or np.iscomplex(sigma):
        A = A.astype(complex)
    try:
        return eigs(A, k=k, sigma=sigma, which="LM", tol=1e-12, maxiter=5000)
    except ArpackNoConvergence as exc:  # pragma: no cover - rare
        raise SpectrumError(f"ARPACK did not converge near {sigma}") from exc


def _odd_fraction(v, mirror, N, n) -> float:
    v = np.asarray(v).reshape(N, n)
    odd = 0.5 * (v - v[:, mirror])
    return float(np.linalg.norm(odd) / max(np.linalg.norm(v), 1e-300))


def _corr(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))


def critical_eigenvalues(p: PulseProfile, omega_guess: float = OMEGA_GUESS, k: int = 6,
                         trans_tol: float = 1e-7) -> dict:
    """Eigenvalues relevant for drift, fold and Hopf detection.

    Returns a dict with ``translation`` (eigenvalue closest to zero whose mode
    matches ``S'``), ``real`` (the other real eigenvalue nearest zero, or
    None), ``real_odd`` (its odd fraction), ``real_max`` and ``real_max_odd``
    (the same for the rightmost real eigenvalue), ``hopf`` (eigenvalue with
    positive imaginary part nearest ``i omega_guess``) and ``all``.
    """
    op = p.operator()
    L = op.linearization(p.state, p.c)
    lam0, V0 = _eigs(L, 1e-9, k)
    Sx = op.d_dz(p.state)
    mirror = _mirror_index(p.grid)
    # near a drift point the translation/drift pair may split into a tiny
    # complex pair; such eigenvalues are treated as real
    real = [(complex(lam0[i].real), np.real(V0[:, i])) for i in range(len(lam0))
            if abs(lam0[i].imag) < 1e-9 or abs(lam0[i]) < 1e-5]
    if not real:
        raise SpectrumError("no real eigenvalue near zero")
    corrs = [_corr(v, Sx) for _, v in real]
    itr = int(np.argmin([abs(l) for l, _ in real]))
    trans = real[itr][0].real
    rest = [(l.real, v) for i, (l, v) in enumerate(real) if i != itr]
    if abs(trans) > trans_tol and max(corrs) < 0.99:
        raise SpectrumError(f"translation eigenvalue not found (nearest {trans:.3e})")
    out = {"translation": trans, "translation_corr": corrs[itr], "real": None, "real_odd": None,
           "real_max": None, "real_max_odd": None}
    if rest:
        j = int(np.argmin([abs(l) for l, _ in rest]))
        out["real"] = rest[j][0]
        out["real_odd"] = _odd_fraction(rest[j][1], mirror, op.N, op.n)
        j = int(np.argmax([l for l, _ in rest]))
        out["real_max"] = rest[j][0]
        out["real_max_odd"] = _odd_fraction(rest[j][1], mirror, op.N, op.n)
    lam1 = _eigs(L, 1j * omega_guess, k)[0]
    cands = [l for l in lam1 if l.imag > 1e-6]
    out["hopf"] = min(cands, key=lambda l: abs(l - 1j * omega_guess)) if cands else None
    out["all"] = np.array(sorted(np.concatenate([lam0, lam1]), key=lambda z: -z.real))
    return out


@dataclass
class SpectralData:
    """Leading eigenpairs of ``L`` and the adjoint triple, normalised.

    Normalisation: ``<psi, phi> = 0``, ``<phi, psi*> = 1``, ``<psi, psi*> = 0``
    and ``<xi, xi*> = 1`` with the Hermitian pairing ``sum int f conj(g)``.
    ``xi`` carries the phase for which ``xi_u`` at the pulse centre is real
    and positive.  ``psi`` is the least-squares solution of ``L psi = -phi``
    (exact only at a drift point).
    """

    eigenvalues: np.ndarray
    phi: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    xi: np.ndarray = field(repr=False)
    omega0: float
    lam_hopf: complex
    phi_star: np.ndarray = field(repr=False)
    psi_star: np.ndarray = field(repr=False)
    xi_star: np.ndarray = field(repr=False)
    residuals: dict
    psi_defect: float

    def as_fields(self, N: int):
        return {k: getattr(self, k).reshape(N, -1) for k in
                ("phi", "psi", "xi", "phi_star", "psi_star", "xi_star")}


def _bordered_solve(A, col, row, rhs):
    M = sp.bmat([[A, col[:, None]], [row[None, :], None]], format="csc")
    sol = spsolve(M, np.concatenate([rhs, [0.0]]))
    return sol[:-1], sol[-1]


def leading_spectrum(p: PulseProfile, n: int = 8, omega_guess: float = OMEGA_GUESS) -> SpectralData:
    """Rightmost eigenvalues plus the normalised ``phi, psi, xi`` and adjoints.

    Shift-invert Arnoldi is run around 0 and around ``i omega_guess``.
    """
    op = p.operator()
    L = op.linearization(p.state, p.c)
    LT = L.T.tocsc()
    W = np.tile(op.weights, op.N)
    Sx = op.d_dz(p.state)

    lam0, V0 = _eigs(L, 1e-9, n)
    k0 = int(np.argmax([_corr(V0[:, i], Sx) if abs(lam0[i]) < 1e-4 else 0 for i in range(len(lam0))]))
    if abs(lam0[k0]) > 1e-4 or _corr(V0[:, k0], Sx) < 0.99:
        raise SpectrumError("no eigenvalue within tolerance of 0 matching S'")
    phi = np.real(V0[:, k0] * np.exp(-1j * np.angle(np.vdot(Sx, V0[:, k0]))))
    phi *= (Sx @ (phi * W)) / (phi @ (phi * W))  # scale to match S'

    mu0, Y0 = _eigs(L, 1e-9, 2, left=True)
    i0 = int(np.argmin(np.abs(mu0)))
    phis = np.real(Y0[:, i0] / Y0[np.argmax(np.abs(Y0[:, i0])), i0])

    # psi: L psi + kappa phi* = -phi, <psi, phi> = 0  (weights in the pairing)
    psi, kappa = _bordered_solve(L, phis / W, phi * W, -phi)
    psi_defect = float(np.linalg.norm(L @ psi + phi) / np.linalg.norm(phi))
    # psi*_p: L^T q + kappa' phi = -phi*, <q, phi*> = 0
    q, _ = _bordered_solve(LT, phi, phis * W, -phis)
    # psi* = beta q + c phi*, phi* -> beta phi*:
    #   beta <phi,q> + c <phi,phi*> = 1,  beta <psi,q> + c <psi,phi*> = 0
    A2 = np.array([[phi @ (q * W), phi @ (phis * W)], [psi @ (q * W), psi @ (phis * W)]])
    beta, cc = np.linalg.solve(A2, [1.0, 0.0])
    psis = beta * q + cc * phis
    phis = beta * phis

    lam1, V1 = _eigs(L, 1j * omega_guess, n)
    pos = [i for i in range(len(lam1)) if lam1[i].imag > 1e-6]
    if not pos:
        raise SpectrumError("no oscillatory eigenvalue near the Hopf guess")
    ih = min(pos, key=lambda i: abs(lam1[i] - 1j * omega_guess))
    lam_h = complex(lam1[ih])
    xi = V1[:, ih]
    ic = _center_index(p.grid)
    xi = xi / xi[ic] * abs(xi[ic])
    xi = xi / np.sqrt(np.real(np.vdot(xi, xi * W)))
    mu1, Y1 = _eigs(L, -1j * lam_h.imag + lam_h.real, 2, left=True)
    # L^T y = conj(lam) y  <=>  L^* y = conj(lam) y in the Hermitian pairing
    j = int(np.argmin(np.abs(mu1 - np.conj(lam_h))))
    xis = Y1[:, j]
    xis = xis / np.conj(np.sum(xi * np.conj(xis) * W))

    def ip(f, g):
        return np.sum(f * np.conj(g) * W)

    res = {
        "<psi,phi>": abs(ip(psi, phi)),
        "<phi,psi*>-1": abs(ip(phi, psis) - 1),
        "<psi,psi*>": abs(ip(psi, psis)),
        "<xi,xi*>-1": abs(ip(xi, xis) - 1),
        "<psi,phi*>-1": abs(ip(psi, phis) - 1),
        "<phi,phi*>": abs(ip(phi, phis)),
    }
    allev = np.concatenate([lam0, lam1])
    allev = allev[np.argsort(-allev.real)]
    return SpectralData(allev, phi, psi, xi, lam_h.imag, lam_h, phis, psis, xis, res, psi_defect)


# ---------------------------------------------------------------------------
# continuation


@dataclass
class BranchPoint:
    param: float
    c: float
    max_u: float
    tangent_param: float
    eig: dict | None = None
    profile: PulseProfile | None = field(default=None, repr=False)


@dataclass
class Branch:
    param: str
    kind: str
    points: list[BranchPoint]
    end_reason: str = ""
    folds: list[int] = field(default_factory=list)

    def values(self) -> np.ndarray:
        return np.array([q.param for q in self.points])

    def rows(self):
        for q in self.points:
            row = {"param": q.param, "c": q.c, "max_u": q.max_u}
            if q.eig:
                row["re_real"] = q.eig["real"] if q.eig["real"] is not None else math.nan
                h = q.eig["hopf"]
                row["re_hopf"] = h.real if h is not None else math.nan
                row["im_hopf"] = h.imag if h is not None else math.nan
            yield row


class _Family:
    """Extended system for a pulse family in one parameter ``k``.

    Unknowns are ``(U, e, k)`` where ``e`` is the bordering unknown of the
    centroid pin for standing pulses and the speed for traveling pulses.
    """

    def __init__(self, p: PulseProfile, param: str, h: float = 1e-6):
        self.p0 = p
        self.param = param
        self.travel = p.c != 0.0
        self.h = h
        self.op = p.operator()
        self.N, self.n = self.op.N, self.op.n
        self.m = self.N * self.n
        self.pin = self.op.pin_vector()

    def model(self, k):
        return with_param(self.p0.model, self.param, k)

    def op_at(self, k):
        return PulseOperator(self.p0.grid, self.model(k))

    def pack(self, prof: PulseProfile):
        k = float(getattr(prof.model.params, self.param))
        e = prof.c if self.travel else 0.0
        return np.concatenate([prof.state.ravel(), [e, k]])

    def _row(self, ref):
        if self.travel:
            U = ref[: self.m]
            return self.op.d_dz(U) * np.tile(self.op.weights, self.N), U
        return self.pin, np.zeros(self.m)

    def F(self, X, ref):
        U, e, k = X[: self.m], X[self.m], X[-1]
        g, base = self._row(ref)
        op = self.op_at(k)
        r = op.residual(U, e) if self.travel else op.residual(U) + e * self.pin
        return np.concatenate([r, [g @ (U - base)]])

    def J(self, X, ref, with_k=True):
        U, e, k = X[: self.m], X[self.m], X[-1]
        g, _ = self._row(ref)
        op = self.op_at(k)
        if self.travel:
            JU, col = op.jacobian(U, e), op.d_dc(U)
        else:
            JU, col = op.jacobian(U), self.pin
        cols = [JU, sp.csc_matrix(col[:, None])]
        if with_k:
            cu = e if self.travel else 0.0
            dk = (self.op_at(k + self.h).residual(U, cu) - self.op_at(k - self.h).residual(U, cu)) / (2 * self.h)
            cols.append(sp.csc_matrix(dk[:, None]))
        top = sp.hstack(cols)
        gl = np.concatenate([g, np.zeros(top.shape[1] - self.m)])
        return sp.vstack([top, sp.csr_matrix(gl[None, :])]).tocsc()

    def profile(self, X) -> PulseProfile:
        U, e, k = X[: self.m], X[self.m], X[-1]
        c = float(e) if self.travel else 0.0
        m = self.model(k)
        op = PulseOperator(self.p0.grid, m)
        prof = PulseProfile(self.p0.grid, op.shape(U).copy(), c, m,
                            float(np.max(np.abs(op.residual(U, c)))), background(m))
        if not self.travel:
            prof.symmetric = prof.parity_residual() < 1e-8
        return prof

    def solve_fixed(self, X0, k, ref, tol=NEWTON_TOL):
        """Correct at a fixed parameter value starting from ``X0``."""
        def fun(Y):
            return self.F(np.concatenate([Y, [k]]), ref)

        def jac(Y):
            return self.J(np.concatenate([Y, [k]]), ref, with_k=False)

        Y, nr, it = _newton(fun, jac, X0[:-1], tol, MAX_NEWTON, "fixed-parameter correction")
        return np.concatenate([Y, [k]])


def _tangent(fam: _Family, X, ref, prev=None):
    Jx = fam.J(X, ref)
    m = Jx.shape[1]
    e = np.zeros(m)
    e[-1] = 1.0
    seed = prev if prev is not None else e
    M = sp.vstack([Jx, sp.csr_matrix(seed[None, :])]).tocsc()
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    t = spsolve(M, rhs)
    t /= np.linalg.norm(t)
    if prev is not None and t @ prev < 0:
        t = -t
    return t


def continue_branch(p: PulseProfile, param: str, prange: tuple[float, float], ds: float = 1e-3,
                    max_steps: int = 400, spectra: bool = True, omega_guess: float = OMEGA_GUESS,
                    direction: int = 1, ds_min: float = 1e-7, ds_max: float | None = None,
                    keep_profiles: bool = True) -> Branch:
    """Pseudo-arclength continuation of a pulse family in ``param``.

    The arclength is measured in the scaled variables
    ``(U / sqrt(dim U), [c], k)``.  Folds are flagged where the parameter
    component of the tangent changes sign; eigenvalue crossings are recorded
    through :func:`critical_eigenvalues` at every point when ``spectra``.
    The branch ends at the first point outside ``prange`` or when the step
    falls below ``ds_min`` (reported in ``end_reason``).
    """
    fam = _Family(p, param)
    lo, hi = prange
    ds_max = ds_max if ds_max is not None else 10 * ds
    X = fam.pack(p)
    scale = np.ones_like(X)
    scale[: fam.N * fam.n] = 1.0 / math.sqrt(fam.N * fam.n)
    t = _tangent(fam, X, X)
    if direction * t[-1] < 0:
        t = -t
    omega = omega_guess

    def point(Xp, tp):
        prof = fam.profile(Xp)
        eig = None
        nonlocal omega
        if spectra:
            eig = critical_eigenvalues(prof, omega)
            if eig["hopf"] is not None:
                omega = eig["hopf"].imag
        return BranchPoint(float(Xp[-1]), float(prof.c), float(prof.state[0].max()), float(tp[-1]),
                           eig, prof if keep_profiles else None)

    pts = [point(X, t)]
    branch = Branch(param, p.kind, pts)
    h = ds
    for _ in range(max_steps):
        Xp = X + h * t / scale
        ref = X

        def fun(Y):
            return np.concatenate([fam.F(Y, ref), [((Y - X) * scale) @ t - h]])

        def jac(Y):
            return sp.vstack([fam.J(Y, ref), sp.csr_matrix((t * scale)[None, :])]).tocsc()

        try:
            Y, nr, it = _newton(fun, jac, Xp, NEWTON_TOL, 12, "continuation")
        except (NewtonDiverged, FloatingPointError, ValueError):
            h *= 0.5
            if h < ds_min:
                branch.end_reason = "step-size underflow"
                break
            continue
        tn = _tangent(fam, Y, Y, prev=t)
        X, t = Y, tn
        pts.append(point(X, t))
        if len(pts) >= 2 and pts[-1].tangent_param * pts[-2].tangent_param < 0:
            branch.folds.append(len(pts) - 1)
        if not (lo <= X[-1] <= hi):
            branch.end_reason = "left parameter range"
            break
        if it <= 3:
            h = min(h * 1.5, ds_max)
    else:
        branch.end_reason = "max steps"
    return branch


# ---------------------------------------------------------------------------
# bifurcations


@dataclass
class BifurcationPoint:
    kind: str  # drift | hopf | saddle_node | dh
    params: dict
    eigenvalues: list
    parity: str
    profile: PulseProfile | None = field(default=None, repr=False)
    iterations: int = 0


def _crit_value(eig, which):
    if which == "real":
        return eig["real"]
    return eig["hopf"].real if eig["hopf"] is not None else None


def _refine(fam: _Family, X0, k0, k1, f0, f1, which, omega, tol=BIF_TOL, max_iter=40):
    """Secant iteration in the parameter on ``Re lambda`` (bracket kept)."""
    a, b, fa, fb = k0, k1, f0, f1
    X = X0
    best = None
    for it in range(max_iter):
        k = b - fb * (b - a) / (fb - fa) if fb != fa else 0.5 * (a + b)
        if not (min(a, b) < k < max(a, b)):
            k = 0.5 * (a + b)
        X = fam.solve_fixed(X, k, X)
        prof = fam.profile(X)
        eig = critical_eigenvalues(prof, omega)
        fk = _crit_value(eig, which)
        best = (k, prof, eig)
        if fk is None:
            raise SpectrumError("lost the critical eigenvalue during refinement")
        if abs(fk) < tol:
            return k, prof, eig, it + 1
        # keep a sign-changing bracket (Illinois-flavoured secant)
        if np.sign(fk) == np.sign(fb):
            fa = fa / 2
        else:
            a, fa = b, fb
        b, fb = k, fk
    k, prof, eig = best
    return k, prof, eig, max_iter


def detect_bifurcations(branch: Branch, refine: bool = True, tol: float = BIF_TOL) -> list[BifurcationPoint]:
    """Sign changes of ``Re lambda`` along a branch, refined by secant iteration.

    Real crossings with an odd eigenfunction are drift points, real crossings
    at a fold are saddle-nodes and complex-pair crossings are Hopf points.
    """
    out = []
    pts = branch.points
    if len(pts) < 2 or pts[0].eig is None:
        return out
    fam = _Family(pts[0].profile, branch.param) if pts[0].profile is not None else None
    for i in range(1, len(pts)):
        q0, q1 = pts[i - 1], pts[i]
        for which in ("real", "hopf"):
            f0, f1 = _crit_value(q0.eig, which), _crit_value(q1.eig, which)
            if f0 is None or f1 is None or f0 * f1 >= 0:
                continue
            fold = q0.tangent_param * q1.tangent_param < 0
            if which == "hopf":
                kind, parity = "hopf", "even"
            elif fold:
                kind, parity = "saddle_node", "even"
            else:
                odd = q1.eig["real_odd"] or 0.0
                kind, parity = ("drift", "odd") if (odd > 0.9 or branch.kind == "traveling") else ("saddle_node", "even")
            omega = q1.eig["hopf"].imag if q1.eig["hopf"] is not None else OMEGA_GUESS
            if refine and fam is not None and not fold and q0.profile is not None:
                X0 = fam.pack(q0.profile)
                k, prof, eig, it = _refine(fam, X0, q0.param, q1.param, f0, f1, which, omega, tol)
                lam = eig["real"] if which == "real" else eig["hopf"]
                bp = BifurcationPoint(kind, {branch.param: k, **_other(prof)}, [lam], parity, prof, it)
            else:
                w = f0 / (f0 - f1)
                k = q0.param + w * (q1.param - q0.param)
                lam = f0 + w * (f1 - f0)
                bp = BifurcationPoint(kind, {branch.param: k}, [lam], parity, q1.profile, 0)
            out.append(bp)
    return out


def _other(prof: PulseProfile) -> dict:
    d = prof.params
    return {k: d[k] for k in ("k4", "tau") if k in d}


def _standing_eigs(cache: dict, base: PulseProfile, k4: float, tau: float, omega: float,
                   kname: str, tname: str):
    """Drift and Hopf growth rates of the standing pulse at ``(k4, tau)``."""
    key = round(k4, 14)
    if key not in cache:
        near = min(cache.values(), key=lambda pr: abs(getattr(pr.model.params, kname) - k4)) if cache else base
        fam = _Family(near, kname)
        X = fam.solve_fixed(fam.pack(near), k4, fam.pack(near))
        cache[key] = fam.profile(X)
    prof = cache[key]
    prof_t = replace(prof, model=with_param(prof.model, tname, tau))
    eig = critical_eigenvalues(prof_t, omega)
    return eig, prof_t


def locate_dh_point(base: PulseProfile, window: tuple[tuple[float, float], tuple[float, float]],
                    guess: tuple[float, float] | None = None, kname: str = "k4", tname: str = "tau",
                    tol: float = BIF_TOL, max_iter: int = 30, omega_guess: float = OMEGA_GUESS) -> BifurcationPoint:
    """Solve ``(Re lambda_drift, Re lambda_hopf) = (0, 0)`` for the standing pulse.

    Newton iteration with a finite-difference Jacobian in ``(k, tau)``;
    ``base`` is any converged standing pulse used to seed the solves.  The
    growth rates are scaled by ``tau`` so both equations are of similar size.

    Raises
    ------
    NoIntersection
        If an iterate leaves ``window`` or the iteration stalls.
    """
    (k_lo, k_hi), (t_lo, t_hi) = window
    k, t = guess if guess is not None else (0.5 * (k_lo + k_hi), 0.5 * (t_lo + t_hi))
    cache: dict = {}
    omega = omega_guess

    def G(k, t):
        nonlocal omega
        eig, prof = _standing_eigs(cache, base, k, t, omega, kname, tname)
        if eig["real"] is None or eig["hopf"] is None:
            raise NoIntersection("drift or Hopf eigenvalue not found")
        omega = eig["hopf"].imag
        return np.array([eig["real"], eig["hopf"].real]), eig, prof

    hk, ht = 1e-5, 0.05
    for it in range(1, max_iter + 1):
        if not (k_lo <= k <= k_hi and t_lo <= t <= t_hi):
            raise NoIntersection(f"iterate ({k:.6g}, {t:.6g}) left the window")
        g, eig, prof = G(k, t)
        if np.max(np.abs(g)) < tol:
            return BifurcationPoint("dh", {kname: k, tname: t}, [eig["real"], eig["hopf"]], "odd+even", prof, it)
        Jm = np.column_stack([(G(k + hk, t)[0] - g) / hk, (G(k, t + ht)[0] - g) / ht])
        try:
            dk, dt = np.linalg.solve(Jm, -g)
        except np.linalg.LinAlgError as exc:
            raise NoIntersection("singular Jacobian") from exc
        k, t = k + dk, t + dt
    raise NoIntersection("no convergence")


# ---------------------------------------------------------------------------
# tails and interaction constants


@dataclass
class TailFit:
    alpha: float
    amplitudes: np.ndarray
    r2: float
    component: int
    window: tuple[float, float]
    alpha_left: float | None = None
    alpha_right: float | None = None


def _fit_side(r, F, bgvec, comp, wmask):
    y = np.abs(F[comp, wmask] - bgvec[comp])
    if np.any(y <= 0):
        raise TailNotExponential("tail touches the background level")
    X = np.column_stack([np.ones(wmask.sum()), r[wmask]])
    coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    pred = X @ coef
    ly = np.log(y)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1 - np.sum((ly - pred) ** 2) / ss if ss > 0 else 1.0
    return -coef[1], r2


def tail_fit(values, grid: Grid, background_state=None, center: float | None = None,
             window: tuple[float, float] | None = None, side: str = "right",
             r2_min: float = 0.999) -> TailFit:
    """Exponential fit ``f(x) - bg ~ exp(-alpha |x - center|) a``.

    ``values`` has shape ``(N, n)``.  The default window runs from where the
    slowest-decaying deviation has fallen to 1% of its peak out to 90% of the
    half-domain.  ``alpha`` is taken from the component with the slowest
    fitted decay; the amplitude vector is the least-squares coefficient of
    ``exp(-alpha r)`` for every component on the window (signed).
    """
    F = np.asarray(values)
    F = F.real if np.iscomplexobj(F) else F
    N, n = F.shape
    x = grid.coords(0)
    xc = float(x[_center_index(grid)]) if center is None else center
    bgvec = np.zeros(N) if background_state is None else np.asarray(background_state, dtype=float)
    half = min(xc - x[0], x[-1] - xc)
    sgn = 1.0 if side == "right" else -1.0
    r = sgn * (x - xc)
    dev = np.abs(F - bgvec[:, None])
    if window is None:
        # start where every component stays below 1% of its peak for good
        start = 0.0
        side_mask = r >= 0
        order = np.argsort(r[side_mask])
        rr = r[side_mask][order]
        for j in range(N):
            dj = dev[j, side_mask][order]
            if dj.max() == 0:
                continue
            above = np.where(dj >= 1e-2 * dj.max())[0]
            start = max(start, rr[min(above.max() + 1, len(rr) - 1)])
        window = (start, 0.9 * half)
    w0, w1 = window
    wmask = (r >= w0) & (r <= w1)
    if wmask.sum() < 5:
        raise TailNotExponential("fit window holds fewer than 5 points")
    fits = []
    for j in range(N):
        if np.all(dev[j, wmask] == 0):
            continue
        try:
            a_j, r2_j = _fit_side(r, F, bgvec, j, wmask)
        except TailNotExponential:
            continue
        fits.append((a_j, r2_j, j))
    if not fits:
        raise TailNotExponential("no component has an exponential tail")
    alpha, r2, comp = min(fits, key=lambda t: t[0])
    if r2 < r2_min or alpha <= 0:
        raise TailNotExponential(f"R^2 = {r2:.6f} (alpha = {alpha:.4g}) on window {window}")
    e = np.exp(-alpha * r[wmask])
    amps = np.array([(F[j, wmask] - bgvec[j]) @ e / (e @ e) for j in range(N)])
    return TailFit(float(alpha), amps, float(r2), comp, (float(w0), float(w1)))


def tail_amplitudes(values, grid: Grid, alpha: float, window: tuple[float, float],
                    background_state=None, center: float | None = None,
                    side: str = "right") -> tuple[np.ndarray, float]:
    """Least-squares amplitudes of ``exp(-alpha r)`` with the rate held fixed.

    Returns the amplitude vector and the linear R^2 of the combined fit, which
    measures how far the data are from a pure exponential at that rate.
    """
    F = np.asarray(values)
    F = F.real if np.iscomplexobj(F) else F
    N, n = F.shape
    x = grid.coords(0)
    xc = float(x[_center_index(grid)]) if center is None else center
    bgvec = np.zeros(N) if background_state is None else np.asarray(background_state, dtype=float)
    r = (1.0 if side == "right" else -1.0) * (x - xc)
    wmask = (r >= window[0]) & (r <= window[1])
    if wmask.sum() < 5:
        raise TailNotExponential("fit window holds fewer than 5 points")
    e = np.exp(-alpha * r[wmask])
    Y = F[:, wmask] - bgvec[:, None]
    amps = Y @ e / (e @ e)
    resid = Y - np.outer(amps, e)
    ss = float(np.sum(Y * Y))
    r2 = 1.0 - float(np.sum(resid * resid)) / ss if ss > 0 else 1.0
    return amps, r2


def tail_fit_both(values, grid: Grid, background_state=None, **kw) -> TailFit:
    """Right-side fit with the left-side rate attached for symmetry checks."""
    right = tail_fit(values, grid, background_state, side="right", **kw)
    left = tail_fit(values, grid, background_state, side="left", **kw)
    right.alpha_left, right.alpha_right = left.alpha, right.alpha
    return right


@dataclass
class InteractionConstants:
    M1: float
    M2: float
    M3: float
    alpha: float
    alpha_adjoint: float
    a: np.ndarray
    a_star: np.ndarray
    b_star: np.ndarray
    s4_ok: bool
    M2_literal: float
    M3_literal: float
    warnings: list[str] = field(default_factory=list)
    b_star_r2: float = math.nan


def tail_pairings(alpha: float, D, a, a_star, b_star) -> tuple[float, float]:
    """``M2 = -2 alpha <D a, a*>`` and ``M3 = 2 alpha <D a, b*>`` for a diagonal ``D``."""
    Da = np.asarray(D, dtype=float) * np.asarray(a, dtype=float)
    return -2 * alpha * float(np.dot(Da, a_star)), 2 * alpha * float(np.dot(Da, b_star))


def interaction_constants(p: PulseProfile, s: SpectralData, window=None) -> InteractionConstants:
    """``M1, M2, M3`` from tail fits of ``S``, ``phi*`` and ``Re xi*``.

    The operator carries ``T^{-1}``, so the transport matrix entering the
    tail pairings is ``T^{-1} D``; the literal ``D`` variants are returned
    alongside for comparison.  A sign violation of ``M2 > 0, M3 > 0`` is
    reported as a warning.
    """
    op = p.operator()
    N, n = op.N, op.n
    xc = op.center
    tS = tail_fit(p.state, p.grid, p.background, window=window)
    alpha, a = tS.alpha, tS.amplitudes
    tA = tail_fit(s.phi_star.reshape(N, n), p.grid, None, window=window)
    # Re xi* oscillates in its tail (the Hopf frequency enters the slow
    # components), so b* is projected onto exp(-alpha r) at the pulse rate
    b_star, r2_b = tail_amplitudes(np.real(s.xi_star).reshape(N, n), p.grid, alpha, tS.window)
    a_star = tA.amplitudes
    Dm = np.asarray(p.model.D)
    M2, M3 = tail_pairings(alpha, Dm / op.tau, a, a_star, b_star)
    M2l, M3l = tail_pairings(alpha, Dm, a, a_star, b_star)
    J = p.model.jacobian(p.state)
    J0 = p.model.jacobian(p.background)
    dJ = (J - J0[..., None] if J0.ndim == 2 else J - J0) / op.tau[:, None, None]
    psis = s.psi_star.reshape(N, n)
    x = op.x - xc
    integrand = np.exp(alpha * x) * np.einsum("ijx,j,ix->x", dJ, a, psis)
    M1 = -float(np.sum(integrand * op.weights))
    warnings = []
    if r2_b < 0.9:
        warnings.append(f"Re xi* tail is far from exp(-alpha r): R^2 = {r2_b:.3f}")
    if not (M2 > 0 and M3 > 0):
        warnings.append(f"(S4) violated: M2={M2:.4g}, M3={M3:.4g}")
        log.warning(warnings[-1])
    return InteractionConstants(M1, M2, M3, alpha, tA.alpha, a, a_star, b_star,
                                M2 > 0 and M3 > 0, M2l, M3l, warnings, r2_b)


# ---------------------------------------------------------------------------
# perturbation experiments


@dataclass
class PerturbationRun:
    t: np.ndarray
    max_u: np.ndarray
    deviation: np.ndarray
    fate: str
    extinction_time: float | None
    frequency: float | None
    envelope_growth: float | None
    final: Field = field(repr=False)


def perturb_and_evolve(p: PulseProfile, mode: np.ndarray, amplitude: float, t_end: float,
                       dt: float = 0.01, sample_dt: float = 0.5, eps_bg: float | None = None) -> PerturbationRun:
    """Add ``amplitude * Re(mode)`` to the pulse and integrate in the lab frame.

    Records ``max u`` and ``||u - u_bg||_inf`` every ``sample_dt``; the run
    stops early once the deviation drops below ``eps_bg`` (extinction).
    The oscillation frequency is measured from the spacing of local maxima of
    ``max u`` after subtracting its running mean.
    """
    from .grid import ImexStepper

    mode = np.real(np.asarray(mode)).reshape(p.state.shape)
    u0 = p.state + amplitude * mode / np.max(np.abs(mode))
    st = Field(p.grid, u0)
    stepper = ImexStepper(p.grid, p.model, dt)
    eps_bg = 1e-3 * p.amplitude if eps_bg is None else eps_bg
    every = max(1, int(round(sample_dt / dt)))
    nsteps = int(math.ceil(t_end / dt))
    ts, mx, dv = [0.0], [u0[0].max()], [np.max(np.abs(u0[0] - p.background[0]))]
    fate, t_ext = "recovery", None
    k = 0
    while k < nsteps:
        st = stepper.run(st, every)
        k += every
        t = k * dt
        d = float(np.max(np.abs(st.values[0] - p.background[0])))
        ts.append(t)
        mx.append(float(st.values[0].max()))
        dv.append(d)
        if d < eps_bg:
            fate, t_ext = "extinction", t
            break
    ts, mx, dv = np.array(ts), np.array(mx), np.array(dv)
    freq, growth = _oscillation(ts, mx)
    return PerturbationRun(ts, mx, dv, fate, t_ext, freq, growth, st)


def _oscillation(t, y):
    """Angular frequency and envelope growth rate from peaks of ``y``."""
    if len(y) < 20:
        return None, None
    win = max(3, len(y) // 50)
    kern = np.ones(win) / win
    base = np.convolve(y, kern, mode="same")
    z = y - base
    pk = [i for i in range(1, len(z) - 1) if z[i] > z[i - 1] and z[i] >= z[i + 1] and z[i] > 0]
    if len(pk) < 3:
        return None, None
    tp = t[pk]
    period = float(np.median(np.diff(tp)))
    amp = np.abs(z[pk])
    growth = None
    if np.all(amp > 0):
        growth = float(np.polyfit(tp, np.log(amp), 1)[0])
    return 2 * math.pi / period, growth
