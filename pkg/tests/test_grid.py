"""Finite differences and the semi-implicit stepper."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiia.grid import (
    DivergenceError,
    Field,
    Grid,
    ImexStepper,
    imex_step,
    laplacian_apply,
    laplacian_matrix,
)
from wiia.models import Fhn3Params, Gs3Params, background, linear_model


def _cos_field(n, dim=1):
    g = Grid.from_spacing((1.0,) * dim, 1.0 / n, "periodic")
    x = g.coords(0)
    if dim == 1:
        u = np.cos(2 * np.pi * x)
    else:
        X, Y = np.meshgrid(x, g.coords(1), indexing="ij")
        u = np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    return Field(g, u[None])


def test_grid_spacing_invariants():
    g = Grid.from_spacing(1.0, 0.125, "neumann")
    assert g.points == (9,)
    assert g.spacing[0] * (g.points[0] - 1) == pytest.approx(1.0)
    p = Grid.from_spacing(1.0, 0.125, "periodic")
    assert p.points == (8,)
    assert p.spacing[0] * p.points[0] == pytest.approx(1.0)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        Grid((1.0,), (4,), "neumann")
    with pytest.raises(ValueError):
        Grid((1.0,), (16,), "dirichlet")
    with pytest.raises(ValueError):
        Grid.from_spacing(1.0, 0.3)


def test_field_shape_checked():
    g = Grid.from_spacing(1.0, 0.1)
    with pytest.raises(ValueError):
        Field(g, np.zeros((2, 5)))


@pytest.mark.parametrize("bc", ["neumann", "periodic"])
@pytest.mark.parametrize("dim", [1, 2])
def test_laplacian_of_constant_is_zero(bc, dim):
    g = Grid.from_spacing((1.0,) * dim, 1 / 32, bc)
    f = Field.uniform(g, [3.7])
    assert np.max(np.abs(laplacian_apply(f, 0))) < 1e-9


@pytest.mark.parametrize("dim", [1, 2])
def test_laplacian_second_order(dim):
    errs = []
    for n in (64, 128, 256):
        f = _cos_field(n, dim)
        exact = -dim * (2 * np.pi) ** 2 * f.values[0]
        errs.append(np.max(np.abs(laplacian_apply(f, 0) - exact)))
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(4.0, abs=0.3)


def test_laplacian_neumann_linear_profile():
    g = Grid.from_spacing(1.0, 1 / 16, "neumann")
    x = g.coords(0)
    lap = laplacian_apply(Field(g, x[None]), 0)
    dx = g.spacing[0]
    assert np.allclose(lap[1:-1], 0.0, atol=1e-10)
    # mirrored ghosts u[-1] = u[1] and u[n] = u[n-2]
    assert lap[0] == pytest.approx(2 * (x[1] - x[0]) / dx**2)
    assert lap[-1] == pytest.approx(2 * (x[-2] - x[-1]) / dx**2)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("bc", ["neumann", "periodic"])
def test_matrix_matches_stencil(dim, bc):
    g = Grid.from_spacing((1.0, 0.5)[:dim], 1 / 16, bc)
    rng = np.random.default_rng(1)
    f = Field(g, rng.standard_normal((1,) + g.shape))
    a = laplacian_matrix(g) @ f.values[0].ravel()
    assert np.allclose(a, laplacian_apply(f, 0).ravel(), rtol=1e-12, atol=1e-9)


def test_heat_mode_amplification():
    f = _cos_field(256)
    m = linear_model([0.0], [1.0])
    out = imex_step(f, m, 0.01)
    factor = out.values[0, 0] / f.values[0, 0]
    assert factor == pytest.approx(1 / (1 + 0.01 * (2 * np.pi) ** 2), abs=1e-4)
    assert factor == pytest.approx(0.7170, abs=1e-4)


def test_heat_mode_amplification_2d():
    f = _cos_field(64, dim=2)
    m = linear_model([0.0], [1.0])
    out = imex_step(f, m, 0.01)
    k2 = (2 * np.pi) ** 2
    factor = out.values[0, 0, 0] / f.values[0, 0, 0]
    # dimension splitting gives the product of the two one-dimensional factors
    assert factor == pytest.approx(1 / (1 + 0.01 * k2) ** 2, abs=2e-3)


def test_linear_decay_exact():
    g = Grid.from_spacing(1.0, 1 / 16, "periodic")
    rng = np.random.default_rng(3)
    f = Field(g, rng.random((1, 16)))
    m = linear_model([-1.0], [0.0])
    out = imex_step(f, m, 0.01)
    # the implicit part is the identity, so only forward-Euler rounding remains
    assert np.allclose(out.values, f.values * 0.99, rtol=2e-16, atol=0)


def test_time_constant_scales_rate():
    g = Grid.from_spacing(1.0, 1 / 16, "periodic")
    f = Field.uniform(g, [1.0, 1.0])
    m = linear_model([-1.0, -1.0], [0.0, 0.0], tau=(1.0, 4.0))
    out = imex_step(f, m, 0.01)
    assert out.values[0, 0] == pytest.approx(0.99, rel=1e-15)
    assert out.values[1, 0] == pytest.approx(1 - 0.0025, rel=1e-15)


def test_first_order_in_time():
    f = _cos_field(64)
    lam = float(np.real(np.fft.fft(laplacian_apply(f, 0))[1] / np.fft.fft(f.values[0])[1]))
    T = 0.2
    errs = []
    for dt in (0.002, 0.001, 0.0005):
        st_ = ImexStepper(f.grid, linear_model([0.0], [1.0]), dt)
        out = st_.run(f, int(round(T / dt)))
        errs.append(abs(out.values[0, 0] - np.exp(lam * T)))
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(2.0, abs=0.15)


@pytest.mark.parametrize("params", [Fhn3Params(), Gs3Params()])
def test_uniform_equilibrium_is_fixed_point(params):
    m = params.model()
    g = Grid.from_spacing((0.5,), 1e-2, "neumann")
    f = Field.uniform(g, background(m))
    out = ImexStepper(g, m, 0.05).run(f, 10)
    assert np.max(np.abs(out.values - f.values)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_neumann_diffusion_conserves_mean(seed, dim):
    g = Grid.from_spacing((1.0, 0.5)[:dim], 1 / 32, "neumann")
    rng = np.random.default_rng(seed)
    f = Field(g, rng.random((2,) + g.shape))
    m = linear_model([0.0, 0.0], [1e-2, 3e-3])
    out = ImexStepper(g, m, 0.1).run(f, 20)
    for c in range(2):
        assert g.mean(out.values[c]) == pytest.approx(g.mean(f.values[c]), abs=1e-10)


def test_stepper_is_deterministic():
    m = Fhn3Params().model()
    g = Grid.from_spacing(0.25, 5e-3, "periodic")
    x = g.coords(0)
    f = Field.uniform(g, background(m))
    f.values[0] += 2 * np.exp(-((x - 0.125) / 0.01) ** 2)
    a = ImexStepper(g, m, 0.05).run(f, 50)
    b = ImexStepper(g, m, 0.05).run(f, 50)
    assert np.array_equal(a.values, b.values)


def test_divergence_detected():
    g = Grid.from_spacing(1.0, 1 / 16, "periodic")
    m = linear_model([1e308], [0.0])
    with pytest.raises(DivergenceError), np.errstate(over="ignore"):
        imex_step(Field.uniform(g, [10.0]), m, 1.0)


def test_component_mismatch():
    g = Grid.from_spacing(1.0, 1 / 16)
    with pytest.raises(ValueError):
        imex_step(Field.uniform(g, [0.0]), Fhn3Params().model(), 0.1)
    with pytest.raises(ValueError):
        ImexStepper(g, linear_model([0.0], [1.0]), 0.0)
