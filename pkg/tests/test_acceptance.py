"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The verdicts are also collected by ``conftest.py`` and repeated in the
terminal summary.  PDE criteria run at the production resolution
(``dx = 5e-4``) and take minutes; they carry the ``slow`` marker.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from wiia.reduced import (
    UNIT_COEFFS,
    ReducedParams,
    appendix_a_initial,
    center_manifold_A,
    ep_coordinates,
    equilibria,
    find_mu2_critical,
    integrate,
    polar_ring,
    rhs_symmetric,
    ring_sectors,
    sstar_asymptotic,
    sstar_root,
)
from wiia.reduced.dynamics import _classify_cell

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DX = 5e-4


def _random_admissible(rng) -> ReducedParams:
    p11, p22, p12 = rng.uniform(0.2, 5.0), rng.uniform(0.2, 5.0), rng.uniform(0.05, 5.0)
    p21 = rng.uniform(0.05, 0.9) * p11 * p22 / p12
    M2 = rng.uniform(0.2, 5.0)
    det = p11 * p22 - p12 * p21
    bound = max(math.sqrt(3 * p21 / p22), 2 * p21 * math.sqrt(p11 * p12) / det)
    p = ReducedParams(p11=p11, p12=p12, p21=p21, p22=p22, M1=rng.uniform(0.2, 3.0), M2=M2,
                      M3=M2 * bound * rng.uniform(1.05, 3.0), alpha=rng.uniform(0.2, 3.0))
    r, th = 10 ** rng.uniform(-4, -2), rng.uniform(0, 2 * math.pi)
    return p.with_mu(r * math.cos(th), r * math.sin(th)).validate()


def test_criterion_01_equilibria_closed_forms(acceptance):
    rng = np.random.default_rng(20240101)
    worst, count = 0.0, 0
    for _ in range(50):
        p = _random_admissible(rng)
        for e in equilibria(p):
            if e.exists:
                worst = max(worst, float(np.max(np.abs(rhs_symmetric(e.coords, p)))))
                count += 1
    ok = acceptance(1, worst < 1e-13, f"max residual {worst:.2e} over {count} equilibria (bound 1e-13)")
    assert ok


def test_criterion_02_sstar_asymptotics(acceptance):
    # v* = 0.1 has no root for the unit coefficient set (16 alpha |M1| v*/M2 = 1.6),
    # so M2 = 4 is used; the unit set is checked at the two smaller speeds
    cases = [(ReducedParams(M2=4.0, M3=8.0), v) for v in (1e-1, 1e-2, 1e-3)]
    cases += [(UNIT_COEFFS, v) for v in (1e-2, 1e-3)]
    lines, ok = [], True
    scaled = []
    for p, v in cases:
        v_ref = p.M2 * math.log(2) ** 2 / (8 * p.alpha * abs(p.M1))
        err = abs(sstar_root(v, p) / sstar_asymptotic(v, p) - 1)
        ok &= err <= 3 * v / v_ref
        if p.M2 == 4.0:
            scaled.append(err / v)
        lines.append(f"M2={p.M2:g} v*={v:g}: {err:.3e} <= {3 * v / v_ref:.3e}")
    # linear shrinkage: err / v* settles to a constant
    ok &= abs(scaled[2] / scaled[1] - 1) < 0.1
    assert acceptance(2, bool(ok), "; ".join(lines))


def test_criterion_03_ring_sectors(acceptance):
    n = 256
    th, m1, m2 = polar_ring(1e-3, n)
    outcomes = [_classify_cell(a, b, UNIT_COEFFS) for a, b in zip(m1, m2)]
    sectors = ring_sectors(outcomes)
    labels = [s for s, _ in sectors]
    expected = ["standing", "preservation", "annihilation", "background"]
    k = labels.index("standing") if "standing" in labels else 0
    order = labels[k:] + labels[:k]
    cell = 2 * math.pi / n

    def first(label, after=0.0):
        idx = [i for i, o in enumerate(outcomes) if o == label and th[i] > after]
        return th[idx[0]] if idx else math.nan

    pres_start = first("preservation")
    t2 = math.pi + math.atan(UNIT_COEFFS.p21 / UNIT_COEFFS.p11)
    ann = [th[i] for i, o in enumerate(outcomes) if o == "annihilation"]
    ann_end = max(ann) + cell / 2 if ann else math.nan
    ok = order == expected
    ok &= abs(pres_start - cell / 2 - math.pi / 2) <= cell
    ok &= abs(ann_end - t2) <= cell
    detail = (f"sectors {sectors}; preservation starts {pres_start - cell / 2 - math.pi / 2:+.4f} rad "
              f"from mu1=0, annihilation ends {ann_end - t2:+.4f} rad from T2 (cell {cell:.4f})")
    assert acceptance(3, bool(ok), detail)


def test_criterion_04_separator(acceptance):
    mu1s = (-1e-3, -1e-4, -1e-5)
    res = [find_mu2_critical(m, UNIT_COEFFS) for m in mu1s]
    first = res[0]
    ok = UNIT_COEFFS.p21 / UNIT_COEFFS.p11 * mu1s[0] < first.mu2c < 1e-3
    ok &= first.closest_approach < 1e-3 * first.ep3_norm
    mags = [abs(r.mu2c) for r in res]
    ok &= mags[0] > mags[1] > mags[2]
    detail = (f"mu2c={[f'{r.mu2c:.6e}' for r in res]}; closest approach {first.closest_approach:.3e} "
              f"vs 1e-3*|EP3-|={1e-3 * first.ep3_norm:.3e}")
    assert acceptance(4, bool(ok), detail)


def test_criterion_05_center_manifold(acceptance):
    p = UNIT_COEFFS.with_mu(-1e-5, 0.01)
    tr = integrate(appendix_a_initial(p), p, 4e4, dense=True)
    t = np.linspace(0.0, tr.t[-1], 40001)
    v, A, s = tr.sol(t)
    # after the fast transient (10 / mu2) and where the interaction is felt
    mask = (t > 10 / p.mu2) & (s > 1e-9)
    errs = {}
    for variant in ("appendix", "main"):
        pred = center_manifold_A(s[mask], v[mask], p, variant)
        errs[variant] = float(np.max(np.abs(A[mask] - pred) / np.abs(A[mask])))
    best = min(errs, key=errs.get)
    detail = (f"max relative error in A: appendix {errs['appendix']:.3f}, main {errs['main']:.3f} "
              f"(bound 0.01); closer variant: {best}; {int(mask.sum())} samples")
    acceptance(5, errs[best] < 0.01, detail)
    assert errs[best] < 0.01, detail


# --- PDE criteria -------------------------------------------------------------


@pytest.fixture(scope="module")
def pde():
    from wiia.models import Fhn3Params
    from wiia.pulse import find_standing_pulse, gaussian_guess, pulse_grid

    g = pulse_grid(0.25, DX, "periodic")

    def standing(k4, tau, guess=None):
        m = Fhn3Params(k4=k4, tau=tau).model()
        return find_standing_pulse(m, guess.field() if guess is not None else gaussian_guess(m, g))

    return standing


@pytest.fixture(scope="module")
def dh_point(pde):
    from wiia.pulse import locate_dh_point

    return locate_dh_point(pde(2.965, 1220.0), ((2.95, 2.98), (1180.0, 1260.0)))


@pytest.mark.slow
def test_criterion_06_bifurcation_numbers(acceptance, pde, dh_point):
    from wiia.pulse import (
        continue_branch,
        detect_bifurcations,
        find_traveling_pulse,
        leading_spectrum,
        solve_at_speed,
        with_param,
    )

    checks = []
    p = pde(2.976, 1200.0)
    br = continue_branch(p, "k4", (2.96, 2.99), ds=1e-3, max_steps=20, direction=-1)
    drift = [b for b in detect_bifurcations(br) if b.kind == "drift"]
    k_drift = drift[0].params["k4"] if drift else math.nan
    checks.append((abs(k_drift - 2.973) <= 0.005, f"drift k4={k_drift:.5f} (2.973+-0.005)"))

    p = pde(2.95, 1262.5)
    br = continue_branch(p, "k4", (2.94, 2.96), ds=1e-3, max_steps=40, direction=-1)
    d2 = [b for b in detect_bifurcations(br) if b.kind == "drift"][0]
    tp = solve_at_speed(d2.profile, 2e-5, "k4")
    tb = continue_branch(tp, "k4", (2.946, 2.96), ds=1e-3, max_steps=60, direction=1)
    hopf = [b for b in detect_bifurcations(tb) if b.kind == "hopf"]
    k_hopf = hopf[0].params["k4"] if hopf else math.nan
    checks.append((abs(k_hopf - 2.954) <= 0.005, f"Hopf k4={k_hopf:.5f} (2.954+-0.005)"))

    near = min(tb.points, key=lambda q: abs(q.param - 2.9533))
    utp = find_traveling_pulse(with_param(p.model, "k4", 2.9533), near.profile, near.c)
    lam = leading_spectrum(utp).lam_hopf
    ok_lam = abs(lam.real / 1.83e-3 - 1) <= 0.1 and abs(lam.imag / 0.1937 - 1) <= 0.1
    checks.append((ok_lam, f"UTP lambda={lam.real:.4e}{lam.imag:+.5f}i (1.83e-3+0.1937i, 10%)"))

    k_dh, tau_dh = dh_point.params["k4"], dh_point.params["tau"]
    ok_dh = abs(k_dh - 2.965) <= 0.01 and abs(tau_dh - 1220) <= 40
    checks.append((ok_dh, f"DH=({k_dh:.5f}, {tau_dh:.3f}) (2.965+-0.01, 1220+-40)"))
    ok = all(c for c, _ in checks)
    assert acceptance(6, ok, "; ".join(d for _, d in checks))


@pytest.mark.slow
def test_criterion_07_interaction_constants(acceptance, dh_point):
    from wiia.models import Fhn3Params
    from wiia.pulse import find_standing_pulse, gaussian_guess, interaction_constants, leading_spectrum, pulse_grid

    g = pulse_grid(1.0, DX, "neumann")
    m = Fhn3Params(k4=dh_point.params["k4"], tau=dh_point.params["tau"]).model()
    p = find_standing_pulse(m, gaussian_guess(m, g))
    ic = interaction_constants(p, leading_spectrum(p))
    rel = abs(ic.alpha_adjoint / ic.alpha - 1)
    ok = ic.M2 > 0 and ic.M3 > 0 and rel < 0.05
    detail = (f"M1={ic.M1:.4g} M2={ic.M2:.4g} M3={ic.M3:.4g}; alpha S={ic.alpha:.4f}, "
              f"adjoint={ic.alpha_adjoint:.4f} ({100 * rel:.2f}% apart, bound 5%)")
    assert acceptance(7, ok, detail)


def _collide(k4):
    from wiia.collision import harvest_traveling_pulse, run_collision
    from wiia.models import Fhn3Params

    seed = harvest_traveling_pulse(Fhn3Params(k4=k4, tau=1350.0).model(), dx=DX)
    return run_collision(seed, h0=2.0, length=4.0)


@pytest.mark.slow
def test_criterion_08_collision_ordering(acceptance):
    pres = _collide(3.2)
    ann = _collide(2.955)
    sp, sa = pres.summary(), ann.summary()
    ok = pres.outcome == "preservation" and ann.outcome == "annihilation"
    ok &= sp["h_min"] < sa["h_min"]
    ok &= sa["envelope_growth"] is not None and sa["envelope_growth"] > 0
    detail = (f"k4=3.2: {pres.outcome}, h_min={sp['h_min']:.4f}; k4=2.955: {ann.outcome}, "
              f"h_min={sa['h_min']:.4f}, envelope growth {sa['envelope_growth']:.3e}/time unit")
    assert acceptance(8, bool(ok), detail)


@pytest.mark.slow
def test_criterion_09_gs3_spot(acceptance, tmp_path):
    from wiia.cli import main
    from wiia.output import RunManifest, read_csv

    out = tmp_path / "spot"
    code = main(["pde-run", "--config", str(CONFIGS / "gs3_spot.cfg"), "--out", str(out)])
    res = RunManifest.read(out / "manifest.json").outcome
    rows = read_csv(out / "series.csv")
    t = np.array([float(r["t"]) for r in rows])
    cx = np.array([float(r["centroid_x"]) for r in rows])
    steps = np.diff(cx)
    ok = code == 0 and res["outcome"] == "pattern" and t[-1] >= 200.0
    ok &= res["min_spots"] == res["max_spots"] == 1
    ok &= res["max_area_frac"] < 0.05 and math.isfinite(res["max_peak"])
    ok &= res["centroid_shift"] > 2 ** -5 and bool(np.all(steps > 0))
    detail = (f"t_end={t[-1]:g}, spots {res['min_spots']}..{res['max_spots']}, area <= "
              f"{res['max_area_frac']:.4f}, peak {res['max_peak']:.3f}, centroid moved "
              f"{res['centroid_shift']:.3f}")
    assert acceptance(9, bool(ok), detail)


def test_criterion_10_numerics(acceptance):
    from wiia.grid import Field, Grid, ImexStepper, imex_step, laplacian_apply
    from wiia.models import Fhn3Params, Gs3Params, background, linear_model
    from wiia.pulse import find_standing_pulse, gaussian_guess, pulse_grid, translation_residual

    parts = []
    errs = []
    for n in (64, 128, 256):
        g = Grid.from_spacing(1.0, 1 / n, "periodic")
        u = np.cos(2 * np.pi * g.coords(0))
        errs.append(np.max(np.abs(laplacian_apply(Field(g, u[None]), 0) + (2 * np.pi) ** 2 * u)))
    order = math.log2(errs[-2] / errs[-1])
    parts.append((abs(order - 2) < 0.1, f"Laplacian order {order:.3f}"))

    fix = 0.0
    for prm in (Fhn3Params(), Gs3Params()):
        m = prm.model()
        g = Grid.from_spacing(0.5, 1e-2, "neumann")
        f = Field.uniform(g, background(m))
        fix = max(fix, float(np.max(np.abs(ImexStepper(g, m, 0.05).run(f, 10).values - f.values))))
    parts.append((fix < 1e-12, f"fixed point drift {fix:.1e}"))

    g = Grid.from_spacing(1.0, 1 / 16, "periodic")
    f = Field(g, np.random.default_rng(3).random((1, 16)))
    dec = float(np.max(np.abs(imex_step(f, linear_model([-1.0], [0.0]), 0.01).values / (0.99 * f.values) - 1)))
    parts.append((dec <= 2.3e-16, f"linear decay rel err {dec:.1e}"))

    rng = np.random.default_rng(42)
    m = Fhn3Params().model()
    worst = 0.0
    for _ in range(50):
        U = rng.uniform(-3, 3, (3, 1))
        J = m.jacobian(U)[:, :, 0]
        for j in range(3):
            h = 1e-6 * (1 + abs(U[j, 0]))
            e = np.zeros((3, 1))
            e[j] = h
            fd = (m.kinetics(U + e) - m.kinetics(U - e))[:, 0] / (2 * h)
            worst = max(worst, float(np.max(np.abs(J[:, j] - fd) / np.maximum(np.abs(J[:, j]), 1))))
    parts.append((worst < 1e-5, f"Jacobian fd {worst:.1e}"))

    gp = pulse_grid(0.25, DX, "periodic")
    tres = []
    for k4, tau in ((3.0, 1200.0), (2.965, 1220.0)):
        mm = Fhn3Params(k4=k4, tau=tau).model()
        tres.append(translation_residual(find_standing_pulse(mm, gaussian_guess(mm, gp))))
    parts.append((max(tres) < 10 * DX**2, f"translation mode {max(tres):.2e} < {10 * DX**2:.2e}"))
    ok = all(c for c, _ in parts)
    assert acceptance(10, ok, "; ".join(d for _, d in parts))
