"""Reduced interaction ODEs: closed forms, flows, outcomes and the separator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiia.reduced import (
    UNIT_COEFFS,
    ReducedParams,
    UndecidedError,
    appendix_a_initial,
    center_manifold_A,
    classify_ode,
    ep_coordinates,
    equilibria,
    find_mu2_critical,
    integrate,
    interaction_side,
    invariant_set_X,
    is_stable_restricted,
    jacobian_symmetric,
    nullcline_H,
    polar_ring,
    region_id,
    rhs_single,
    rhs_symmetric,
    rhs_two_pulse,
    ring_sectors,
    sstar_asymptotic,
    sstar_function,
    sstar_root,
    stability,
    unstable_eigenvector_ep2,
)


@st.composite
def admissible_params(draw, mu=True):
    """Coefficient sets satisfying the sign, criticality and forcing conditions."""
    p11 = draw(st.floats(0.2, 5.0))
    p22 = draw(st.floats(0.2, 5.0))
    p12 = draw(st.floats(0.05, 5.0))
    ratio = draw(st.floats(0.05, 0.9))
    p21 = ratio * p11 * p22 / p12
    M2 = draw(st.floats(0.2, 5.0))
    det = p11 * p22 - p12 * p21
    bound = max(math.sqrt(3 * p21 / p22), 2 * p21 * math.sqrt(p11 * p12) / det)
    M3 = M2 * bound * draw(st.floats(1.05, 3.0))
    M1 = draw(st.floats(0.2, 3.0))
    alpha = draw(st.floats(0.2, 3.0))
    p = ReducedParams(p11=p11, p12=p12, p21=p21, p22=p22, M1=M1, M2=M2, M3=M3, alpha=alpha)
    if mu:
        r = draw(st.floats(1e-4, 1e-2))
        th = draw(st.floats(0.0, 2 * math.pi))
        p = p.with_mu(r * math.cos(th), r * math.sin(th))
    return p.validate()


# --- right-hand sides -------------------------------------------------------


def test_rhs_symmetric_origin_and_ep2():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0005)
    assert np.array_equal(rhs_symmetric((0, 0, 0), p), np.zeros(3))
    v2 = math.sqrt(0.001)
    assert np.allclose(rhs_symmetric((v2, 0, 0), p), 0.0, atol=1e-18)


def test_rhs_symmetric_hand_value():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0)
    f = rhs_symmetric((0.05, 0.0, 1e-6), p)
    assert f[0] == pytest.approx(-7.6e-5, rel=1e-12)


@given(admissible_params(), st.floats(-0.1, 0.1), st.floats(0, 0.1), st.floats(0, 1e-3))
def test_two_pulse_reduces_to_symmetric(p, v, A, s):
    f5 = rhs_two_pulse((v, A, -v, A, s), p)
    f3 = rhs_symmetric((v, A, s), p)
    assert f5[2] == -f5[0]
    assert f5[3] == f5[1]
    assert f5[0] == pytest.approx(f3[0], rel=1e-12, abs=1e-300)
    assert f5[1] == pytest.approx(f3[1], rel=1e-12, abs=1e-300)
    assert f5[4] == pytest.approx(f3[2], rel=1e-12, abs=1e-300)


def test_two_pulse_decouples_at_s0():
    p = UNIT_COEFFS.with_mu(-0.002, 0.001)
    x = (0.03, 0.02, -0.01, 0.05, 0.0)
    f = rhs_two_pulse(x, p)
    assert np.allclose(f[:2], rhs_single(x[:2], p), rtol=0, atol=0)
    assert np.allclose(f[2:4], rhs_single(x[2:4], p), rtol=0, atol=0)
    assert f[4] == 0.0


@given(admissible_params(), st.floats(-0.2, 0.2), st.floats(0, 0.2))
def test_single_pulse_field_is_odd_in_v(p, v, A):
    f = rhs_single((v, A), p)
    g = rhs_single((-v, A), p)
    assert g[0] == -f[0]
    assert g[1] == f[1]


@given(admissible_params(), st.floats(-0.2, 0.2), st.floats(0, 0.2),
       st.just(0.0) | st.floats(1e-12, 0.05))
def test_s_rate_sign_matches_interaction_side(p, v, A, s):
    sdot = rhs_symmetric((v, A, s), p)[2]
    side = interaction_side(v, s, p)
    if s == 0:
        assert sdot == 0
    else:
        assert np.sign(sdot) == side


@given(admissible_params(), st.floats(-0.2, 0.2), st.floats(0, 0.2), st.floats(0, 0.05))
def test_jacobian_matches_finite_differences(p, v, A, s):
    x = np.array([v, A, s])
    J = jacobian_symmetric(x, p)
    h = 1e-7
    Jfd = np.column_stack([(rhs_symmetric(x + h * e, p) - rhs_symmetric(x - h * e, p)) / (2 * h)
                           for e in np.eye(3)])
    assert np.allclose(J, Jfd, rtol=1e-5, atol=1e-8)


# --- equilibria and regions -------------------------------------------------


def test_equilibria_closed_forms_unit_coeffs():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0005)
    c = ep_coordinates(p)
    assert c["EP2+"][0] == pytest.approx(0.0316228, abs=1e-7)
    assert c["EP3+"][0] == pytest.approx(0.1095445, abs=1e-7)
    assert c["EP3+"][1] == pytest.approx(0.1048809, abs=1e-7)
    assert c["EP3-"] == (-c["EP3+"][0], c["EP3+"][1])


def test_only_origin_in_region_vi():
    p = UNIT_COEFFS.with_mu(0.001, -0.001)
    ex = {e.label for e in equilibria(p) if e.exists}
    assert ex == {"EP0"}
    assert region_id(p.mu1, p.mu2, p) == "vi"


def test_ep3_meets_ep2_on_t2():
    mu1 = -0.001
    p = UNIT_COEFFS.with_mu(mu1, UNIT_COEFFS.p21 / UNIT_COEFFS.p11 * mu1)
    c = ep_coordinates(p)
    assert c["EP3+"][1] == pytest.approx(0.0, abs=1e-12)
    assert c["EP3+"][0] == pytest.approx(c["EP2+"][0], rel=1e-12)


@settings(max_examples=50)
@given(admissible_params())
def test_equilibria_residuals(p):
    for e in equilibria(p):
        if e.exists:
            assert np.max(np.abs(rhs_symmetric(e.coords, p))) < 1e-13


def test_region_examples():
    p = UNIT_COEFFS
    mu1, mu2 = 0.001 * math.cos(1.8), 0.001 * math.sin(1.8)
    assert region_id(mu1, mu2, p) == "iii"
    eps = 1e-4
    assert region_id(eps, -eps, p) == "vi"
    assert region_id(-eps, 0.5 * p.p21 / p.p11 * (-eps), p) == "iv"
    # the fourth-quadrant point below T2 is region v
    assert region_id(-eps, 2.0 * p.p21 / p.p11 * (-eps), p) == "v"
    with pytest.raises(ValueError):
        region_id(0.0, 0.0, p)


def test_regions_cycle_counterclockwise():
    th, m1, m2 = polar_ring(1e-3, 720)
    seq = [region_id(a, b, UNIT_COEFFS) for a, b in zip(m1, m2)]
    labels = [r for r, _ in ring_sectors(seq)]
    k = labels.index("i")
    assert labels[k:] + labels[:k] == ["i", "ii", "iii", "iv", "v", "vi"]


# --- stability --------------------------------------------------------------


def test_ep3_minus_sign_pattern_in_regions_iii_iv():
    for mu1, mu2 in [(-2.27e-4, 9.74e-4), (-1e-3, 2e-5)]:
        p = UNIT_COEFFS.with_mu(mu1, mu2)
        assert region_id(mu1, mu2, p) in ("iii", "iv")
        e = next(e for e in equilibria(p) if e.label == "EP3-")
        lam = np.sort(e.eigenvalues.real)[::-1]
        assert lam[0] > 0 and lam[1] < 0 and lam[2] < 0


def test_ep2_plus_unstable_eigenvalue():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0005)
    e = next(e for e in equilibria(p) if e.label == "EP2+")
    assert np.max(e.eigenvalues.real) == pytest.approx(0.0632456, abs=1e-7)


def test_ep2_plus_eigenvector_slope():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0005)
    x, y, z = unstable_eigenvector_ep2(p)
    J = jacobian_symmetric((math.sqrt(0.001), 0, 0), p)
    lam = 2 * p.alpha * math.sqrt(0.001)
    assert np.allclose(J @ [x, y, z], lam * np.array([x, y, z]), rtol=1e-12, atol=1e-15)
    assert y / x < -p.M3 / p.M2


@settings(max_examples=30)
@given(admissible_params())
def test_closed_form_eigenvalues_agree_with_jacobian(p):
    for e in equilibria(p):
        if not e.exists:
            continue
        num = np.sort_complex(np.linalg.eigvals(jacobian_symmetric(e.coords, p)))
        assert np.allclose(np.sort_complex(stability(e, p)), num, atol=1e-12)


def test_table_stabilities():
    # restricted (s = 0) stability of the single pulse states in each region
    expect = {
        "i": {"EP0"},
        "ii": {"EP0"},
        "iii": {"EP2+", "EP2-"},
        "iv": {"EP2+", "EP2-"},
        "v": set(),
        "vi": set(),
    }
    th, m1, m2 = polar_ring(1e-3, 360)
    for a, b in zip(m1, m2):
        p = UNIT_COEFFS.with_mu(a, b)
        r = region_id(a, b, p)
        stable = {lab for lab in ("EP0", "EP1", "EP2+", "EP2-", "EP3+", "EP3-")
                  if is_stable_restricted(lab, p)}
        assert stable == expect[r], (r, a, b, stable)


# --- integration and outcomes ------------------------------------------------


def test_integrate_from_equilibrium_stays_put():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0005)
    x0 = np.array([math.sqrt(0.001), 0.0, 0.0])
    tr = integrate(x0, p, 1e4)
    assert np.max(np.abs(tr.y - x0[:, None])) < 1e-12


def test_integrate_rejects_bad_horizon():
    with pytest.raises(ValueError):
        integrate((0, 0, 0), UNIT_COEFFS, 0.0)


def test_ring_trajectories():
    assert classify_ode(1e-3 * math.cos(1.8), 1e-3 * math.sin(1.8), UNIT_COEFFS) == "preservation"
    q = UNIT_COEFFS.with_mu(1e-3 * math.cos(4.7), 1e-3 * math.sin(4.7))
    tr = integrate(appendix_a_initial(q), q, 1e7)
    assert tr.event == "divergence"
    assert abs(tr.y[1, -1]) == pytest.approx(1.0, rel=1e-9)


@pytest.mark.parametrize(
    "mu1, mu2, outcome",
    [
        (0.0005, 0.0005, "standing"),
        (-0.001, 0.0008, "preservation"),
        (-0.001, -5e-5 + 1e-7, "annihilation"),
    ],
)
def test_classify_examples(mu1, mu2, outcome):
    assert classify_ode(mu1, mu2, UNIT_COEFFS) == outcome


def test_fourth_quadrant_gives_background():
    assert classify_ode(0.0007, -0.0007, UNIT_COEFFS) == "background"


def test_undecided_after_doubled_horizon():
    with pytest.raises(UndecidedError):
        classify_ode(-0.001, 0.0008, UNIT_COEFFS, horizon=1.0)


def test_outcome_independent_of_amplitude_sign():
    for mu1, mu2 in [(-0.001, 0.0008), (-0.001, -4e-5)]:
        q = UNIT_COEFFS.with_mu(mu1, mu2)
        x0 = appendix_a_initial(q)
        flipped = x0 * np.array([1, -1, 1])
        a, b = integrate(x0, q, 1e6), integrate(flipped, q, 1e6)
        assert a.event == b.event


def test_smax_attained_at_collision():
    q = UNIT_COEFFS.with_mu(-0.001, 0.0008)
    tr = integrate(appendix_a_initial(q), q, 1e6)
    assert tr.event == "preservation"
    assert tr.s_at_collision == pytest.approx(tr.s_max, rel=1e-6)


@pytest.mark.parametrize("mu1", [-1e-4, -1e-5, -1e-6])
def test_preservation_persists_toward_drift_line(mu1):
    assert classify_ode(mu1, 0.001, UNIT_COEFFS) == "preservation"


# --- s* -------------------------------------------------------------------


def test_sstar_example():
    s = sstar_root(0.01, UNIT_COEFFS)
    # the first correction is linear in v*; v_ref is its natural scale
    v_ref = UNIT_COEFFS.M2 * math.log(2) ** 2 / (8 * UNIT_COEFFS.alpha * abs(UNIT_COEFFS.M1))
    assert abs(s / (16e-4 / math.log(2)) - 1) < 3 * 0.01 / v_ref
    assert abs(sstar_function(s, 0.01, UNIT_COEFFS)) < 1e-14


def test_sstar_quadratic_scaling():
    ratios = [sstar_root(2 * v, UNIT_COEFFS) / sstar_root(v, UNIT_COEFFS) for v in (1e-3, 1e-4, 1e-5)]
    errs = [abs(r - 4) for r in ratios]
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-3


def test_sstar_rejects_large_velocity():
    with pytest.raises(ValueError):
        sstar_root(0.1, UNIT_COEFFS)
    with pytest.raises(ValueError):
        sstar_root(0.0, UNIT_COEFFS)


def test_sstar_asymptotic_value():
    assert sstar_asymptotic(0.01, UNIT_COEFFS) == pytest.approx(2.3083e-3, rel=1e-4)


# --- absorbing set --------------------------------------------------------


def test_H_at_ep3():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0005)
    v3, a3 = ep_coordinates(p)["EP3+"]
    assert nullcline_H(-v3, p) == pytest.approx(a3, rel=1e-15)


def test_X_corner_on_t2():
    mu1 = -0.001
    p = UNIT_COEFFS.with_mu(mu1, UNIT_COEFFS.p21 / UNIT_COEFFS.p11 * mu1)
    X = invariant_set_X(p, a_inf=1.0)
    v2 = math.sqrt(0.001)
    assert X.branch == "X"
    assert X.v_hat == pytest.approx(3 * v2, rel=1e-12)
    assert X.A_hat == pytest.approx(2 * v2, rel=1e-12)


def test_X_rejects_bad_a_inf():
    p = UNIT_COEFFS.with_mu(-0.001, 0.0)
    with pytest.raises(ValueError):
        invariant_set_X(p, a_inf=0.1)


@settings(max_examples=20, deadline=None)
@given(admissible_params(mu=False), st.floats(1e-6, 1.0), st.floats(1e-4, 1e-2))
def test_X_boundary_flow_points_inward(p, frac, r):
    mu1 = -r
    lo = p.p21 / p.p11 * mu1
    mu2 = lo + frac * (r - lo)
    q = p.with_mu(mu1, mu2)
    X = invariant_set_X(q)
    rng = np.random.default_rng(0)
    n = 100
    s = rng.uniform(0, 1e-3, n)
    v = -X.v_hat * (1 + 2 * rng.random(n))
    A = X.F(v)
    assert np.all(X.boundary_normal_flux(v, A, s, "left") > -1e-15)
    vb = -X.v_hat * rng.random(n)
    assert np.all(X.boundary_normal_flux(vb, np.full(n, X.A_hat), s, "bottom") > -1e-15)
    assert np.all(X.boundary_normal_flux(np.zeros(n), X.A_hat * (1 + rng.random(n)), s, "right") >= 0)


def test_entry_into_X_leads_to_divergence():
    mu1 = -0.001
    q = UNIT_COEFFS.with_mu(mu1, -4e-5)
    X = invariant_set_X(q)
    tr = integrate(appendix_a_initial(q), q, 1e7)
    assert tr.event == "divergence"
    inside = X.contains(tr.y[0], tr.y[1], tr.y[2])
    k = int(np.argmax(inside))
    assert inside[k]
    assert np.all(np.diff(tr.y[1, k:]) >= -1e-15)


# --- slow manifold ----------------------------------------------------------


def test_center_manifold_values():
    p = UNIT_COEFFS.with_mu(-1e-5, 0.01)
    assert center_manifold_A(0.0, 0.3, p) == 0.0
    assert center_manifold_A(1e-6, 0.0, p) == pytest.approx(9.8e-5, rel=1e-12)
    with pytest.raises(ValueError):
        center_manifold_A(1e-6, 0.0, p, variant="other")
    with pytest.raises(ValueError):
        center_manifold_A(1e-6, 0.0, UNIT_COEFFS.with_mu(-1e-5, -0.01))


# --- separator --------------------------------------------------------------


def test_mu2_critical_bracket_errors():
    with pytest.raises(ValueError):
        find_mu2_critical(-0.001, UNIT_COEFFS, bracket=(0.0008, 0.001))
    with pytest.raises(ValueError):
        find_mu2_critical(0.001, UNIT_COEFFS)


def test_mu2_critical_converges():
    res = find_mu2_critical(-0.001, UNIT_COEFFS)
    lo, hi = res.bracket
    assert -5e-5 < res.mu2c < 1e-3
    assert hi - lo < 1e-10
