"""Reduced ODE systems for weakly interacting pulses near a drift-Hopf point."""

from .analysis import (
    InvariantSetX,
    center_manifold_A,
    interaction_side,
    invariant_set_X,
    nullcline_G,
    nullcline_H,
    sstar_asymptotic,
    sstar_function,
    sstar_root,
)
from .dynamics import (
    CriticalResult,
    OdePhaseDiagram,
    Trajectory,
    UndecidedError,
    appendix_a_initial,
    classify_ode,
    closest_approach_to_ep3,
    default_horizon,
    find_mu2_critical,
    integrate,
    polar_ring,
    ring_sectors,
    sweep_ode_phase_diagram,
)
from .system import (
    UNIT_COEFFS,
    REGIONS,
    Equilibrium,
    ReducedParams,
    ep_coordinates,
    equilibria,
    is_stable_restricted,
    jacobian_single,
    jacobian_symmetric,
    region_id,
    rhs_single,
    rhs_symmetric,
    rhs_two_pulse,
    stability,
    unstable_eigenvector_ep2,
)
