import itertools
import math

import numpy as np
import pytest
from compliance_oracle import exact_reference, rk4_reference
from hypothesis import given
from hypothesis import strategies as st

from latchsim.funnel import (
    ACCEPTED,
    CLOSED_EMPTY,
    CLOSED_TRAPPED,
    ONE_DOF,
    OPEN,
    REJECTED,
    TWO_DOF,
    ComplianceParams,
    ComplianceState,
    FunnelGeometry,
    FunnelState,
    ReceptorFault,
    acceptance_check,
    apertures_for_offset,
    close_receptor,
    compliance_accel,
    compliance_energy,
    receptor_event,
    set_aperture,
    steering_offset,
    step_compliance,
)

fractions = st.floats(0, 1)


def test_acceptance_area():
    assert FunnelGeometry().acceptance_area() == pytest.approx(5026.55, abs=0.01)


def test_geometry_validation():
    with pytest.raises(ValueError):
        FunnelGeometry(stud_radius=40.0)
    with pytest.raises(ValueError):
        FunnelGeometry(cone_height=0.0)


@pytest.mark.parametrize("offset, expected", [
    ((0, 0), ACCEPTED), ((31.0, 0), ACCEPTED), ((-31.0, 0), ACCEPTED), ((32.0, 0), REJECTED), ((0, 31.5), REJECTED),
])
def test_acceptance_boundary_fully_open(offset, expected):
    assert acceptance_check(FunnelGeometry(), FunnelState(), offset) == expected


@given(st.floats(1e-3, 1))
def test_centred_stud_accepted_at_any_opening(a):
    assert acceptance_check(FunnelGeometry(), FunnelState(aperture_left=a, aperture_right=a), (0, 0)) == ACCEPTED


def test_closed_funnel_has_no_clearance():
    state = set_aperture(FunnelState(), 0.0, 0.0)
    assert acceptance_check(FunnelGeometry(), state, (1, 0)) == REJECTED


def test_asymmetric_acceptance_uses_the_stud_side():
    state = set_aperture(FunnelState(mode=TWO_DOF), 1.0, 0.2)
    geom = FunnelGeometry()
    assert acceptance_check(geom, state, (25.0, 0)) == ACCEPTED
    assert acceptance_check(geom, state, (-25.0, 0)) == REJECTED
    assert acceptance_check(geom, state, (-0.2 * 31, 0)) == ACCEPTED


def test_set_aperture_modes():
    one = set_aperture(FunnelState(mode=ONE_DOF), 0.3, 0.9)
    assert (one.aperture_left, one.aperture_right) == (0.3, 0.3)
    two = set_aperture(FunnelState(mode=TWO_DOF), 0.2, 0.8)
    assert (two.aperture_left, two.aperture_right) == (0.2, 0.8)
    with pytest.raises(ValueError):
        set_aperture(FunnelState(), 1.2, 0.5)
    with pytest.raises(ValueError):
        set_aperture(FunnelState(), 0.5, -0.1)


@given(st.lists(st.tuples(fractions, fractions), max_size=30))
def test_one_dof_never_asymmetric(commands):
    s = FunnelState(mode=ONE_DOF)
    for left, right in commands:
        s = set_aperture(s, left, right)
        assert s.aperture_left == s.aperture_right


RECEPTOR_TABLE = {
    # (state, stud, release) -> (new state, emits LatchEvent) ; None = fault
    (OPEN, False, False): (OPEN, False),
    (OPEN, True, False): (CLOSED_TRAPPED, True),
    (OPEN, False, True): (OPEN, False),
    (OPEN, True, True): (OPEN, False),
    (CLOSED_EMPTY, False, False): (CLOSED_EMPTY, False),
    (CLOSED_EMPTY, True, False): None,
    (CLOSED_EMPTY, False, True): (OPEN, False),
    (CLOSED_EMPTY, True, True): (OPEN, False),
    (CLOSED_TRAPPED, False, False): (CLOSED_TRAPPED, False),
    (CLOSED_TRAPPED, True, False): (CLOSED_TRAPPED, False),
    (CLOSED_TRAPPED, False, True): (OPEN, False),
    (CLOSED_TRAPPED, True, True): (OPEN, False),
}


@pytest.mark.parametrize("state, stud, release", list(itertools.product((OPEN, CLOSED_EMPTY, CLOSED_TRAPPED),
                                                                        (False, True), (False, True))))
def test_receptor_transitions(state, stud, release):
    expected = RECEPTOR_TABLE[(state, stud, release)]
    s = FunnelState(receptor=state)
    if expected is None:
        with pytest.raises(ReceptorFault):
            receptor_event(s, stud_at_socket=stud, release=release)
        return
    new, event = receptor_event(s, stud_at_socket=stud, release=release, time=1.5, latch_pose=(500, 2, 1))
    assert new.receptor == expected[0]
    assert (event is not None) == expected[1]
    if event is not None:
        assert (event.time, event.d_x, event.d_y, event.yaw_rel) == (1.5, 500, 2, 1)


def test_close_receptor_only_from_open():
    assert close_receptor(FunnelState()).receptor == CLOSED_EMPTY
    assert close_receptor(FunnelState(receptor=CLOSED_TRAPPED)).receptor == CLOSED_TRAPPED


def _trapped(mode, left, right):
    return FunnelState(mode=mode, aperture_left=left, aperture_right=right, receptor=CLOSED_TRAPPED)


def test_steering_offset():
    geom = FunnelGeometry()
    assert steering_offset(_trapped(TWO_DOF, 0.4, 0.4), geom) == 0.0
    assert steering_offset(_trapped(TWO_DOF, 1.0, 0.0), geom) == pytest.approx(10.0)
    assert steering_offset(_trapped(TWO_DOF, 0.8, 0.2), geom) == pytest.approx(6.0)
    assert steering_offset(_trapped(ONE_DOF, 0.5, 0.5), geom) == 0.0
    with pytest.raises(ValueError):
        steering_offset(FunnelState(mode=TWO_DOF), geom)


@given(st.floats(-10, 10))
def test_apertures_for_offset_inverts_steering(offset):
    left, right = apertures_for_offset(offset)
    assert steering_offset(_trapped(TWO_DOF, left, right)) == pytest.approx(offset, abs=1e-9)


def test_apertures_for_six_degrees():
    assert apertures_for_offset(6.0) == pytest.approx((0.8, 0.2))


# -- compliance -------------------------------------------------------------


def _integrate(params, r, T, dt, f=0.0, state=None):
    s = state or ComplianceState()
    for _ in range(int(round(T / dt))):
        s = step_compliance(params, s, r, f, f, dt)
    return s


def test_rest_stays_at_rest():
    assert _integrate(ComplianceParams(), 0.0, 0.5, 1e-3).values() == (0.0,) * 8


def test_step_compliance_validation():
    with pytest.raises(ValueError):
        step_compliance(ComplianceParams(), ComplianceState(), 0.0, 0, 0, 0.0)
    with pytest.raises(ValueError):
        step_compliance(ComplianceParams(), ComplianceState(x_s=math.nan), 0.0, 0, 0, 1e-3)
    with pytest.raises(ValueError):
        ComplianceParams(k_s=0)


def test_fine_step_oracle_agrees_with_exact_solution():
    p = ComplianceParams()
    for T in (0.01, 0.05, 0.5):
        np.testing.assert_allclose(rk4_reference(p, 0.01, 0.0, T, 1e-6), exact_reference(p, 0.01, 0.0, T),
                                   atol=1e-9)


@pytest.mark.parametrize("dt, T", [(1e-3, 1.0), (1e-3, 2.0), (1e-4, 0.02), (1e-4, 0.1)])
def test_step_input_matches_fine_step_reference(dt, T):
    p = ComplianceParams()
    r = 0.01
    s = _integrate(p, r, T, dt)
    ref = rk4_reference(p, r, 0.0, T, dt / 1000)
    # both arm pairs see the same input; displacements within 1% of the step
    for got in ((s.x_s, s.x_us), (s.x_s_opp, s.x_us_opp)):
        np.testing.assert_allclose(got, ref[:2], atol=0.01 * r)


def test_step_input_settles_at_the_input():
    ref = exact_reference(ComplianceParams(), 0.01, 0.0, 5.0)
    assert ref[:2] == pytest.approx((0.01, 0.01), abs=1e-9)
    s = _integrate(ComplianceParams(), 0.01, 5.0, 1e-3)
    assert (s.x_s, s.x_us) == pytest.approx((0.01, 0.01), abs=1e-6)


def test_actuator_term_matches_reference():
    p = ComplianceParams()
    s = _integrate(p, 0.005, 0.05, 1e-4, f=0.02)
    ref = rk4_reference(p, 0.005, 0.02, 0.05, 1e-7)
    np.testing.assert_allclose((s.x_s, s.x_us), ref[:2], atol=0.01 * 0.005)


@pytest.mark.parametrize("verbatim", [True, False])
def test_undamped_energy_conserved(verbatim):
    p = ComplianceParams(b_s=0.0, force_as_velocity_input=verbatim)
    r, dt = 0.01, 1e-4
    s = ComplianceState()
    e0 = compliance_energy(p, s, r)
    worst = 0.0
    for _ in range(int(round(10.0 / dt))):
        s = step_compliance(p, s, r, 0.0, 0.0, dt)
        worst = max(worst, abs(compliance_energy(p, s, r) - e0))
    assert worst / e0 < 0.01


@given(st.floats(-0.02, 0.02), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.02, 0.02))
def test_conventional_damper_dissipates(r, vs, vus, x0):
    p = ComplianceParams(force_as_velocity_input=False)
    dt = 1e-3
    s = ComplianceState(x_s=x0, xd_s=vs, xd_us=vus, x_s_opp=-x0, xd_s_opp=vus, xd_us_opp=vs)
    e = compliance_energy(p, s, r, dt)
    for _ in range(200):
        s = step_compliance(p, s, r, 0.0, 0.0, dt)
        e1 = compliance_energy(p, s, r, dt)
        assert e1 <= e + 1e-12 * max(1.0, e)
        e = e1


def test_discrete_energy_is_exact_invariant_without_damping():
    p = ComplianceParams(b_s=0.0)
    dt = 1e-3
    s = ComplianceState(xd_s=0.2)
    e0 = compliance_energy(p, s, 0.01, dt)
    for _ in range(5000):
        s = step_compliance(p, s, 0.01, 0.0, 0.0, dt)
    assert compliance_energy(p, s, 0.01, dt) == pytest.approx(e0, rel=1e-10)


def test_verbatim_damper_can_inject_energy():
    p = ComplianceParams(force_as_velocity_input=True)
    dt = 1e-3
    s = ComplianceState(xd_s=0.3)
    energies = [compliance_energy(p, s, 0.01, dt)]
    for _ in range(2000):
        s = step_compliance(p, s, 0.01, 0.0, 0.0, dt)
        energies.append(compliance_energy(p, s, 0.01, dt))
    assert max(np.diff(energies)) > 0
    assert energies[-1] < 1e-6 * energies[0]


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.01, 0.01), st.floats(-0.01, 0.01))
def test_verbatim_power_balance(vs, vus, xs, xus):
    # with f = 0 the printed equations give dE/dt = b_s v_s (v_us - v_s), which can be positive
    p = ComplianceParams()
    r = 0.003
    a_s, a_us = compliance_accel(p.M_s, p.M_us, p.k_s, p.b_s, p.k_t, xs, xus, vs, vus, r, 0.0, True)
    power = (p.M_s * vs * a_s + p.M_us * vus * a_us + p.k_s * (xs - xus) * (vs - vus) + p.k_t * (xus - r) * vus)
    assert power == pytest.approx(p.b_s * vs * (vus - vs), abs=1e-9)


def test_verbatim_reading_is_still_stable():
    p = ComplianceParams()
    s = _integrate(p, 0.01, 3.0, 1e-3, state=ComplianceState(xd_s=0.3, xd_us=-0.4))
    assert abs(s.xd_s) < 1e-4 and abs(s.xd_us) < 1e-4
