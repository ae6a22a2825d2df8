from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import S6A, SBSS, rel_err
from longburn import _kernels_py
from longburn.constants import J2_EARTH, MU_EARTH, R_EARTH
from longburn.dynamics import (
    DegenerateFrameError,
    ForceModelConfig,
    ImpulsiveManeuver,
    InertialState,
    ManeuverPolicy,
    OrbitalElements,
    Trajectory,
    acceleration,
    apply_impulse,
    elements_to_state,
    gravity_jacobian,
    propagate,
    propagate_states,
    propagate_variational,
    propagate_variational_many,
    sensitivity_between,
    state_to_elements,
    stm_between,
    vvlh_rotation,
)

try:
    from longburn import _kernels as _kernels_c
except ImportError:  # pragma: no cover
    _kernels_c = None


def _period(state: InertialState, mu: float = MU_EARTH) -> float:
    a = -mu / (2 * (0.5 * state.v @ state.v - mu / np.linalg.norm(state.r)))
    return 2 * math.pi * math.sqrt(a**3 / mu)


def _elements_oracle(r, v, mu=MU_EARTH):
    """Independent element extraction through the eccentric anomaly (no true anomaly)."""
    rn, v2 = np.linalg.norm(r), v @ v
    a = 1.0 / (2.0 / rn - v2 / mu)
    h = np.cross(r, v)
    inc = math.degrees(math.acos(h[2] / np.linalg.norm(h)))
    raan = math.degrees(math.atan2(h[0], -h[1])) % 360
    esinE = (r @ v) / math.sqrt(mu * a)
    ecosE = 1.0 - rn / a
    e = math.hypot(esinE, ecosE)
    E = math.atan2(esinE, ecosE)
    M = math.degrees(E - esinE) % 360
    return a / 1e3, e, inc, raan, M


# ---------------------------------------------------------------------------
# elements


def test_circular_equatorial_placement():
    s = elements_to_state(OrbitalElements(7000.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    np.testing.assert_allclose(s.r, [7000e3, 0, 0], atol=1e-6)
    np.testing.assert_allclose(s.v, [0, math.sqrt(MU_EARTH / 7000e3), 0], rtol=1e-14, atol=1e-9)


def test_platform_radius_within_ellipse_bounds():
    s = elements_to_state(SBSS)
    rn = np.linalg.norm(s.r) / 1e3
    assert SBSS.a * (1 - SBSS.e) <= rn <= SBSS.a * (1 + SBSS.e)


def test_target_round_trip_against_independent_extraction():
    s = elements_to_state(S6A)
    a, e, inc, raan, M = _elements_oracle(s.r, s.v)
    for got, want in zip((a, e, inc, raan, M), (S6A.a, S6A.e, S6A.i, S6A.raan, S6A.M)):
        assert abs(got - want) <= 1e-9 * abs(want)
    back = state_to_elements(s)
    for f in ("a", "e", "i", "raan", "argp", "M"):
        assert abs(getattr(back, f) - getattr(S6A, f)) <= 1e-9 * abs(getattr(S6A, f))


@given(
    a=st.floats(6800, 42000),
    e=st.floats(1e-4, 0.6),
    i=st.floats(1.0, 179.0),
    raan=st.floats(0, 359.9),
    argp=st.floats(0, 359.9),
    M=st.floats(0.1, 359.9),
)
def test_elements_round_trip(a, e, i, raan, argp, M):
    el = OrbitalElements(a, e, i, raan, argp, M)
    s = elements_to_state(el)
    back = state_to_elements(s)
    np.testing.assert_allclose(elements_to_state(back).vector, s.vector, rtol=1e-9, atol=1e-6)


def test_hyperbolic_elements_rejected():
    with pytest.raises(ValueError):
        OrbitalElements(7000.0, 1.0, 0, 0, 0, 0)


# ---------------------------------------------------------------------------
# frame and forces


def test_vvlh_axis_aligned_case():
    C = vvlh_rotation(InertialState(0.0, [7e6, 0, 0], [0, 7.5e3, 0]))
    np.testing.assert_allclose(C[:, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(C[:, 1], [0, 0, -1], atol=1e-15)
    np.testing.assert_allclose(C[:, 2], [-1, 0, 0], atol=1e-15)


@given(
    r=st.lists(st.floats(-4e7, 4e7), min_size=3, max_size=3),
    v=st.lists(st.floats(-8e3, 8e3), min_size=3, max_size=3),
)
def test_vvlh_orthonormal(r, v):
    r, v = np.array(r), np.array(v)
    if np.linalg.norm(r) < 1e6 or np.linalg.norm(np.cross(r, v)) < 1e-3 * np.linalg.norm(r) * max(np.linalg.norm(v), 1):
        return
    C = vvlh_rotation(InertialState(0.0, r, v))
    np.testing.assert_allclose(C.T @ C, np.eye(3), atol=1e-12)
    assert np.linalg.det(C) == pytest.approx(1.0, abs=1e-12)


def test_vvlh_x_along_velocity_for_circular_orbit():
    s = elements_to_state(OrbitalElements(7000.0, 0.0, 51.6, 30.0, 0.0, 123.0))
    C = vvlh_rotation(s)
    assert C[:, 0] @ s.v / np.linalg.norm(s.v) == pytest.approx(1.0, abs=1e-12)


def test_vvlh_degenerate():
    with pytest.raises(DegenerateFrameError):
        vvlh_rotation(InertialState(0.0, [7e6, 0, 0], [1e3, 0, 0]))


def test_two_body_acceleration():
    a = acceleration(InertialState(0.0, [7e6, 0, 0], [0, 7.5e3, 0]), ForceModelConfig.two_body())
    np.testing.assert_allclose(a, [-MU_EARTH / 49e12, 0, 0], rtol=1e-15)


@pytest.mark.parametrize("r", [[7e6, 0.0, 0.0], [0.0, 0.0, 7e6]])
def test_j2_textbook(r):
    # J2 pulls harder at the equator (-1.5 k radially) and weaker at the pole (+3 k)
    cfg = ForceModelConfig()
    a = acceleration(InertialState(0.0, r, [0, 7.5e3, 0] if r[0] else [7.5e3, 0, 0]), cfg)
    rn = 7e6
    k = J2_EARTH * MU_EARTH * R_EARTH**2 / rn**4
    central = -MU_EARTH / rn**2
    if r[0]:
        np.testing.assert_allclose(a, [central - 1.5 * k, 0, 0], rtol=1e-14)
    else:
        np.testing.assert_allclose(a, [0, 0, central + 3.0 * k], rtol=1e-14)


def test_thrust_window_half_open():
    cfg = ForceModelConfig.two_body()
    pol = ManeuverPolicy(100.0, 200.0, [1e-3, 0, 0])
    for t, on in ((100.0, False), (100.5, True), (200.0, True), (200.5, False)):
        s = InertialState(t, [7e6, 0, 0], [0, 7.5e3, 0])
        diff = np.linalg.norm(acceleration(s, cfg, pol) - acceleration(s, cfg))
        assert (diff > 0) == on


@pytest.mark.parametrize("zonal", [0, 2])
def test_gravity_jacobian_finite_difference(zonal):
    cfg = ForceModelConfig(zonal_degree=zonal)
    r = np.array([4.1e6, -3.3e6, 4.4e6])
    G = gravity_jacobian(r, cfg)
    fd = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        up = acceleration(InertialState(0.0, r + e, [0, 7e3, 0]), cfg)
        dn = acceleration(InertialState(0.0, r - e, [0, 7e3, 0]), cfg)
        fd[:, j] = (up - dn) / 2.0
    np.testing.assert_allclose(G, fd, rtol=1e-6, atol=1e-18)


def test_thrust_jacobian_finite_difference():
    r, v, u = np.array([4.1e6, -3.3e6, 4.4e6]), np.array([3e3, 5e3, -1e3]), np.array([1e-3, -2e-3, 5e-4])
    Jr, Jv = _kernels_py.thrust_jacobian(r, v, u)
    f = lambda r, v: _kernels_py.vvlh_matrix(r, v) @ u  # noqa: E731
    for J, which, h in ((Jr, 0, 1.0), (Jv, 1, 1e-3)):
        fd = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            args_p = (r + e, v) if which == 0 else (r, v + e)
            args_m = (r - e, v) if which == 0 else (r, v - e)
            fd[:, j] = (f(*args_p) - f(*args_m)) / (2 * h)
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-16)


# ---------------------------------------------------------------------------
# propagation


def test_circular_orbit_periodicity():
    cfg = ForceModelConfig.two_body()
    s = elements_to_state(OrbitalElements(6878.137, 0.0, 0.0, 0.0, 0.0, 0.0))
    # the default rtol of 1e-12 leaves ~4e-5 m on a 6878-km radius; tighten for the 1e-6 m target
    back = propagate(s, cfg, _period(s), rtol=1e-14, atol=1e-11)
    assert np.linalg.norm(back.r - s.r) < 1e-6


def test_energy_drift_two_days(leo_state):
    cfg = ForceModelConfig.two_body()
    energy = lambda x: 0.5 * x[3:] @ x[3:] - MU_EARTH / np.linalg.norm(x[:3])  # noqa: E731
    xs = propagate_states(leo_state, cfg, np.linspace(0, 2 * 86400, 9))
    e0 = energy(leo_state.vector)
    assert max(abs(energy(x) - e0) / abs(e0) for x in xs) < 1e-9


def test_backward_propagation_inverts_forward(target_state, j2):
    pol = ManeuverPolicy(1000.0, 1600.0, [1e-3, 2e-4, -3e-4])
    fwd = propagate(target_state, j2, 7200.0, pol)
    back = propagate(fwd, j2, 0.0, pol)
    assert np.linalg.norm(back.r - target_state.r) < 1e-4


def test_propagation_to_burn_start_ignores_thrust(target_state, j2):
    pol = ManeuverPolicy(1000.0, 1600.0, [1e-3, 0, 0])
    a = propagate(target_state, j2, 1000.0, pol)
    b = propagate(target_state, j2, 1000.0)
    np.testing.assert_array_equal(a.vector, b.vector)


def test_unsorted_epochs_both_sides(target_state, j2):
    shifted = propagate(target_state, j2, 5000.0)
    epochs = np.array([9000.0, 100.0, 5000.0, 7000.0, 0.0])
    xs = propagate_states(shifted, j2, epochs)
    for t, x in zip(epochs, xs):
        np.testing.assert_allclose(x[:3], propagate(shifted, j2, t).r, atol=1e-6)


def test_apply_impulse():
    s = InertialState(10.0, [7e6, 0, 0], [0, 7.5e3, 0])
    out = apply_impulse(s, ImpulsiveManeuver(10.0, [0, 0, 1]))
    np.testing.assert_array_equal(out.r, s.r)
    assert out.v[2] == 1.0
    np.testing.assert_array_equal(apply_impulse(s, ImpulsiveManeuver(10.0, [0, 0, 0])).v, s.v)
    with pytest.raises(ValueError):
        apply_impulse(s, ImpulsiveManeuver(11.0, [0, 0, 1]))


def test_trajectory_with_impulse_matches_manual(target_state, j2):
    imp = ImpulsiveManeuver(3000.0, [0.5, -0.2, 0.1])
    traj = Trajectory(target_state, j2, impulse=imp)
    manual = propagate(apply_impulse(propagate(target_state, j2, 3000.0), imp), j2, 6000.0)
    np.testing.assert_allclose(traj.state_at(6000.0).vector, manual.vector, rtol=1e-12, atol=1e-7)
    np.testing.assert_allclose(traj.state_at(2000.0).vector, propagate(target_state, j2, 2000.0).vector, atol=1e-9)


def test_sixty_second_burn_below_one_metre():
    from longburn.experiments import divergence_study

    for d in ("in-track", "normal", "radial"):
        tab = divergence_study(d, durations=[60.0])
        assert tab.max_difference[0] < 1.0


# ---------------------------------------------------------------------------
# variational equations


def test_variational_initial_conditions(target_state, j2):
    v = propagate_variational(target_state, j2, 0.0)
    np.testing.assert_array_equal(v.stm, np.eye(6))
    np.testing.assert_array_equal(v.sens, np.zeros((6, 3)))


def test_stm_determinant_unity(target_state, j2):
    v = propagate_variational(target_state, j2, 6000.0)
    assert np.linalg.det(v.stm) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("zonal", [0, 2])
def test_stm_finite_difference(target_state, zonal):
    cfg = ForceModelConfig(zonal_degree=zonal)
    t = 3000.0
    phi = propagate_variational(target_state, cfg, t).stm
    steps = [10.0] * 3 + [1e-2] * 3
    for j in range(6):
        e = np.zeros(6)
        e[j] = steps[j]
        up = propagate(InertialState.from_vector(0.0, target_state.vector + e), cfg, t).vector
        dn = propagate(InertialState.from_vector(0.0, target_state.vector - e), cfg, t).vector
        assert rel_err(phi[:, j], (up - dn) / (2 * steps[j])) < 1e-4


def test_stm_between_identity_and_group(target_state, j2):
    _, phi, _ = propagate_variational_many(target_state, j2, [1000.0, 2500.0, 4000.0])
    np.testing.assert_allclose(stm_between(phi[1], phi[1]), np.eye(6), atol=1e-9)
    lhs = stm_between(phi[2], phi[1]) @ stm_between(phi[1], phi[0])
    np.testing.assert_allclose(lhs, stm_between(phi[2], phi[0]), rtol=1e-9, atol=1e-9)


def test_stm_between_matches_reprop(target_state, j2):
    _, phi, _ = propagate_variational_many(target_state, j2, [1500.0, 4500.0])
    direct = propagate_variational(propagate(target_state, j2, 1500.0), j2, 4500.0).stm
    assert rel_err(stm_between(phi[1], phi[0]), direct) < 1e-6


def test_sensitivity_between_trivial_reference():
    S_f0 = np.arange(18.0).reshape(6, 3)
    np.testing.assert_array_equal(sensitivity_between(S_f0, np.eye(6), np.zeros((6, 3))), S_f0)


def test_sensitivity_short_window_limit(target_state, j2):
    t_b = 2000.0
    start = propagate(target_state, j2, t_b)
    C = vvlh_rotation(start)
    errs = []
    for dt in (1.0, 0.1, 0.01):
        _, phi, S = propagate_variational_many(start, j2, [t_b, t_b + dt], sens_window=(t_b, t_b + dt))
        S_fb = sensitivity_between(S[1], stm_between(phi[1], phi[0]), S[0])
        ref = np.vstack((np.zeros((3, 3)), C)) * dt
        errs.append(rel_err(S_fb, ref))
    assert errs[0] > errs[1] > errs[2]


# ---------------------------------------------------------------------------
# backend parity


@pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")
@pytest.mark.parametrize("mode", [0, 1])
def test_backend_parity(target_state, j2, mode):
    y0 = target_state.vector if mode == 0 else np.concatenate((target_state.vector, np.eye(6).ravel(), np.zeros(18)))
    times = np.array([500.0, 1200.0, 4000.0])
    thrust = np.array([600.0, 1100.0, 2e-3, -1e-3, 5e-4])
    sens = np.array([600.0, 1100.0]) if mode else np.empty(0)
    args = (y0, 0.0, times, j2.packed(), thrust, sens, mode, 1e-12, 1e-9)
    a, _ = _kernels_c.integrate(*args)
    b, _ = _kernels_py.integrate(*args)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-6)
