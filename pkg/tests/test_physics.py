"""Dynamics engine tests: cable law, contact resolution, step/rollout
integration, energy behavior, and parameter plumbing."""
import warnings

import numpy as np
import pytest

from tensegrity_nav import fmad, gaits, geometry
from tensegrity_nav.physics import (BodyParams, ContactParams, Control,
                                    IntegrationBlowupError, StateSens,
                                    SystemState, cable_force, cap_velocities,
                                    kinetic_energy, mechanical_energy,
                                    resolve_contacts, rollout, step,
                                    step_with_gradient)


@pytest.fixture(scope="module")
def bp():
    return BodyParams()


@pytest.fixture(scope="module")
def cp():
    return ContactParams()


@pytest.fixture(scope="module")
def settled(cp, bp):
    return gaits.settle_rest_state(cp, bp)


def frozen_control(state):
    return Control(targets=np.asarray(state.rest_lengths, dtype=float).copy())


def airborne_state(bp, z=5.0, rest=5.0):
    st = gaits.assembled_state(bp.topology, clearance=z)
    st.rest_lengths = np.full(6, rest)  # far beyond any cable length: all slack
    return st


def slack_bp(gravity=(0.0, 0.0, -9.81)):
    # passive saddle rest far beyond any reachable length: every cable slack
    return BodyParams(gravity=list(gravity), passive_rest_length=9.0)


# -- cable force --------------------------------------------------------------


def test_cable_force_slack_boundary():
    assert cable_force(0.2, 0.2, 0.0, 1e6, 50.0) == 0.0


def test_cable_force_tension_only_when_short():
    for speed in (-3.0, 0.0, 3.0):
        assert cable_force(0.15, 0.2, speed, 1e6, 50.0) == 0.0


def test_cable_force_linear_spring_value():
    assert cable_force(0.2 + 1e-4, 0.2, 0.0, 1e6, 0.0) == pytest.approx(100.0)


def test_cable_force_never_negative():
    rng = np.random.default_rng(0)
    for _ in range(500):
        length = rng.uniform(0.05, 0.5)
        rest = rng.uniform(0.05, 0.5)
        speed = rng.normal(scale=2.0)
        k = rng.uniform(1e2, 1e6)
        c = rng.uniform(0.0, 100.0)
        assert cable_force(length, rest, speed, k, c) >= 0.0


def test_cable_damping_active_only_while_taut():
    # taut: damping can reduce but never flip the sign of the tension
    taut = cable_force(0.21, 0.2, -100.0, 1e3, 1.0)
    assert taut == pytest.approx(max(0.0, 1e3 * 0.01 - 100.0))
    assert cable_force(0.19, 0.2, 5.0, 1e3, 1.0) == 0.0


# -- parameter bundles --------------------------------------------------------


def test_contact_params_validation():
    with pytest.raises(ValueError):
        ContactParams(mu=-0.1)
    with pytest.raises(ValueError):
        ContactParams(epsilon=1.5)
    with pytest.raises(ValueError):
        ContactParams(beta=0.0)
    with pytest.raises(ValueError):
        ContactParams(stiffness=0.0)
    ContactParams(beta=1.0, epsilon=1.0, mu=0.0)  # closed bounds are legal


def test_theta_roundtrip_and_projection():
    p = ContactParams(mu=0.7, epsilon=0.3, beta=0.4)
    assert np.allclose(p.theta(), [0.7, 0.3, 0.4])
    q = p.with_theta([0.6, 0.1, 0.9])
    assert (q.mu, q.epsilon, q.beta) == (0.6, 0.1, 0.9)
    assert q.stiffness == p.stiffness
    proj = p.project_theta([-1.0, 2.0, 7.0])
    assert proj[0] == 0.0 and proj[1] == 1.0 and proj[2] == 1.0
    assert p.project_theta([0.5, 0.5, -3.0])[2] > 0.0


def test_body_params_validation():
    with pytest.raises(ValueError):
        BodyParams(dt=0.02)
    with pytest.raises(ValueError):
        BodyParams(dt=0.0)
    with pytest.raises(ValueError):
        BodyParams(rod_mass=-1.0)
    with pytest.raises(ValueError):
        BodyParams(gravity=[0.0, 1.0])
    BodyParams(gravity=[0.0, 0.0, 0.0])  # zero gravity is a legal test rig


def test_control_validation():
    with pytest.raises(ValueError):
        Control(targets=np.zeros(6))
    with pytest.raises(ValueError):
        Control(targets=np.full(5, 0.2))


def test_state_validation_catches_bad_quat(bp):
    st = airborne_state(bp)
    st.validate()
    st.quat[0] *= 1.5
    with pytest.raises(ValueError):
        st.validate()


# -- step: closed-form regimes ------------------------------------------------


def test_zero_gravity_slack_equilibrium(bp):
    bp0 = slack_bp(gravity=(0.0, 0.0, 0.0))
    st = airborne_state(bp0)
    out = step(st, frozen_control(st), ContactParams(), bp0)
    assert np.array_equal(out.pos, st.pos)
    assert np.array_equal(out.lin_vel, st.lin_vel)
    assert np.array_equal(out.ang_vel, st.ang_vel)
    assert np.array_equal(out.rest_lengths, st.rest_lengths)
    assert np.allclose(out.quat, st.quat, atol=1e-15)
    assert out.time == pytest.approx(st.time + bp0.dt)


def test_free_fall_symplectic_exact(bp):
    bp = slack_bp()
    st = airborne_state(bp)
    control = frozen_control(st)
    z0 = st.pos[:, 2].copy()
    out = st
    for _ in range(100):
        out = step(out, control, ContactParams(), bp)
    assert np.allclose(out.lin_vel[:, 2], -9.81 * 0.1, atol=1e-9)
    assert np.allclose(out.lin_vel[:, :2], 0.0, atol=1e-12)
    assert np.allclose(out.ang_vel, 0.0, atol=1e-12)
    # symplectic Euler: z(n) = z0 - g dt^2 (1 + 2 + ... + n)
    drop = 9.81 * bp.dt ** 2 * (100 * 101 / 2)
    assert np.allclose(out.pos[:, 2], z0 - drop, atol=1e-9)


def test_step_is_deterministic(settled, cp, bp):
    st = settled.copy()
    st.lin_vel = st.lin_vel + np.array([0.2, 0.1, 0.0])
    control = frozen_control(st)
    a = step(st, control, cp, bp)
    b = step(st, control, cp, bp)
    assert np.array_equal(a.pos, b.pos) and np.array_equal(a.quat, b.quat)
    assert np.array_equal(a.lin_vel, b.lin_vel) and np.array_equal(a.ang_vel, b.ang_vel)


def test_actuator_rate_limited_by_motor_speed(settled, cp, bp):
    st = settled.copy()
    control = Control(targets=st.rest_lengths + np.array([0.05, -0.05, 0.0, 0.01, 0.0, -0.15]))
    out = step(st, control, cp, bp)
    moved = out.rest_lengths - st.rest_lengths
    cap = bp.motor_speed * bp.dt
    assert np.all(np.abs(moved) <= cap + 1e-15)
    assert moved[0] == pytest.approx(cap)
    assert moved[1] == pytest.approx(-cap)
    assert moved[2] == pytest.approx(0.0)
    assert np.all(out.rest_lengths >= bp.min_rest_length)


def test_integration_blowup_is_reported(bp):
    hot = ContactParams(stiffness=1e12)
    bp_fast = BodyParams(dt=0.01)
    st = gaits.assembled_state(bp_fast.topology, clearance=0.3)
    st.rest_lengths = np.full(6, 0.02)  # violently taut
    control = frozen_control(st)
    with pytest.raises(IntegrationBlowupError), np.errstate(all="ignore"), \
            warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # overflow en route
        out = st
        for _ in range(200):
            out = step(out, control, hot, bp_fast)


# -- contact resolution -------------------------------------------------------


def test_no_contact_zero_impulses(bp, cp):
    st = airborne_state(bp)
    assert np.array_equal(resolve_contacts(st, cp, bp), np.zeros((6, 3)))


def _one_low_cap_state(bp, vz=-1.0, gap=-1e-8):
    """Rod 0 vertical with its lowest cap at z = gap, others far above."""
    st = airborne_state(bp, z=2.0)
    st.quat = np.array([[1.0, 0, 0, 0]] * 3, dtype=float)
    st.pos = np.array([[0.0, 0.0, 0.175 + gap],
                       [1.0, 0.0, 2.0],
                       [-1.0, 0.0, 2.0]])
    st.lin_vel = np.tile(np.array([0.0, 0.0, vz]), (3, 1))
    st.ang_vel = np.zeros((3, 3))
    caps = np.asarray(geometry.end_cap_positions(st, bp.topology))
    assert abs(caps[:, 2].min() - gap) < 1e-12
    return st


def test_single_bounce_restitution(bp):
    bp0 = slack_bp(gravity=(0.0, 0.0, 0.0))
    st = _one_low_cap_state(bp0)
    out = step(st, frozen_control(st), ContactParams(epsilon=0.5), bp0)
    vcaps = np.asarray(cap_velocities(out, bp0.topology))
    caps = np.asarray(geometry.end_cap_positions(st, bp0.topology))
    low = int(np.argmin(caps[:, 2]))
    assert vcaps[low, 2] == pytest.approx(0.5, abs=1e-9)


def test_restitution_epsilon_sensitivity_closed_form(bp):
    # post normal velocity = -epsilon * (pre normal velocity), so its
    # epsilon-lane derivative is exactly +1 for a unit approach speed
    bp0 = slack_bp(gravity=(0.0, 0.0, 0.0))
    st = _one_low_cap_state(bp0)
    out, sens = step_with_gradient(st, frozen_control(st), ContactParams(epsilon=0.5), bp0)
    from tensegrity_nav.physics import _lift_state
    vdual = cap_velocities(_lift_state(out, sens), bp0.topology)
    caps = np.asarray(geometry.end_cap_positions(st, bp0.topology))
    low = int(np.argmin(caps[:, 2]))
    dvn = vdual.dot[:, low, 2]
    assert dvn[1] == pytest.approx(1.0, abs=1e-12)
    assert dvn[0] == pytest.approx(0.0, abs=1e-12)  # no tangential motion: mu inert


def _per_cap_impulse_oracle(state, cp, bp, targets):
    """Closed-form impulse for isolated caps: solve K j = v_target - v_cap.

    Valid when the penetrating caps sit on distinct rods (no coupling), as in
    the settled three-cap support. K is the 3x3 effective inverse-mass matrix
    of the cap point.
    """
    topo = bp.topology
    caps = np.asarray(geometry.end_cap_positions(state, topo))
    axis = np.asarray(fmad.value(geometry.rod_axis(state.quat)))
    vcaps = np.asarray(cap_velocities(state, topo))
    inv_m = 1.0 / bp.rod_mass
    a_in = 1.0 / bp.rod_inertia
    b_in = 1.0 / bp.rod_inertia_axial
    impulses = np.zeros((6, 3))
    for i in range(6):
        if caps[i, 2] >= 0.0:
            continue
        rod = i // 2
        r = caps[i] - state.pos[rod]
        ax = axis[rod]

        def iinv(v):
            return a_in * v + (b_in - a_in) * ax * np.dot(ax, v)

        K = np.zeros((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            K[:, k] = inv_m * e + np.cross(iinv(np.cross(r, e)), r)
        impulses[i] = np.linalg.solve(K, targets[i] - vcaps[i])
    return impulses


def test_sticking_contact_matches_least_squares_oracle(settled):
    # large mu: the cone never clamps, so impulses must zero the cap velocity
    # exactly (eps = 0, uncoupled caps). A downward drift keeps every normal
    # impulse strictly positive, so the complementarity clamp stays inactive
    # and the closed-form solve is the unique fixed point. Extra iterations
    # let Gauss-Seidel actually reach it.
    bp = BodyParams(solver_iters=400)
    sticky = ContactParams(mu=1e4, epsilon=0.0)
    st = settled.copy()
    st.lin_vel = st.lin_vel + np.array([0.3, -0.2, -0.5])
    caps = np.asarray(geometry.end_cap_positions(st, bp.topology))
    vcaps = np.asarray(cap_velocities(st, bp.topology))
    targets = np.zeros((6, 3))  # zero slip, zero normal velocity (eps = 0)
    expected = _per_cap_impulse_oracle(st, sticky, bp, targets)
    assert np.all(expected[caps[:, 2] < 0.0, 2] > 0.0)
    got = np.asarray(fmad.value(resolve_contacts(st, sticky, bp)))
    assert np.allclose(got, expected, atol=1e-9)
    # and the post-step cap velocities are indeed stuck: slip drops from
    # ~0.36 m/s to the second-order reorientation residual (w x (w x r) dt)
    out = step(st, frozen_control(st), sticky, bp)
    vpost = np.asarray(cap_velocities(out, bp.topology))
    low = caps[:, 2] < 0.0
    assert np.all(np.abs(vpost[low, :2]) < 1e-3)
    assert np.any(np.abs(vcaps[low, :2]) > 0.1)


def test_friction_cone_slides_with_small_mu(settled, bp):
    slick = ContactParams(mu=0.01, epsilon=0.0)
    st = settled.copy()
    st.lin_vel = st.lin_vel + np.array([0.3, 0.0, 0.0])
    out = step(st, frozen_control(st), slick, bp)
    caps = np.asarray(geometry.end_cap_positions(st, bp.topology))
    low = caps[:, 2] < 0.0
    vpost = np.asarray(cap_velocities(out, bp.topology))
    # nearly frictionless: tangential motion survives the step
    assert np.all(vpost[low, 0] > 0.2)


def test_penetration_recovery_moves_positions_not_velocities(bp, cp):
    # plant the support caps 5e-4 deep: recovery must push the body out
    # over a few steps while leaving the persistent velocities near zero
    st = gaits.settle_rest_state(cp, bp).copy()
    st.pos = st.pos - np.array([0.0, 0.0, 4e-4])
    control = frozen_control(st)
    out = st
    depths = []
    for _ in range(60):
        out = step(out, control, cp, bp)
        caps = np.asarray(geometry.end_cap_positions(out, bp.topology))
        depths.append(-caps[:, 2].min())
    assert depths[0] > 3e-4
    assert depths[-1] <= bp.slop + 1e-6
    assert np.all(np.abs(out.lin_vel) < 5e-3)


# -- settling, energy, invariants ---------------------------------------------


def test_drop_settles_within_two_seconds(bp):
    cp0 = ContactParams(epsilon=0.0)
    st = gaits.assembled_state(bp.topology, clearance=0.05)
    control = frozen_control(st)
    traj = rollout(st, [(control, 2.0)], cp0, bp, stride=200)
    out = traj.final()
    assert kinetic_energy(out, bp) < 1e-4
    caps = np.asarray(geometry.end_cap_positions(out, bp.topology))
    assert np.all(caps[:, 2] >= -(bp.slop + 1e-4))
    for snap in traj.states:
        norms = np.linalg.norm(snap.quat, axis=-1)
        assert np.all(np.abs(norms - 1.0) <= 1e-9)


def test_energy_non_increasing_in_resting_contact(settled, bp):
    cp0 = ContactParams(epsilon=0.0)
    rng = np.random.default_rng(5)
    for _ in range(3):
        st = settled.copy()
        st.lin_vel = st.lin_vel + rng.normal(scale=0.05, size=(3, 3))
        st.ang_vel = st.ang_vel + rng.normal(scale=0.2, size=(3, 3))
        control = frozen_control(st)
        e_prev = mechanical_energy(st, cp0, bp)
        for _ in range(800):
            st = step(st, control, cp0, bp)
            e = mechanical_energy(st, cp0, bp)
            assert e - e_prev <= 1e-6
            e_prev = e


def test_se2_equivariance_of_contact_rollout(settled, cp, bp):
    st = settled.copy()
    st.lin_vel = st.lin_vel + np.array([0.25, -0.1, 0.0])
    pose = geometry.Pose2(x=1.3, y=-0.7, theta=0.9)
    st_t = geometry.transform_state_se2(st, pose)
    control = frozen_control(st)
    a = rollout(st, [(control, 1.0)], cp, bp).final()
    b = rollout(st_t, [(control, 1.0)], cp, bp).final()
    caps_a = np.asarray(geometry.end_cap_positions(a, bp.topology))
    caps_b = np.asarray(geometry.end_cap_positions(b, bp.topology))
    c, s = np.cos(pose.theta), np.sin(pose.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    moved = caps_a @ rot.T + np.array([pose.x, pose.y, 0.0])
    assert np.max(np.abs(moved - caps_b)) < 1e-6


# -- rollout ------------------------------------------------------------------


def test_rollout_single_step_equals_step(settled, cp, bp):
    st = settled.copy()
    control = frozen_control(st)
    traj = rollout(st, [(control, bp.dt)], cp, bp)
    direct = step(st, control, cp, bp)
    assert len(traj.states) == 2 and traj.boundaries == [1]
    assert np.array_equal(traj.final().pos, direct.pos)
    assert np.array_equal(traj.final().quat, direct.quat)


def test_rollout_determinism_and_chaining(settled, cp, bp):
    st = settled.copy()
    st.lin_vel = st.lin_vel + np.array([0.1, 0.05, 0.0])
    c1 = frozen_control(st)
    c2 = Control(targets=np.full(6, 0.15))
    whole = rollout(st, [(c1, 0.1), (c2, 0.2)], cp, bp)
    again = rollout(st, [(c1, 0.1), (c2, 0.2)], cp, bp)
    for a, b in zip(whole.states, again.states):
        assert np.array_equal(a.pos, b.pos) and np.array_equal(a.quat, b.quat)
    first = rollout(st, [(c1, 0.1)], cp, bp)
    second = rollout(first.final(), [(c2, 0.2)], cp, bp)
    assert np.array_equal(second.final().pos, whole.final().pos)
    assert np.array_equal(second.final().lin_vel, whole.final().lin_vel)
    assert whole.final().time == pytest.approx(0.3 + settled.time)


def test_rollout_stride_snapshots(settled, cp, bp):
    st = settled.copy()
    control = frozen_control(st)
    traj = rollout(st, [(control, 0.1)], cp, bp, stride=30)
    # start + steps 30, 60, 90, 100(boundary)
    assert len(traj.states) == 5
    assert traj.boundaries == [4]
    times = [s.time - st.time for s in traj.states]
    assert times == pytest.approx([0.0, 0.03, 0.06, 0.09, 0.1])


def test_rollout_rejects_bad_schedules(settled, cp, bp):
    with pytest.raises(ValueError):
        rollout(settled, [], cp, bp)
    with pytest.raises(ValueError):
        rollout(settled, [(frozen_control(settled), bp.dt / 10)], cp, bp)
    with pytest.raises(ValueError):
        rollout(settled, [(frozen_control(settled), 0.1)], cp, bp, stride=0)


# -- gradients through the step -----------------------------------------------


def test_no_contact_zero_parameter_sensitivity(bp):
    bp = slack_bp()
    st = airborne_state(bp)
    out, sens = step_with_gradient(st, frozen_control(st), ContactParams(), bp)
    assert np.array_equal(sens.pos, np.zeros_like(sens.pos))
    assert np.array_equal(sens.lin_vel, np.zeros_like(sens.lin_vel))
    assert np.array_equal(sens.quat, np.zeros_like(sens.quat))


def test_gradient_primal_matches_plain_step(settled, cp, bp):
    st = settled.copy()
    st.lin_vel = st.lin_vel + np.array([0.2, -0.1, 0.0])
    control = frozen_control(st)
    plain = step(st, control, cp, bp)
    primal, _ = step_with_gradient(st, control, cp, bp)
    assert np.allclose(plain.pos, primal.pos, atol=1e-15)
    assert np.allclose(plain.lin_vel, primal.lin_vel, atol=1e-15)
    assert np.allclose(plain.quat, primal.quat, atol=1e-15)


def test_mu_sensitivity_matches_finite_difference_50_steps(settled, bp):
    # sliding support: friction is engaged every step and the trajectory is
    # smooth in mu at this scale
    from tensegrity_nav.physics import _lift_state

    def start():
        st = settled.copy()
        st.lin_vel = st.lin_vel + np.array([0.3, 0.1, 0.0])
        return st

    def dual_loss_grad(theta):
        cpx = ContactParams(mu=theta[0], epsilon=theta[1], beta=theta[2])
        st = start()
        control = frozen_control(st)
        sens = StateSens.zeros()
        for _ in range(50):
            st, sens = step_with_gradient(st, control, cpx, bp, sens)
        caps = geometry.end_cap_positions(_lift_state(st, sens), bp.topology)
        return np.asarray(fmad.sum_(caps * caps).dot)

    def loss_only(theta):
        cpx = ContactParams(mu=theta[0], epsilon=theta[1], beta=theta[2])
        st = start()
        control = frozen_control(st)
        for _ in range(50):
            st = step(st, control, cpx, bp)
        caps = np.asarray(geometry.end_cap_positions(st, bp.topology))
        return float(np.sum(caps * caps))

    theta = np.array([0.5, 0.0, 0.2])
    grad = dual_loss_grad(theta)
    h = 1e-4 * theta[0]
    tp, tm = theta.copy(), theta.copy()
    tp[0] += h
    tm[0] -= h
    fd = (loss_only(tp) - loss_only(tm)) / (2 * h)
    assert grad[0] == pytest.approx(fd, rel=1e-3)


def test_kinetic_energy_closed_form(bp):
    st = airborne_state(bp)
    st.lin_vel = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, -1.0]])
    axis = np.asarray(fmad.value(geometry.rod_axis(st.quat)))
    w_axial = 3.0 * axis[0]
    w_perp = np.array([axis[0][2], 0.0, -axis[0][0]])  # perpendicular to axis 0
    w_perp = 2.0 * w_perp / np.linalg.norm(w_perp)
    st.ang_vel = np.vstack([w_axial + w_perp, np.zeros(3), np.zeros(3)])
    expected = (0.5 * bp.rod_mass * (1.0 + 4.0 + 1.0)
                + 0.5 * bp.rod_inertia_axial * 9.0
                + 0.5 * bp.rod_inertia * 4.0)
    assert kinetic_energy(st, bp) == pytest.approx(expected, rel=1e-12)
