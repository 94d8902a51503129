import math

import numpy as np
import pytest

from oracles import arm_lagrangian, cartpole_lagrangian
from rloc.plants import (DEG, IntegrationDiverged, InvalidParameters, Trajectory,
                         arm_derivative, cartpole_derivative, kinetic_energy_arm, load_plant,
                         make_plant, plant_step, rk4_step, saturate, simulate,
                         simulate_open_loop, wrap_angle)


@pytest.fixture(scope="module")
def arm_oracle():
    p = make_plant("arm")
    return p, arm_lagrangian(p)


@pytest.fixture(scope="module")
def cartpole_oracle():
    p = make_plant("cartpole")
    return p, cartpole_lagrangian(p)


def test_arm_matches_lagrangian_at_reference_state(arm_oracle):
    p, f = arm_oracle
    x = np.array([math.pi / 2, math.pi / 2, 0.3, 0.2])
    got = arm_derivative(x, [1.0, -1.0], p)
    want = f(*x, 1.0, -1.0)
    np.testing.assert_allclose(got[2:], want, atol=1e-6, rtol=0)
    np.testing.assert_array_equal(got[:2], x[2:])


def test_arm_matches_lagrangian_random_states(arm_oracle):
    p, f = arm_oracle
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x = np.r_[rng.uniform(0, math.pi, 2), rng.uniform(-5, 5, 2)]
        u = rng.uniform(-10, 10, 2)
        np.testing.assert_allclose(arm_derivative(x, u, p)[2:], f(*x, *u), atol=1e-6, rtol=0)


def test_cartpole_matches_lagrangian_random_states(cartpole_oracle):
    p, f = cartpole_oracle
    rng = np.random.default_rng(2)
    for _ in range(1000):
        x = np.r_[rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(-math.pi, math.pi),
                  rng.uniform(-6, 6)]
        u = rng.uniform(-20, 20)
        got = cartpole_derivative(x, [u], p)
        acc = f(x[0], x[2], x[1], x[3], u, np.sign(x[1]))
        np.testing.assert_allclose([got[1], got[3]], acc, atol=1e-6, rtol=0)


def test_arm_rest_without_torque_has_no_acceleration(arm):
    d = arm_derivative([math.pi / 2, math.pi / 2, 0, 0], [0, 0], arm)
    np.testing.assert_array_equal(d, np.zeros(4))


def test_arm_friction_dissipates(arm):
    traj = simulate(arm, [math.pi / 2, math.pi / 2, 1.0, -1.0], [0.0, 0.0], 50)
    ke = [kinetic_energy_arm(x, arm) for x in traj.states]
    assert np.all(np.diff(ke) < 0)


def test_arm_speed_decays_over_300_steps(arm):
    traj = simulate(arm, [math.pi / 2, math.pi / 2, 2.0, 2.0], [0.0, 0.0], 300)
    assert np.linalg.norm(traj.states[-1, 2:]) < np.linalg.norm(traj.states[0, 2:])


def test_cartpole_hanging_is_equilibrium():
    p = make_plant("cartpole", b_c=0.0)
    np.testing.assert_allclose(cartpole_derivative([0, 0, math.pi, 0], [0], p), 0, atol=1e-13)
    x = np.array([0.0, 0.0, math.pi, 0.0])
    for _ in range(100):
        x = plant_step(x, [0.0], p)
    np.testing.assert_allclose(x, [0, 0, math.pi, 0], atol=1e-14)


def test_cartpole_upright_is_unstable(cartpole):
    np.testing.assert_array_equal(cartpole_derivative([0, 0, 0, 0], [0], cartpole), 0)
    traj = simulate(cartpole, [0, 0, 1e-3, 0], [0.0], 200)
    assert abs(traj.states[-1, 2]) > 0.1


def _energy_drift(x0, dt, seconds):
    p = make_plant("cartpole", b_c=0.0, b_p=0.0, dt=dt)
    traj = simulate(p, x0, [0.0], int(round(seconds / dt)) + 1)
    E = np.array([p.energy(x) for x in traj.states])
    return np.abs(E - E[0]).max()


@pytest.mark.xfail(strict=True, reason="fixed-step RK4 at dt=0.01 drifts about 1.7e-5 J "
                                        "on this fast swing")
def test_cartpole_energy_one_second_fast_swing():
    assert _energy_drift([0, 0.1, 0.3, -0.2], 0.01, 1.0) < 1e-6


def test_cartpole_energy_drift_is_fourth_order():
    x0 = [0, 0.1, 0.3, -0.2]
    d = [_energy_drift(x0, dt, 1.0) for dt in (0.01, 0.005, 0.0025)]
    assert d[0] / d[1] > 12 and d[1] / d[2] > 12
    assert d[2] < 1e-6


def test_cartpole_energy_conserved_ten_seconds():
    assert _energy_drift([0, 0.1, 2.0, 1.5], 0.01, 10.0) < 1e-5


def test_rk4_exponential_closed_form():
    got = rk4_step(lambda x, u: x, np.array([1.0]), None, 0.1)
    h = 0.1
    assert got[0] == pytest.approx(1 + h + h ** 2 / 2 + h ** 3 / 6 + h ** 4 / 24, abs=1e-15)
    assert got[0] == pytest.approx(1.1051708333333333, abs=1e-13)


def test_rk4_fourth_order():
    def err(n):
        x = np.array([1.0])
        for _ in range(n):
            x = rk4_step(lambda y, u: y, x, None, 1.0 / n)
        return abs(x[0] - math.e)

    errs = [err(n) for n in (10, 20, 40)]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(r >= 12 for r in ratios)
    assert abs(math.log2(ratios[-1]) - 4) < 0.1


def test_rk4_zero_field_is_identity():
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(rk4_step(lambda y, u: np.zeros(3), x, None, 0.5), x)


def test_rk4_rejects_bad_dt_and_divergence():
    with pytest.raises(ValueError):
        rk4_step(lambda y, u: y, np.ones(1), None, 0.0)
    with pytest.raises(IntegrationDiverged):
        rk4_step(lambda y, u: y * np.inf, np.ones(1), None, 0.1)


def test_saturation(arm, cartpole):
    np.testing.assert_array_equal(saturate([15, -3], arm), [10, -3])
    np.testing.assert_array_equal(saturate([-31.7], cartpole), [-20])
    np.testing.assert_array_equal(saturate([2.5], cartpole), [2.5])


def test_simulate_saturates_controls(cartpole):
    traj = simulate(cartpole, [0, 0, math.pi, 0], lambda x: np.array([100.0]), 5)
    np.testing.assert_array_equal(traj.controls, 20.0)


def test_wrap_angle_range():
    a = np.array([math.pi, -math.pi, 3 * math.pi, 179 * DEG - 2 * math.pi, 0.0])
    w = wrap_angle(a)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    np.testing.assert_allclose(w[:2], [math.pi, math.pi])


def test_cartpole_theta_stays_wrapped(cartpole):
    traj = simulate(cartpole, [0, 0, 3.0, 8.0], [0.0], 300)
    th = traj.states[:, 2]
    assert np.all(th > -math.pi) and np.all(th <= math.pi)


def test_arm_joint_clamp(arm):
    traj = simulate(arm, [0.05, math.pi - 0.05, -3.0, 3.0], [-10.0, 10.0], 100)
    assert traj.states[:, :2].min() >= 0 and traj.states[:, :2].max() <= math.pi
    assert traj.states[-1, 0] == 0.0 and traj.states[-1, 2] == 0.0


def test_simulate_noise_is_seeded(cartpole):
    a = simulate(cartpole, [0, 0, 1, 0], [0.0], 50, 1e-3, np.random.default_rng(5))
    b = simulate(cartpole, [0, 0, 1, 0], [0.0], 50, 1e-3, np.random.default_rng(5))
    np.testing.assert_array_equal(a.states, b.states)
    with pytest.raises(ValueError):
        simulate(cartpole, [0, 0, 1, 0], [0.0], 50, 1e-3)


def test_simulate_zero_control_hanging_rest_is_constant(cartpole):
    # default Coulomb friction must not push a resting cart
    traj = simulate(cartpole, [0, 0, math.pi, 0], [0.0], 300)
    np.testing.assert_allclose(traj.states, np.tile(traj.states[0], (300, 1)), atol=1e-12)


def test_open_loop_matches_step(arm):
    U = np.random.default_rng(0).uniform(-10, 10, (20, 2))
    traj = simulate_open_loop(arm, [1.0, 1.0, 0, 0], U)
    x = traj.states[0]
    for k in range(20):
        x = plant_step(x, U[k], arm)
        np.testing.assert_array_equal(x, traj.states[k + 1])


def test_invalid_parameters():
    with pytest.raises(InvalidParameters):
        make_plant("cartpole", m_p=0.0)
    with pytest.raises(InvalidParameters):
        make_plant("arm", dt=-0.01)
    with pytest.raises(InvalidParameters):
        make_plant("cartpole", u_min=1.0, u_max=0.0)
    with pytest.raises(InvalidParameters):
        make_plant("pendulum")


def test_simulate_needs_two_steps(cartpole):
    with pytest.raises(ValueError):
        simulate(cartpole, np.zeros(4), [0.0], 1)


def test_trajectory_csv(tmp_path, cartpole):
    traj = simulate(cartpole, [0, 0, 0.1, 0], [1.0], 3)
    traj.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,t,x0,x1,x2,x3,u0"
    assert len(lines) == 4 and lines[-1].endswith(",")
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 4)), np.zeros((3, 1)), 0.01)


def test_plant_file_round_trip(tmp_path, arm):
    import yaml
    path = tmp_path / "arm.yaml"
    path.write_text(yaml.safe_dump(arm.to_dict()))
    assert load_plant(path) == arm


def test_table_values():
    a, c = make_plant("arm"), make_plant("cartpole")
    assert (a.l1, a.l2, a.m1, a.m2, a.c1, a.c2, a.i1, a.i2) == (0.3, 0.33, 1.4, 2.5, 0.11,
                                                               0.165, 0.025, 0.072)
    assert a.friction == ((0.5, 0.1), (0.1, 0.5)) and (a.u_min, a.u_max) == (-10, 10)
    assert (c.l, c.m_p, c.m_c, c.b_c, c.b_p) == (0.6, 0.5, 0.5, 0.1, 0.0)
    assert (c.u_min, c.u_max, c.dt, c.n_steps) == (-20, 20, 0.01, 300)
    np.testing.assert_allclose(a.target, [math.pi / 2, math.pi / 2, 0, 0])
