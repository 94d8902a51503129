import math

import numpy as np
import pytest

from rloc.evaluation import (EvaluationReport, action_sequences, evaluate_policy,
                             evaluation_start_grid, lqr_target_policy, n_steps_for,
                             nnoc_policy, nnoc_switching, success_mask, value_function_grid,
                             value_grid_csv)
from rloc.learning import full_control_policy
from rloc.lqr import Controller, default_weights, lqr_control
from rloc.plants import DEG, make_plant, saturate, simulate
from rloc.policy import SwitchingPolicy, default_feature_map, feature_map, nnoc_choice


@pytest.fixture
def cp():
    return make_plant("cartpole")


@pytest.fixture
def bank(cp_target_controller):
    other = Controller(np.array([[0.0, 0.0, 5.0, 1.0]]), np.array([0, 0, 2.0, 0]), np.zeros(4))
    return [cp_target_controller, other]


# -- feature map ----------------------------------------------------------------

def test_feature_map_cells(cp):
    fm = default_feature_map(cp)
    assert fm.n_cells == 49
    assert feature_map(np.zeros(4), fm) == 24
    assert feature_map([0, 0, math.pi, 0], fm) == feature_map([0, 0, -math.pi, 0], fm)
    assert feature_map([0, 0, 0, 100.0], fm) == 27  # velocity clamped to the edge bin
    arm = make_plant("arm")
    fa = default_feature_map(arm)
    assert fa.n_cells == 36
    assert feature_map([4.0, -1.0, 0, 0], fa) == 30
    for s in range(49):
        assert feature_map(fm.cell_centre(s), fm) == s


def test_feature_map_periodic_wrap_of_raw_angles(cp):
    fm = default_feature_map(cp)
    for th in np.linspace(-3, 3, 13):
        assert feature_map([0, 0, th + 2 * math.pi, 0], fm) == feature_map([0, 0, th, 0], fm)


# -- NNOC ----------------------------------------------------------------------

def test_nnoc_choices(cp):
    fm = default_feature_map(cp)
    assert nnoc_policy([np.zeros(4)], [0, 0, 2.0, 1.0], fm) == 0
    centres = [np.array([0, 0, t, 0]) for t in (0.0, 1.0, 2.0, 3.0)]
    assert nnoc_policy(centres, centres[3], fm) == 3
    c = [np.array([0, 0, -175 * DEG, 0]), np.zeros(4)]
    assert nnoc_policy(c, [0, 0, 170 * DEG, 0], fm) == 0
    assert nnoc_choice([np.zeros(4), np.zeros(4)], [0, 0, 1, 0], fm) == 0
    with pytest.raises(ValueError):
        nnoc_choice(np.zeros((0, 4)), np.zeros(4), fm)


def test_nnoc_permutation(cp):
    fm = default_feature_map(cp)
    rng = np.random.default_rng(0)
    centres = np.zeros((6, 4))
    centres[:, 2] = rng.uniform(-3, 3, 6)
    perm = rng.permutation(6)
    for _ in range(50):
        x = np.r_[0, 0, rng.uniform(-3, 3), rng.uniform(-4, 4)]
        assert perm[nnoc_choice(centres[perm], x, fm)] == nnoc_choice(centres, x, fm)


# -- start grid ------------------------------------------------------------------

def test_evaluation_start_grid(cp):
    g = evaluation_start_grid(cp, 100)
    assert g.shape == (100, 4)
    assert len(np.unique(g[:, 2])) == 10 and len(np.unique(g[:, 3])) == 10
    assert np.all(g[:, :2] == 0)
    np.testing.assert_allclose(evaluation_start_grid(cp, 1), np.zeros((1, 4)), atol=1e-15)
    a = evaluation_start_grid(make_plant("arm"), 100)
    assert np.all(a[:, 2:] == 0)
    with pytest.raises(ValueError):
        evaluation_start_grid(cp, 99)
    assert n_steps_for(cp, 10.0) == 1000
    with pytest.raises(ValueError):
        n_steps_for(cp, 0)


# -- evaluation ------------------------------------------------------------------

def test_start_at_target(cp, bank):
    fm = default_feature_map(cp)
    pol = lqr_target_policy(cp, bank[0], fm, default_weights(cp))
    rep = evaluate_policy(cp, pol, [np.zeros(4)])
    assert rep.costs[0] < 1e-20 and rep.success[0]


def test_report_statistics(cp, bank):
    fm = default_feature_map(cp)
    pol = nnoc_switching(cp, bank, fm, default_weights(cp))
    starts = evaluation_start_grid(cp, 16)
    rep = evaluate_policy(cp, pol, starts, 3.0)
    assert rep.mean == pytest.approx(np.mean(rep.costs))
    assert rep.sem == pytest.approx(np.std(rep.costs, ddof=1) / 4)
    assert np.all(rep.costs >= 0)
    same = evaluate_policy(cp, pol, np.tile(starts[5], (4, 1)), 3.0)
    assert same.mean == pytest.approx(rep.costs[5], rel=1e-15)
    again = evaluate_policy(cp, pol, starts, 3.0)
    np.testing.assert_array_equal(again.costs, rep.costs)
    s = rep.summary()
    assert s["n_starts"] == 16 and s["n_steps"] == 300
    head, rows = rep.rows()
    assert len(rows) == 16 and len(rows[0]) == len(head)


def test_success_monotone_in_tolerance(cp):
    rng = np.random.default_rng(0)
    finals = rng.normal(0, 0.1, (200, 4))
    tol = np.array([0.1, np.inf, 3 * DEG, 10 * DEG])
    a = success_mask(cp, finals, tol)
    b = success_mask(cp, finals, 2 * tol)
    assert np.all(b[a])
    assert success_mask(cp, [[0, 5.0, 2 * math.pi, 0]], tol)[0]


def test_single_controller_policy_matches_raw_lqr(cp, bank):
    fm = default_feature_map(cp)
    w = default_weights(cp)
    pol = full_control_policy(np.zeros(49, dtype=int), bank[:1], fm, cp, w)
    x0 = np.array([0, 0, 15 * DEG, 0.3])
    ro = pol.rollout(x0, 500)
    ref = simulate(cp, x0, lambda x: lqr_control(bank[0], x, cp.wrap_mask), 501)
    np.testing.assert_allclose(ro.trajectory.states, ref.states, atol=1e-12)
    u = saturate(pol(np.zeros(4)), cp)
    assert abs(u[0]) < 1e-15


def test_rollout_and_batch_agree(cp, bank):
    fm = default_feature_map(cp)
    w = default_weights(cp)
    table = np.random.default_rng(0).integers(2, size=49)
    pol = full_control_policy(table, bank, fm, cp, w)
    starts = evaluation_start_grid(cp, 9)
    total, finals, done = pol.batch(starts, 400)
    for i, x0 in enumerate(starts):
        ro = pol.rollout(x0, 400)
        assert ro.total_cost == pytest.approx(total[i], rel=1e-12)
        np.testing.assert_array_equal(ro.trajectory.states[-1], finals[i])
        assert ro.completed == done[i]


def test_action_sequences_replay(cp, bank):
    fm = default_feature_map(cp)
    w = default_weights(cp)
    table = np.random.default_rng(1).integers(2, size=49)
    pol = full_control_policy(table, bank, fm, cp, w)
    starts = evaluation_start_grid(cp, 9)
    seqs = action_sequences(pol, starts, 4.0)
    for x0, seq in zip(starts, seqs):
        ro = pol.rollout(x0, 400)
        cells = [feature_map(x, fm) for x in ro.trajectory.states[:-1]]
        changes = sum(1 for a, b in zip(cells, cells[1:]) if a != b)
        assert len(seq) == changes + 1
        for k, a in seq:
            assert a == table[cells[k]]


def test_action_sequence_in_target_cell(cp, bank):
    fm = default_feature_map(cp)
    pol = full_control_policy(np.zeros(49, dtype=int), bank, fm, cp, default_weights(cp))
    seqs = action_sequences(pol, [[0, 0, 2 * DEG, 0], [0, 0, 3 * DEG, 0]], 5.0)
    assert seqs[0] == [(0, 0)] and seqs[1] == [(0, 0)]


def test_policy_validation(cp, bank):
    fm = default_feature_map(cp)
    w = default_weights(cp)
    with pytest.raises(ValueError):
        SwitchingPolicy(cp, [], fm, w)
    with pytest.raises(ValueError):
        SwitchingPolicy(cp, bank, fm, w, "table", np.full(49, 2))
    with pytest.raises(ValueError):
        SwitchingPolicy(cp, bank, fm, w, "table", np.zeros(10, dtype=int))
    with pytest.raises(ValueError):
        SwitchingPolicy(cp, bank, fm, w, "random")


def test_value_grid(cp, bank):
    fm = default_feature_map(cp)
    pol = lqr_target_policy(cp, bank[0], fm, default_weights(cp))
    axes, grid = value_function_grid(cp, pol, 20, 5.0)
    assert grid.shape == (20, 20)
    th, thd = np.meshgrid(axes[0], axes[1], indexing="ij")
    near = (np.abs(th) < 20 * DEG) & (np.abs(thd) < 60 * DEG)
    hanging = np.abs(th) > 150 * DEG
    assert grid[near].min() == grid.min()
    assert grid[hanging].min() > grid[near].max()
    _, again = value_function_grid(cp, pol, 20, 5.0)
    np.testing.assert_array_equal(grid, again)
    text = value_grid_csv(cp, axes, grid)
    lines = text.splitlines()
    assert lines[0] == "i,j,x2,x3,cost" and len(lines) == 401
    with pytest.raises(ValueError):
        value_function_grid(cp, pol, 1)
