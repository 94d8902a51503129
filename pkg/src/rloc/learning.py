"""Tabular every-visit Monte-Carlo control over controller selection.

Symbolic states are cells of a :class:`~rloc.policy.FeatureMap`, actions are
indices into a controller bank.  An epoch starts at the centre of a random
cell and runs the plant under an epsilon-greedy switched LQR policy; each
stay in a cell yields one ``(reward, cell, action)`` triplet whose reward is
minus the time-integrated quadratic cost accumulated during that stay.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from rloc import _kernels as K
from rloc.lqr import Controller, CostWeights, gain_stack
from rloc.plants import PlantParams
from rloc.policy import FeatureMap, SwitchingPolicy

log = logging.getLogger(__name__)

CURVE_EVERY = 6


@dataclass
class LearnParams:
    epsilon: float = 0.1
    nu: float = 0.1  # epsilon decay exponent
    gamma: float = 1.0
    alpha: float = 1.0
    mu: float = 0.5  # step-size decay exponent
    n_epochs: int = 2000
    n_steps: int = 300
    noise_std: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.mu < 0 or self.nu < 0:
            raise ValueError("decay exponents must be non-negative")
        if self.n_epochs < 0 or self.n_steps < 1:
            raise ValueError("bad epoch or step count")

    def epsilon_at(self, j: int) -> float:
        """Exploration rate for epoch ``j`` (1-based): eps * j**-nu."""
        return self.epsilon * float(j) ** -self.nu

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QTable:
    values: np.ndarray
    visits: np.ndarray

    @classmethod
    def zeros(cls, n_s: int, n_a: int) -> "QTable":
        if n_s < 1 or n_a < 1:
            raise ValueError("Q-table needs at least one state and one action")
        return cls(np.zeros((n_s, n_a)), np.zeros((n_s, n_a), dtype=np.int64))

    @property
    def shape(self):
        return self.values.shape

    def greedy(self) -> np.ndarray:
        """Deterministic policy: argmax per cell, lowest index on ties."""
        return np.argmax(self.values, axis=1).astype(np.int64)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "visits": self.visits.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QTable":
        return cls(np.asarray(d["values"], dtype=float), np.asarray(d["visits"], dtype=np.int64))


@dataclass
class EpochTrace:
    rewards: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    diverged: bool = False
    steps: int = 0

    @property
    def n_triplets(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def triplets(self):
        return list(zip(self.rewards.tolist(), self.states.tolist(), self.actions.tolist()))


def select_action(Q: QTable, s: int, eps: float, rng: np.random.Generator) -> int:
    """epsilon-greedy: greedy (ties uniform) w.p. 1 - eps, each other action eps / (n - 1)."""
    u = rng.random(3)
    return int(K.egreedy(Q.values[s], float(eps), u[0], u[1], u[2]))


def action_probabilities(q_row, eps: float) -> np.ndarray:
    """Exact selection probabilities of :func:`select_action` for one Q row."""
    q_row = np.asarray(q_row, dtype=float)
    n = len(q_row)
    if n == 1:
        return np.ones(1)
    best = q_row == q_row.max()
    probs = np.zeros(n)
    for g in np.flatnonzero(best):
        share = np.full(n, eps / (n - 1))
        share[g] = 1 - eps
        probs += share / best.sum()
    return probs


def segment_occupancy(costs, cells, actions):
    """Collapse per-step costs into one triplet per stay in a cell.

    A new stay starts whenever the cell changes; the returned reward of a stay
    is minus the sum of its step costs.
    """
    cells = np.asarray(cells)
    n = len(cells)
    if n == 0:
        return np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
    starts = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1]])
    rewards = -np.add.reduceat(np.asarray(costs, dtype=float), starts)
    return rewards, cells[starts].astype(np.int64), np.asarray(actions)[starts].astype(np.int64)


class EpochRunner:
    """Pre-packed compiled-kernel arguments for repeated learning epochs."""

    def __init__(self, plant: PlantParams, bank: list[Controller], fm: FeatureMap,
                 weights: CostWeights, params: LearnParams):
        if not bank:
            raise ValueError("empty controller bank")
        self.plant, self.fm, self.params, self.weights = plant, fm, params, weights
        umin, umax = plant.u_bounds
        self.common = (plant.kind, plant.consts(), plant.dt, umin, umax)
        self.gains = gain_stack(bank)
        self.target = np.asarray(plant.target, dtype=float)
        self.centres = np.ascontiguousarray(np.stack([c.centre for c in bank]))
        self.fm_arrays = fm.arrays()
        n, l, m = params.n_steps, plant.state_dim, plant.n_controls
        self.buf = (np.zeros((n + 1, l)), np.zeros((n, m)), np.zeros(n),
                    np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))
        # worst single-step cost: used as the divergence penalty
        u_sat = np.maximum(np.abs(umin), np.abs(umax))
        self.sat_cost = 0.5 * float(u_sat @ weights.Z @ u_sat) * plant.dt

    def run(self, Q: QTable, eps: float, rng: np.random.Generator, start_cell=None) -> EpochTrace:
        p, prm = self.plant, self.params
        n, l = prm.n_steps, p.state_dim
        s0 = int(rng.integers(self.fm.n_cells)) if start_cell is None else int(start_cell)
        x0 = self.fm.cell_centre(s0, l)
        uniforms = rng.random((n + 1, 3))
        if prm.noise_std > 0:
            noise = prm.noise_std * rng.standard_normal((n, l))
        else:
            noise = np.zeros((0, l))
        states, controls, costs, cells, actions = self.buf
        done = K.rollout(*self.common, x0, n, self.gains, self.target, p.wrap_mask,
                         self.weights.W, self.weights.Z, K.RULE_EGREEDY,
                         np.zeros(1, np.int64), self.centres, 0, float(eps), Q.values,
                         uniforms, *self.fm_arrays, noise, states, controls, costs,
                         cells, actions)
        kept = min(done + 1, n)
        r, s, a = segment_occupancy(costs[:kept], cells[:kept], actions[:kept])
        diverged = done < n
        if diverged:
            # pessimistic but bounded: one extra step at the saturation limit
            err = np.zeros(l)
            K.error_vector(states[done], self.target, p.wrap_mask, err)
            r[-1] -= 0.5 * float(err @ self.weights.W @ err) * p.dt + self.sat_cost
            log.debug("epoch diverged after %d steps", done)
        return EpochTrace(r, s, a, diverged, kept)


def run_epoch(plant: PlantParams, bank: list[Controller], fm: FeatureMap, Q: QTable,
              params: LearnParams, rng: np.random.Generator, weights: CostWeights,
              eps: float | None = None, start_cell=None) -> EpochTrace:
    runner = EpochRunner(plant, bank, fm, weights, params)
    return runner.run(Q, params.epsilon if eps is None else eps, rng, start_cell)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def update_q(Q: QTable, trace: EpochTrace, params: LearnParams) -> QTable:
    """Every-visit MC: Q += alpha / i**mu * (return - Q) for each visit, in order."""
    G = discounted_returns(trace.rewards, params.gamma)
    vals, visits = Q.values, Q.visits
    for g, s, a in zip(G, trace.states, trace.actions):
        visits[s, a] += 1
        step = params.alpha / visits[s, a] ** params.mu
        vals[s, a] += step * (g - vals[s, a])
    return Q


@dataclass
class LearnResult:
    Q: QTable
    policy: np.ndarray
    curve: list = field(default_factory=list)  # (epoch, total reward)
    diverged_epochs: int = 0


def learn(plant: PlantParams, bank: list[Controller], fm: FeatureMap, params: LearnParams,
          rng: np.random.Generator, weights: CostWeights) -> LearnResult:
    """Run ``params.n_epochs`` epochs, updating Q after each one.

    The learning curve keeps the total reward of epochs 1, 7, 13, ...
    """
    Q = QTable.zeros(fm.n_cells, len(bank))
    runner = EpochRunner(plant, bank, fm, weights, params)
    curve = []
    n_div = 0
    for j in range(1, params.n_epochs + 1):
        trace = runner.run(Q, params.epsilon_at(j), rng)
        update_q(Q, trace, params)
        n_div += trace.diverged
        if (j - 1) % CURVE_EVERY == 0:
            curve.append((j, trace.total_reward))
    return LearnResult(Q, Q.greedy(), curve, n_div)


def full_control_policy(policy, bank: list[Controller], fm: FeatureMap, plant: PlantParams,
                        weights: CostWeights) -> SwitchingPolicy:
    """x -> controller ``policy[cell(x)]`` -> ``-L (x - x*)``."""
    return SwitchingPolicy(plant, bank, fm, weights, "table", np.asarray(policy), name="rloc")
