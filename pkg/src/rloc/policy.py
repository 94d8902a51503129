"""Symbolic states and switched LQR control sources.

A :class:`SwitchingPolicy` picks one controller of a bank at a time and
applies ``u = -L_a (x - x*)``.  The choice is made by a table over symbolic
cells (RLOC), by the nearest linearisation centre (NNOC) or is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rloc import _kernels as K
from rloc.lqr import Controller, CostWeights, gain_stack
from rloc.plants import PlantParams, Trajectory, wrap_angle


@dataclass(frozen=True)
class FeatureMap:
    """Regular grid over two state dimensions; ``periodic`` dims wrap."""

    dims: tuple
    lo: tuple
    hi: tuple
    bins: tuple
    periodic: tuple

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.bins))

    def arrays(self):
        return (np.asarray(self.dims, dtype=np.int64), np.asarray(self.lo, dtype=float),
                np.asarray(self.hi, dtype=float), np.asarray(self.bins, dtype=np.int64),
                np.asarray(self.periodic, dtype=np.bool_))

    def __call__(self, x) -> int:
        return feature_map(x, self)

    def cell_centre(self, s: int, state_dim: int = 4) -> np.ndarray:
        """Centre of cell ``s`` with the undiscretised dimensions at zero."""
        if not 0 <= s < self.n_cells:
            raise IndexError(f"cell {s} out of range")
        x = np.zeros(state_dim)
        idx = np.unravel_index(s, self.bins)
        for d, lo, hi, n, i in zip(self.dims, self.lo, self.hi, self.bins, idx):
            x[d] = lo + (i + 0.5) * (hi - lo) / n
        return x

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "lo": list(self.lo), "hi": list(self.hi),
                "bins": list(self.bins), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        return cls(tuple(d["dims"]), tuple(d["lo"]), tuple(d["hi"]), tuple(d["bins"]),
                   tuple(bool(v) for v in d["periodic"]))


def default_feature_map(p: PlantParams, bins=None) -> FeatureMap:
    """Arm 6 x 6 over both joint angles, cart-pole 7 x 7 over (theta, theta_dot)."""
    if bins is None:
        bins = (6, 6) if p.name == "arm" else (7, 7)
    lo = tuple(float(r[0]) for r in p.grid_ranges)
    hi = tuple(float(r[1]) for r in p.grid_ranges)
    return FeatureMap(tuple(p.grid_dims), lo, hi, tuple(int(b) for b in bins),
                      tuple(bool(v) for v in p.grid_periodic))


def feature_map(x, fm: FeatureMap) -> int:
    dims, lo, hi, bins, per = fm.arrays()
    return int(K.cell_of(np.asarray(x, dtype=float), dims, lo, hi, bins, per))


def nnoc_choice(centres, x, fm: FeatureMap) -> int:
    """Index of the nearest centre over the discretised dims (lowest index on ties)."""
    centres = np.atleast_2d(np.asarray(centres, dtype=float))
    if centres.shape[0] == 0:
        raise ValueError("need at least one centre")
    dims, _, _, _, per = fm.arrays()
    return int(K.nearest_centre(np.asarray(x, dtype=float), centres, dims, per))


RULES = {"table": K.RULE_TABLE, "nearest": K.RULE_NEAREST, "fixed": K.RULE_FIXED}


@dataclass
class Rollout:
    trajectory: Trajectory
    costs: np.ndarray  # stage cost times dt for every completed step
    cells: np.ndarray
    actions: np.ndarray
    completed: int
    diverged: bool

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())


class SwitchingPolicy:
    """Control source ``x -> u`` that switches between LQR gains.

    ``rule`` is ``"table"`` (``table[cell]`` picks the controller),
    ``"nearest"`` (nearest centre, re-evaluated every step) or ``"fixed"``.
    """

    def __init__(self, plant: PlantParams, bank: list[Controller], fm: FeatureMap,
                 weights: CostWeights, rule: str = "table", table=None, fixed: int = 0,
                 name: str = ""):
        if not bank:
            raise ValueError("empty controller bank")
        if rule not in RULES:
            raise ValueError(f"unknown rule {rule!r}")
        self.plant = plant
        self.bank = bank
        self.fm = fm
        self.weights = weights
        self.rule = rule
        self.name = name or rule
        n_a = len(bank)
        if table is None:
            table = np.zeros(fm.n_cells, dtype=np.int64)
        self.table = np.ascontiguousarray(table, dtype=np.int64)
        if self.table.shape != (fm.n_cells,):
            raise ValueError("policy table does not match the feature map")
        if self.table.min() < 0 or self.table.max() >= n_a or not 0 <= fixed < n_a:
            raise ValueError("action index outside the controller bank")
        self.fixed = int(fixed)
        self.gains = gain_stack(bank)
        self.centres = np.ascontiguousarray(np.stack([c.centre for c in bank]))
        self.target = np.asarray(plant.target, dtype=float)

    # -- arguments shared by the compiled roll-outs
    def _common(self):
        p = self.plant
        umin, umax = p.u_bounds
        return (p.kind, p.consts(), p.dt, umin, umax)

    def _ctrl(self):
        return (self.gains, self.target, self.plant.wrap_mask, self.weights.W, self.weights.Z)

    def action(self, x) -> int:
        if self.rule == "table":
            return int(self.table[feature_map(x, self.fm)])
        if self.rule == "nearest":
            return nnoc_choice(self.centres, x, self.fm)
        return self.fixed

    def __call__(self, x) -> np.ndarray:
        a = self.action(x)
        e = np.asarray(x, dtype=float) - self.target
        wrap = self.plant.wrap_mask
        e[wrap] = wrap_angle(e[wrap])
        return -self.gains[a] @ e

    def rollout(self, x0, n_steps: int) -> Rollout:
        """Noise-free closed-loop run recording cells, actions and costs."""
        p = self.plant
        l, m = p.state_dim, p.n_controls
        states = np.zeros((n_steps + 1, l))
        controls = np.zeros((n_steps, m))
        costs = np.zeros(n_steps)
        cells = np.zeros(n_steps, dtype=np.int64)
        actions = np.zeros(n_steps, dtype=np.int64)
        done = K.rollout(*self._common(), np.asarray(x0, dtype=float), n_steps, *self._ctrl(),
                         RULES[self.rule], self.table, self.centres, self.fixed, 0.0,
                         np.zeros((1, 1)), np.zeros((1, 3)), *self.fm.arrays(),
                         np.zeros((0, l)), states, controls, costs, cells, actions)
        kept = min(done + 1, n_steps)
        traj = Trajectory(states[:done + 1], controls[:done], p.dt)
        return Rollout(traj, costs[:kept], cells[:kept], actions[:kept], done, done < n_steps)

    def batch(self, starts, n_steps: int, fixed_per_start=None):
        """Total cost, final state and completed step count for many starts."""
        starts = np.ascontiguousarray(np.atleast_2d(starts), dtype=float)
        n = starts.shape[0]
        if fixed_per_start is None:
            fixed_per_start = np.full(n, self.fixed, dtype=np.int64)
        fixed_per_start = np.ascontiguousarray(fixed_per_start, dtype=np.int64)
        total = np.zeros(n)
        finals = np.zeros((n, self.plant.state_dim))
        completed = np.zeros(n, dtype=np.int64)
        K.rollout_batch(*self._common(), starts, n_steps, *self._ctrl(), RULES[self.rule],
                        self.table, self.centres, fixed_per_start, *self.fm.arrays(),
                        total, finals, completed)
        return total, finals, completed

