"""Policy evaluation and the non-learning baselines.

Evaluation is noise free: every start state is simulated for a fixed
duration and scored by the time-integrated quadratic cost.  Success means
the final state lies inside a per-dimension tolerance of the target.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from rloc.lqr import Controller, CostWeights, build_controller_bank, error_vector
from rloc.plants import DEG, PlantParams, grid_axes, grid_states
from rloc.policy import FeatureMap, SwitchingPolicy, nnoc_choice
from rloc.sysid import Experience, fit_local_models


def default_target_tolerance(p: PlantParams) -> np.ndarray:
    """Per-dimension success band; ``inf`` leaves a dimension unchecked."""
    if p.name == "cartpole":
        return np.array([0.1, np.inf, 3 * DEG, 10 * DEG])
    return np.array([3 * DEG, 3 * DEG, 10 * DEG, 10 * DEG])


def success_mask(p: PlantParams, finals, tol=None) -> np.ndarray:
    tol = default_target_tolerance(p) if tol is None else np.asarray(tol, dtype=float)
    err = error_vector(np.atleast_2d(finals), p.target, p.wrap_mask)
    return np.all(np.abs(err) < tol, axis=-1)


@dataclass
class EvaluationReport:
    policy_id: str
    starts: np.ndarray
    costs: np.ndarray
    success: np.ndarray
    finals: np.ndarray
    completed: np.ndarray
    duration: float
    action_sequences: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.costs)

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))

    @property
    def sem(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.std(self.costs, ddof=1) / math.sqrt(self.n))

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success))

    def summary(self) -> dict:
        return {"policy": self.policy_id, "n_starts": self.n, "mean_cost": self.mean,
                "sem_cost": self.sem, "success_rate": self.success_rate,
                "n_success": int(self.success.sum()),
                "n_diverged": int((self.completed < self.meta.get("n_steps", 0)).sum()),
                "duration": self.duration, **self.meta}

    def rows(self):
        l = self.starts.shape[1]
        head = (["start"] + [f"x0_{i}" for i in range(l)] + ["cost", "success", "steps"]
                + [f"xf_{i}" for i in range(l)])
        body = []
        for i in range(self.n):
            body.append([i, *self.starts[i].tolist(), float(self.costs[i]),
                         int(self.success[i]), int(self.completed[i]), *self.finals[i].tolist()])
        return head, body


def nnoc_policy(centres, x, fm: FeatureMap) -> int:
    """Nearest linearisation centre over the discretised dims (wrapped angles)."""
    return nnoc_choice(centres, x, fm)


def evaluation_start_grid(p: PlantParams, n: int) -> np.ndarray:
    """``sqrt(n) x sqrt(n)`` cell-centred grid over the discretised dims."""
    k = math.isqrt(n)
    if n < 1 or k * k != n:
        raise ValueError(f"number of evaluation starts must be a perfect square, got {n}")
    return grid_states(p, grid_axes(p, (k, k), cell_centres=True))


def n_steps_for(p: PlantParams, duration: float) -> int:
    if not duration > 0:
        raise ValueError("duration must be positive")
    return int(round(duration / p.dt))


def evaluate_policy(p: PlantParams, policy: SwitchingPolicy, starts, duration: float = 10.0,
                    target_tol=None, fixed_per_start=None, record_actions: bool = False,
                    policy_id: str | None = None) -> EvaluationReport:
    """Noise-free run from every start; cost is the integral of the stage cost."""
    n_steps = n_steps_for(p, duration)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    costs, finals, completed = policy.batch(starts, n_steps, fixed_per_start)
    seqs = action_sequences(policy, starts, duration) if record_actions else None
    return EvaluationReport(policy_id or policy.name, starts, costs,
                            success_mask(p, finals, target_tol) & (completed == n_steps),
                            finals, completed, float(duration), seqs,
                            {"dt": p.dt, "n_steps": n_steps})


def action_sequences(policy: SwitchingPolicy, starts, duration: float = 10.0):
    """Per start: ``(step, action)`` at the first step and at every cell entry."""
    n_steps = n_steps_for(policy.plant, duration)
    out = []
    for x0 in np.atleast_2d(starts):
        ro = policy.rollout(x0, n_steps)
        cells = ro.cells
        entry = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1]])
        out.append([(int(k), int(ro.actions[k])) for k in entry])
    return out


def value_function_grid(p: PlantParams, policy: SwitchingPolicy, resolution=100,
                        duration: float = 10.0):
    """Cost-to-go over a cell-centred grid of the two discretised dims.

    Returns ``(axes, grid)`` with ``grid[i, j]`` for ``axes[0][i], axes[1][j]``.
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    if min(resolution) < 2:
        raise ValueError("need at least 2 points per axis")
    axes = grid_axes(p, resolution, cell_centres=True)
    starts = grid_states(p, axes)
    costs, _, _ = policy.batch(starts, n_steps_for(p, duration))
    return axes, costs.reshape(resolution)


def value_grid_csv(p: PlantParams, axes, grid) -> str:
    """Row-major CSV: one row per grid point with both axis coordinates."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d0, d1 = p.grid_dims
    w.writerow(["i", "j", f"x{d0}", f"x{d1}", "cost"])
    for i, a in enumerate(axes[0]):
        for j, b in enumerate(axes[1]):
            w.writerow([i, j, repr(float(a)), repr(float(b)), repr(float(grid[i, j]))])
    return buf.getvalue()


# -- baselines -------------------------------------------------------------

def nnoc_switching(p: PlantParams, bank: list[Controller], fm: FeatureMap,
                   weights: CostWeights) -> SwitchingPolicy:
    return SwitchingPolicy(p, bank, fm, weights, "nearest", name="nnoc")


def lqr_target_policy(p: PlantParams, controller: Controller, fm: FeatureMap,
                      weights: CostWeights) -> SwitchingPolicy:
    """Single LQR fitted at the target, used everywhere."""
    return SwitchingPolicy(p, [controller], fm, weights, "fixed", name="lqr-target")


def lqr_grid_baseline(p: PlantParams, Y: Experience, starts, fm: FeatureMap,
                      weights: CostWeights, tol_angle: float, tol_velocity: float, h: int,
                      n_H: int, duration: float = 10.0, target_tol=None, n_c: int = 100,
                      tol: float = 1e-7) -> EvaluationReport:
    """Every start is controlled by its own LQR, fitted at that start state."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    models = fit_local_models(Y, starts, tol_angle, tol_velocity, h, n_H, n_c, tol)
    bank = build_controller_bank(models, weights, p.target)
    pol = SwitchingPolicy(p, bank, fm, weights, "fixed", name="lqr-grid")
    return evaluate_policy(p, pol, starts, duration, target_tol,
                           fixed_per_start=np.arange(len(bank)))
