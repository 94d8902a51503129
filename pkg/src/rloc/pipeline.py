"""End-to-end steps shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from rloc.config import ExperimentConfig
from rloc.evaluation import evaluate_policy, evaluation_start_grid, nnoc_switching
from rloc.learning import LearnResult, learn, full_control_policy
from rloc.lqr import Controller, build_controller_bank
from rloc.policy import default_feature_map
from rloc.sysid import (Experience, LinearModel, build_naive_controls, collect_experience,
                        fit_local_models, naive_start_grid, place_centres)

log = logging.getLogger(__name__)

# independent random streams per trial
STREAM_CENTRES = 0
STREAM_NAIVE = 1
STREAM_LEARN = 2


def substream(master: int, trial: int, stream: int, extra: int = 0) -> np.random.Generator:
    """Generator for (trial, stream): identical whether trials run serially or not."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(trial), int(stream), int(extra)))
    return np.random.default_rng(ss)


def collect(cfg: ExperimentConfig, seed: int | None = None) -> Experience:
    p = cfg.make_plant()
    sc = cfg.sysid
    controls = build_naive_controls(p.n_controls, p.u_max, sc.decay_b, p.n_steps)
    starts = naive_start_grid(p, sc.n_starts)
    rng = substream(cfg.seed if seed is None else seed, 0, STREAM_NAIVE)
    return collect_experience(p, starts, controls, rng, sc.noise_std)


def fit_models(cfg: ExperimentConfig, Y: Experience, centres) -> list[LinearModel]:
    ta, tv = cfg.box()
    sc = cfg.sysid
    return fit_local_models(Y, centres, ta, tv, sc.h, sc.n_H, sc.n_c, sc.em_tol)


def make_bank(cfg: ExperimentConfig, models) -> list[Controller]:
    p = cfg.make_plant()
    return build_controller_bank(models, cfg.weights(), p.target, cfg.riccati.max_iter,
                                 cfg.riccati.tol)


def train(cfg: ExperimentConfig, bank, rng: np.random.Generator) -> LearnResult:
    p = cfg.make_plant()
    fm = default_feature_map(p, cfg.bins)
    return learn(p, bank, fm, cfg.learn_params(), rng, cfg.weights())


def rloc_and_nnoc(cfg: ExperimentConfig, bank, policy, starts=None):
    p = cfg.make_plant()
    fm = default_feature_map(p, cfg.bins)
    w = cfg.weights()
    if starts is None:
        starts = evaluation_start_grid(p, cfg.evaluation.n_starts)
    tol = cfg.target_tolerance()
    dur = cfg.evaluation.duration
    r = evaluate_policy(p, full_control_policy(policy, bank, fm, p, w), starts, dur, tol)
    n = evaluate_policy(p, nnoc_switching(p, bank, fm, w), starts, dur, tol)
    return r, n


@dataclass
class TrialResult:
    trial: int
    rows: list = field(default_factory=list)  # one dict per n_a
    curves: dict = field(default_factory=dict)  # n_a -> [(epoch, reward)]
    centres: list = field(default_factory=list)
    error: str = ""


_CTX: dict = {}


def run_trial(cfg: ExperimentConfig, Y: Experience, trial: int, n_a_values) -> TrialResult:
    """Grow the centre set one at a time; learn and evaluate for each size."""
    p = cfg.make_plant()
    res = TrialResult(trial)
    n_max = max(n_a_values)
    try:
        rng_c = substream(cfg.seed, trial, STREAM_CENTRES)
        centres: list = []
        models: list = []
        for n_a in range(1, n_max + 1):
            centres = place_centres(p, n_a, centres, rng_c)
            models += fit_models(cfg, Y, centres[len(models):])
            if n_a not in n_a_values:
                continue
            bank = make_bank(cfg, models)
            lr = train(cfg, bank, substream(cfg.seed, trial, STREAM_LEARN, n_a))
            r, n = rloc_and_nnoc(cfg, bank, lr.policy)
            res.rows.append({"trial": trial, "n_a": n_a,
                             "rloc_mean": r.mean, "rloc_sem": r.sem,
                             "rloc_success": r.success_rate,
                             "nnoc_mean": n.mean, "nnoc_sem": n.sem,
                             "nnoc_success": n.success_rate,
                             "diverged_epochs": lr.diverged_epochs})
            res.curves[n_a] = lr.curve
        res.centres = [c.tolist() for c in centres]
    except Exception as exc:  # recorded, the sweep goes on
        log.exception("trial %d failed", trial)
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _run_trial_ctx(args):
    trial, n_a_values = args
    return run_trial(_CTX["cfg"], _CTX["Y"], trial, n_a_values)


def run_sweep(cfg: ExperimentConfig, Y: Experience, trials, n_a_values, workers: int = 1):
    """All trials; results come back in trial order whatever ``workers`` is."""
    n_a_values = sorted(set(int(n) for n in n_a_values))
    jobs = [(t, n_a_values) for t in trials]
    if workers <= 1:
        return [run_trial(cfg, Y, t, n_a_values) for t, _ in jobs]
    _CTX.update(cfg=cfg, Y=Y)
    try:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_run_trial_ctx, jobs))
    finally:
        _CTX.clear()


def aggregate(results: list[TrialResult], key: str = "rloc_mean"):
    """Per n_a: number of trials, mean and SEM across trials of ``key``."""
    by_na: dict = {}
    for r in results:
        for row in r.rows:
            by_na.setdefault(row["n_a"], []).append(row[key])
    out = []
    for n_a in sorted(by_na):
        v = np.asarray(by_na[n_a], dtype=float)
        sem = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append((n_a, len(v), float(v.mean()), sem))
    return out
