"""Command line: ``rloc {sysid,train,evaluate,sweep}``.

Layout of an experiment directory::

    config.yaml               resolved configuration
    experience.json.gz        naive roll-outs (sysid)
    models/models.json        local linear models (sysid)
    policies/policy.json      centres, gains, Q-table, greedy policy (train)
    policies/curve.csv        epoch, direct reward every 6 epochs (train)
    reports/<mode>.csv|json   evaluation per start and summary (evaluate)
    sweep/*.csv|json          cost versus number of controllers (sweep)
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from rloc import pipeline
from rloc.config import ExperimentConfig
from rloc.evaluation import (action_sequences, evaluate_policy, evaluation_start_grid,
                             lqr_grid_baseline, lqr_target_policy, nnoc_switching,
                             value_function_grid, value_grid_csv)
from rloc.io import read_json, write_csv, write_json, write_text
from rloc.learning import QTable, full_control_policy
from rloc.lqr import Controller
from rloc.policy import FeatureMap, default_feature_map
from rloc.sysid import Experience, LinearModel, place_centres

log = logging.getLogger("rloc")

MODES = ("rloc", "nnoc", "lqr-target", "lqr-grid")


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.default(
        getattr(args, "plant", None) or "cartpole")
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "full_scale", False):
        cfg = cfg.full_scale()
    if getattr(args, "n_a", None) is not None:
        cfg.n_a = args.n_a
    if getattr(args, "epochs", None) is not None:
        cfg.learn.n_epochs = args.epochs
    if getattr(args, "trials", None) is not None:
        cfg.n_trials = args.trials
    return cfg


def _snapshot(cfg: ExperimentConfig, out: Path):
    write_text(out / "config.yaml", cfg.to_yaml())


def cmd_sysid(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    p = cfg.make_plant()
    Y = pipeline.collect(cfg)
    log.info("collected %d naive records (%d dropped)", Y.n_records, Y.dropped)
    centres = place_centres(p, cfg.n_a, (), pipeline.substream(cfg.seed, 0,
                                                                pipeline.STREAM_CENTRES))
    models = pipeline.fit_models(cfg, Y, centres)
    _snapshot(cfg, out)
    if not args.no_experience:
        write_json(out / "experience.json.gz", Y.to_dict(), compress=True)
    write_json(out / "models" / "models.json", {
        "kind": "model_set", "plant": p.to_dict(), "seed": cfg.seed, "n_a": cfg.n_a,
        "n_records": Y.n_records, "dropped": Y.dropped,
        "models": [m.to_dict() for m in models]})
    print(f"{Y.n_records} experience records, {len(models)} models -> {out}")
    return 0


def _load_models(out: Path) -> list[LinearModel]:
    d = read_json(out / "models" / "models.json")
    return [LinearModel.from_dict(m) for m in d["models"]]


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    p = cfg.make_plant()
    models = _load_models(out)
    bank = pipeline.make_bank(cfg, models)
    rng = pipeline.substream(cfg.seed, 0, pipeline.STREAM_LEARN, len(bank))
    res = pipeline.train(cfg, bank, rng)
    fm = default_feature_map(p, cfg.bins)
    _snapshot(cfg, out)
    write_json(out / "policies" / "policy.json", {
        "kind": "policy", "plant": p.to_dict(), "seed": cfg.seed,
        "feature_map": fm.to_dict(), "weights": cfg.weights().to_dict(),
        "controllers": [c.to_dict() for c in bank],
        "policy": res.policy.tolist(), "q": res.Q.to_dict(),
        "learn": cfg.learn_params().to_dict(), "diverged_epochs": res.diverged_epochs})
    write_csv(out / "policies" / "curve.csv", ["epoch", "reward"], res.curve)
    print(f"trained {cfg.learn.n_epochs} epochs with {len(bank)} controllers -> {out}")
    return 0


def _load_policy(out: Path):
    d = read_json(out / "policies" / "policy.json")
    bank = [Controller.from_dict(c) for c in d["controllers"]]
    return d, bank, FeatureMap.from_dict(d["feature_map"]), np.asarray(d["policy"])


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    p = cfg.make_plant()
    w = cfg.weights()
    tol = cfg.target_tolerance()
    dur = cfg.evaluation.duration
    starts = evaluation_start_grid(p, cfg.evaluation.n_starts)
    mode = args.mode
    if mode == "lqr-grid":
        ypath = out / "experience.json.gz"
        Y = Experience.from_dict(read_json(ypath))
        ta, tv = cfg.box()
        sc = cfg.sysid
        fm = default_feature_map(p, cfg.bins)
        rep = lqr_grid_baseline(p, Y, starts, fm, w, ta, tv, sc.h, sc.n_H, dur, tol,
                                sc.n_c, sc.em_tol)
        pol = None
    else:
        ppath = out / "policies" / "policy.json"
        if not ppath.exists():
            raise SystemExit(f"error: mode {mode!r} needs a trained policy at {ppath}")
        _, bank, fm, table = _load_policy(out)
        if mode == "rloc":
            pol = full_control_policy(table, bank, fm, p, w)
        elif mode == "nnoc":
            pol = nnoc_switching(p, bank, fm, w)
        else:
            if np.abs(bank[0].centre - np.asarray(p.target)).max() > 1e-12:
                raise SystemExit("error: the first controller is not centred on the target")
            pol = lqr_target_policy(p, bank[0], fm, w)
        rep = evaluate_policy(p, pol, starts, dur, tol)
    reports = out / "reports"
    head, rows = rep.rows()
    write_csv(reports / f"{mode}.csv", head, rows)
    write_json(reports / f"{mode}.json", rep.summary())
    if pol is not None and args.actions:
        seqs = action_sequences(pol, starts, dur)
        write_csv(reports / f"{mode}_actions.csv", ["start", "switch", "step", "action"],
                  [(i, j, k, a) for i, s in enumerate(seqs) for j, (k, a) in enumerate(s)])
    if pol is not None and args.trajectories:
        n = int(round(dur / p.dt))
        rows = []
        for i, x0 in enumerate(starts):
            ro = pol.rollout(x0, n)
            X, U = ro.trajectory.states, ro.trajectory.controls
            for k in range(len(U)):
                rows.append([i, k, k * p.dt, *X[k].tolist(), *U[k].tolist()])
        l, m = p.state_dim, p.n_controls
        write_csv(reports / f"{mode}_trajectories.csv",
                  ["start", "k", "t"] + [f"x{i}" for i in range(l)] + [f"u{i}" for i in range(m)],
                  rows)
    if pol is not None and args.value_grid:
        res = args.value_grid if args.value_grid > 1 else cfg.evaluation.value_grid
        axes, grid = value_function_grid(p, pol, res, dur)
        write_text(reports / f"{mode}_value_grid.csv", value_grid_csv(p, axes, grid))
    print(f"{mode}: mean cost {rep.mean:.6g} (sem {rep.sem:.3g}), "
          f"{int(rep.success.sum())}/{rep.n} reached the target")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    lo, hi = cfg.n_a_range
    if args.n_a_max is not None:
        hi = args.n_a_max
    n_a_values = list(range(lo, hi + 1))
    Y = pipeline.collect(cfg)
    results = pipeline.run_sweep(cfg, Y, range(cfg.n_trials), n_a_values, args.workers)
    _snapshot(cfg, out)
    sweep = out / "sweep"
    keys = ["trial", "n_a", "rloc_mean", "rloc_sem", "rloc_success", "nnoc_mean", "nnoc_sem",
            "nnoc_success", "diverged_epochs"]
    write_csv(sweep / "trials.csv", keys, [[row[k] for k in keys]
                                           for r in results for row in r.rows])
    rl = pipeline.aggregate(results, "rloc_mean")
    nn = {n: (c, m, s) for n, c, m, s in pipeline.aggregate(results, "nnoc_mean")}
    summary = [(n, c, m, s, *nn[n][1:]) for n, c, m, s in rl]
    write_csv(sweep / "summary.csv",
              ["n_a", "n_trials", "rloc_mean", "rloc_sem", "nnoc_mean", "nnoc_sem"], summary)
    write_csv(sweep / "curves.csv", ["trial", "n_a", "epoch", "reward"],
              [(r.trial, n_a, e, v) for r in results for n_a, c in sorted(r.curves.items())
               for e, v in c])
    write_json(sweep / "trials.json", {
        "seed": cfg.seed, "n_trials": cfg.n_trials, "n_a": n_a_values,
        "trials": [{"trial": r.trial, "centres": r.centres, "error": r.error}
                   for r in results]})
    failed = sum(1 for r in results if r.error)
    print(f"sweep: {len(results)} trials ({failed} failed), n_a {lo}..{hi} -> {sweep}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rloc", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        sp.add_argument("--plant", choices=("cartpole", "arm"),
                        help="plant defaults to use when no --config is given")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", required=True, help="experiment directory")

    sp = sub.add_parser("sysid", help="naive experience and local linear models")
    common(sp)
    sp.add_argument("--n-a", type=int, help="number of linearisation centres")
    sp.add_argument("--no-experience", action="store_true",
                    help="do not write experience.json.gz")
    sp.set_defaults(func=cmd_sysid)

    sp = sub.add_parser("train", help="learn the controller-selection policy")
    common(sp)
    sp.add_argument("--epochs", type=int, help="override the number of epochs")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a policy or a baseline")
    common(sp)
    sp.add_argument("--mode", choices=MODES, default="rloc")
    sp.add_argument("--actions", action="store_true", help="write action sequences")
    sp.add_argument("--trajectories", action="store_true", help="write full trajectories")
    sp.add_argument("--value-grid", type=int, nargs="?", const=1, default=0,
                    help="write the cost-to-go grid (optional resolution per axis)")
    sp.add_argument("--full-scale", action="store_true",
                    help="1000 x 1000 value grid")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="cost versus number of controllers over many trials")
    common(sp)
    sp.add_argument("--trials", type=int, help="number of trials")
    sp.add_argument("--n-a-max", type=int, help="largest number of controllers")
    sp.add_argument("--epochs", type=int, help="override the number of epochs")
    sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sp.add_argument("--full-scale", action="store_true", help="500 trials")
    sp.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
