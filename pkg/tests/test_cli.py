import csv
import json

import numpy as np
import pytest

from rloc.cli import main

FAST = ["--plant", "cartpole", "--seed", "3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    assert main(["sysid", *FAST, "--out", str(out)]) == 0
    assert main(["train", *FAST, "--epochs", "60", "--out", str(out)]) == 0
    return out


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_sysid_outputs(trained):
    models = json.loads((trained / "models" / "models.json").read_text())
    assert models["n_records"] == 759 and len(models["models"]) == 8
    assert (trained / "experience.json.gz").exists()
    assert (trained / "config.yaml").exists()


def test_single_model_at_target(tmp_path):
    assert main(["sysid", *FAST, "--n-a", "1", "--no-experience", "--out", str(tmp_path)]) == 0
    models = json.loads((tmp_path / "models" / "models.json").read_text())["models"]
    assert len(models) == 1 and models[0]["centre"]["data"] == [0.0, 0.0, 0.0, 0.0]
    assert not (tmp_path / "experience.json.gz").exists()


def test_train_outputs(trained):
    pol = json.loads((trained / "policies" / "policy.json").read_text())
    assert len(pol["policy"]) == 49 and len(pol["controllers"]) == 8
    rows = read_rows(trained / "policies" / "curve.csv")
    assert rows[0] == ["epoch", "reward"] and len(rows) == 1 + 10


def test_zero_epochs(tmp_path, trained):
    for name in ("models",):
        (tmp_path / name).mkdir()
        (tmp_path / name / "models.json").write_bytes((trained / name / "models.json").read_bytes())
    assert main(["train", *FAST, "--epochs", "0", "--out", str(tmp_path)]) == 0
    pol = json.loads((tmp_path / "policies" / "policy.json").read_text())
    assert np.all(np.asarray(pol["q"]["values"]) == 0)
    assert read_rows(tmp_path / "policies" / "curve.csv") == [["epoch", "reward"]]


@pytest.mark.parametrize("mode", ["rloc", "nnoc", "lqr-target"])
def test_evaluate_modes(trained, mode):
    assert main(["evaluate", *FAST, "--mode", mode, "--out", str(trained)]) == 0
    rows = read_rows(trained / "reports" / f"{mode}.csv")
    assert len(rows) == 101
    summary = json.loads((trained / "reports" / f"{mode}.json").read_text())
    assert summary["n_starts"] == 100 and summary["n_steps"] == 1000


def test_modes_share_start_grid(trained):
    for mode in ("rloc", "nnoc"):
        main(["evaluate", *FAST, "--mode", mode, "--out", str(trained)])
    a = read_rows(trained / "reports" / "rloc.csv")
    b = read_rows(trained / "reports" / "nnoc.csv")
    assert [r[1:5] for r in a] == [r[1:5] for r in b]


def test_lqr_target_fails_from_hanging(trained):
    main(["evaluate", *FAST, "--mode", "lqr-target", "--out", str(trained)])
    rows = read_rows(trained / "reports" / "lqr-target.csv")
    head = rows[0]
    hanging = [r for r in rows[1:] if abs(float(r[head.index("x0_2")])) > 2.8]
    assert hanging and all(r[head.index("success")] == "0" for r in hanging)


def test_evaluate_extras(trained):
    assert main(["evaluate", *FAST, "--mode", "rloc", "--actions", "--trajectories",
                 "--value-grid", "8", "--out", str(trained)]) == 0
    acts = read_rows(trained / "reports" / "rloc_actions.csv")
    assert acts[0] == ["start", "switch", "step", "action"]
    starts = {r[0] for r in acts[1:]}
    assert len(starts) == 100
    grid = read_rows(trained / "reports" / "rloc_value_grid.csv")
    assert len(grid) == 65
    traj = read_rows(trained / "reports" / "rloc_trajectories.csv")
    assert traj[0][:3] == ["start", "k", "t"]


def test_evaluate_without_policy_errors(tmp_path):
    with pytest.raises(SystemExit):
        main(["evaluate", *FAST, "--mode", "rloc", "--out", str(tmp_path)])


def test_missing_models_reports_error(tmp_path, capsys):
    assert main(["train", *FAST, "--out", str(tmp_path)]) == 2
    assert "models.json" in capsys.readouterr().err


def test_lqr_grid_mode(trained):
    assert main(["evaluate", *FAST, "--mode", "lqr-grid", "--out", str(trained)]) == 0
    assert len(read_rows(trained / "reports" / "lqr-grid.csv")) == 101


def test_sweep_layout_and_workers(tmp_path):
    args = ["sweep", *FAST, "--trials", "2", "--n-a-max", "3", "--epochs", "12"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--workers", "2", "--out", str(tmp_path / "b")]) == 0
    for name in ("trials.csv", "summary.csv", "curves.csv", "trials.json"):
        assert (tmp_path / "a" / "sweep" / name).read_bytes() == \
            (tmp_path / "b" / "sweep" / name).read_bytes()
    summary = read_rows(tmp_path / "a" / "sweep" / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["1", "2", "3"]
    assert all(r[1] == "2" for r in summary[1:])
    meta = json.loads((tmp_path / "a" / "sweep" / "trials.json").read_text())
    for t in meta["trials"]:
        assert t["error"] == "" and len(t["centres"]) == 3
        assert t["centres"][0] == [0.0, 0.0, 0.0, 0.0]
