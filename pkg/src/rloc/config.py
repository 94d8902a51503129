"""Experiment configuration with the reference parameter values as defaults.

Angles and angular velocities are written in degrees (as in the parameter
tables), everything else is SI.  Conversion to radians happens when the
plant and the tolerances are built.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from rloc.learning import LearnParams
from rloc.lqr import CostWeights
from rloc.plants import DEG, PlantParams, make_plant

PLANT_DEFAULTS = {
    "arm": {
        "plant": {"l1": 0.3, "l2": 0.33, "m1": 1.4, "m2": 2.5, "c1": 0.11, "c2": 0.165,
                  "i1": 0.025, "i2": 0.072, "friction": [[0.5, 0.1], [0.1, 0.5]],
                  "u_min": -10.0, "u_max": 10.0, "dt": 0.01, "n_steps": 300,
                  "target": [90.0, 90.0, 0.0, 0.0]},
        "sysid": {"n_starts": 790, "h": 7, "n_H": 6500},
        "cost": {"W": [30.0, 30.0, 0.0, 0.0], "Z": [1.0, 1.0]},
        "bins": [6, 6],
        "n_a": 5,
        "tolerance": [3.0, 3.0, 10.0, 10.0],
    },
    "cartpole": {
        "plant": {"l": 0.6, "m_p": 0.5, "m_c": 0.5, "g": 9.80665, "b_p": 0.0, "b_c": 0.1,
                  "u_min": -20.0, "u_max": 20.0, "dt": 0.01, "n_steps": 300,
                  "target": [0.0, 0.0, 0.0, 0.0]},
        "sysid": {"n_starts": 253, "h": 20, "n_H": 170},
        "cost": {"W": [30.0, 3.0, 2000.0, 200.0], "Z": [1.0]},
        "bins": [7, 7],
        "n_a": 8,
        "tolerance": [0.1, None, 3.0, 10.0],
    },
}


@dataclass
class SysidConfig:
    n_starts: int = 253
    decay_b: float = 10.0
    h: int = 20
    n_H: int = 170
    tol_angle_deg: float = 20.0
    tol_velocity_deg: float = 120.0
    n_c: int = 100
    em_tol: float = 1e-7
    noise_std: float = 0.0


@dataclass
class RiccatiConfig:
    max_iter: int = 10_000
    tol: float = 1e-10


@dataclass
class LearnConfig:
    epsilon: float = 0.1
    nu: float = 0.1
    gamma: float = 1.0
    alpha: float = 1.0
    mu: float = 0.5
    n_epochs: int = 2000
    noise_std: float = 1e-3


@dataclass
class EvalConfig:
    n_starts: int = 100
    duration: float = 10.0
    value_grid: int = 100
    tolerance: list = field(default_factory=lambda: [0.1, None, 3.0, 10.0])


@dataclass
class ExperimentConfig:
    plant: str = "cartpole"
    plant_params: dict = field(default_factory=dict)
    sysid: SysidConfig = field(default_factory=SysidConfig)
    cost: dict = field(default_factory=dict)
    riccati: RiccatiConfig = field(default_factory=RiccatiConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    bins: list = field(default_factory=lambda: [7, 7])
    n_a: int = 8
    n_a_range: list = field(default_factory=lambda: [1, 10])
    n_trials: int = 50
    seed: int = 0

    # -- construction
    @classmethod
    def default(cls, plant: str = "cartpole") -> "ExperimentConfig":
        if plant not in PLANT_DEFAULTS:
            raise ValueError(f"unknown plant {plant!r}")
        d = copy.deepcopy(PLANT_DEFAULTS[plant])
        return cls(plant=plant, plant_params=d["plant"], sysid=SysidConfig(**d["sysid"]),
                   cost=d["cost"], evaluation=EvalConfig(tolerance=d["tolerance"]),
                   bins=d["bins"], n_a=d["n_a"])

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        base = cls.default(d.get("plant", "cartpole")).to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for k, v in d.items():
            if isinstance(base[k], dict) and isinstance(v, dict):
                extra = set(v) - set(base[k]) if k not in ("plant_params",) else set()
                if extra:
                    raise ValueError(f"unknown keys in {k}: {sorted(extra)}")
                base[k].update(v)
            else:
                base[k] = v
        return cls(plant=base["plant"], plant_params=base["plant_params"],
                   sysid=SysidConfig(**base["sysid"]), cost=base["cost"],
                   riccati=RiccatiConfig(**base["riccati"]), learn=LearnConfig(**base["learn"]),
                   evaluation=EvalConfig(**base["evaluation"]), bins=list(base["bins"]),
                   n_a=int(base["n_a"]), n_a_range=list(base["n_a_range"]),
                   n_trials=int(base["n_trials"]), seed=int(base["seed"]))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def full_scale(self) -> "ExperimentConfig":
        """500 trials and a 1000 x 1000 value grid."""
        c = copy.deepcopy(self)
        c.n_trials = 500
        c.evaluation.value_grid = 1000
        return c

    # -- derived objects
    def make_plant(self) -> PlantParams:
        kw = dict(self.plant_params)
        proto = make_plant(self.plant)
        if "target" in kw:
            kw["target"] = _table_to_si(proto, kw["target"])
        return make_plant(self.plant, **kw)

    def weights(self) -> CostWeights:
        return CostWeights.diag(self.cost["W"], self.cost["Z"])

    def learn_params(self) -> LearnParams:
        p = self.make_plant()
        return LearnParams(n_steps=p.n_steps, **asdict(self.learn))

    def box(self):
        return self.sysid.tol_angle_deg * DEG, self.sysid.tol_velocity_deg * DEG

    def target_tolerance(self) -> np.ndarray:
        p = make_plant(self.plant)
        vals = [np.inf if v is None else float(v) for v in self.evaluation.tolerance]
        return _table_to_si(p, vals, as_array=True)


def _table_to_si(p: PlantParams, values, as_array: bool = False):
    """Degrees to radians for angle and angular-velocity entries."""
    vals = [float(v) for v in values]
    if len(vals) != p.state_dim:
        raise ValueError(f"expected {p.state_dim} entries, got {len(vals)}")
    for d in (*p.angle_dims, *p.velocity_dims):
        vals[d] *= DEG
    return np.array(vals) if as_array else tuple(vals)


def config_field_names():
    return [f.name for f in fields(ExperimentConfig)]


def write_default(path, plant: str = "cartpole") -> Path:
    path = Path(path)
    path.write_text(ExperimentConfig.default(plant).to_yaml())
    return path
