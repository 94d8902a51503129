"""Benchmark plants: a planar two-link arm and a cart-pole.

Both are integrated with fixed-step RK4 under a zero-order hold on the
control.  Cart-pole states are ``(z, z_dot, theta, theta_dot)`` with
``theta = 0`` upright, arm states are ``(theta1, theta2, theta1_dot,
theta2_dot)``.  All quantities are SI (radians, seconds, newtons).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, ClassVar, Sequence

import numpy as np
import yaml

from rloc import _kernels as K

DEG = math.pi / 180.0


class IntegrationDiverged(RuntimeError):
    """The simulated state became non-finite."""


class InvalidParameters(ValueError):
    pass


@dataclass(frozen=True)
class PlantParams:
    """Fields shared by both plants; see :class:`ArmParams`, :class:`CartPoleParams`."""

    dt: float = 0.01
    n_steps: int = 300
    u_min: float = -1.0
    u_max: float = 1.0
    target: tuple = (0.0, 0.0, 0.0, 0.0)
    noise_std: float = 0.0

    name = "plant"
    kind = -1
    n_controls = 1
    state_dim = 4
    # indices of the two discretised state dimensions and their ranges
    grid_dims: ClassVar[tuple] = ()
    grid_ranges: ClassVar[tuple] = ()
    grid_periodic: ClassVar[tuple] = ()
    angle_dims: ClassVar[tuple] = ()
    velocity_dims: ClassVar[tuple] = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameters("dt must be positive")
        if not self.u_min < self.u_max:
            raise InvalidParameters("u_min must be below u_max")
        if len(self.target) != self.state_dim:
            raise InvalidParameters("target has the wrong length")

    def consts(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def wrap_mask(self) -> np.ndarray:
        """Per-state flag: error in this dimension is an angle on a circle."""
        return np.zeros(self.state_dim, dtype=np.bool_)

    @property
    def u_bounds(self):
        m = self.n_controls
        return np.full(m, float(self.u_min)), np.full(m, float(self.u_max))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"] = list(self.target)
        d["plant"] = self.name
        return d


@dataclass(frozen=True)
class ArmParams(PlantParams):
    """Planar two-link arm, link 2 parameters about the elbow."""

    l1: float = 0.3
    l2: float = 0.33
    m1: float = 1.4
    m2: float = 2.5
    c1: float = 0.11
    c2: float = 0.165
    i1: float = 0.025
    i2: float = 0.072
    friction: tuple = ((0.5, 0.1), (0.1, 0.5))
    u_min: float = -10.0
    u_max: float = 10.0
    target: tuple = (90 * DEG, 90 * DEG, 0.0, 0.0)

    name = "arm"
    kind = K.ARM
    n_controls = 2
    grid_dims: ClassVar[tuple] = (0, 1)
    grid_ranges: ClassVar[tuple] = ((0.0, math.pi), (0.0, math.pi))
    grid_periodic: ClassVar[tuple] = (False, False)
    angle_dims: ClassVar[tuple] = (0, 1)
    velocity_dims: ClassVar[tuple] = (2, 3)

    def __post_init__(self):
        super().__post_init__()
        for v in (self.l1, self.l2, self.m1, self.m2, self.i1, self.i2):
            if not v > 0:
                raise InvalidParameters("masses, lengths and inertias must be positive")

    def consts(self):
        b = np.asarray(self.friction, dtype=float)
        return np.array([self.l1, self.l2, self.m1, self.m2, self.c1, self.c2,
                         self.i1, self.i2, b[0, 0], b[0, 1], b[1, 0], b[1, 1]])

    def to_dict(self):
        d = super().to_dict()
        d["friction"] = [list(r) for r in self.friction]
        return d


@dataclass(frozen=True)
class CartPoleParams(PlantParams):
    """Cart-pole with a point mass at distance ``l`` from the pivot."""

    l: float = 0.6
    m_p: float = 0.5
    m_c: float = 0.5
    g: float = 9.80665
    b_p: float = 0.0
    b_c: float = 0.1
    u_min: float = -20.0
    u_max: float = 20.0

    name = "cartpole"
    kind = K.CARTPOLE
    n_controls = 1
    grid_dims: ClassVar[tuple] = (2, 3)
    grid_ranges: ClassVar[tuple] = ((-math.pi, math.pi), (-250 * DEG, 250 * DEG))
    grid_periodic: ClassVar[tuple] = (True, False)
    angle_dims: ClassVar[tuple] = (2,)
    velocity_dims: ClassVar[tuple] = (3,)

    def __post_init__(self):
        super().__post_init__()
        for v in (self.l, self.m_p, self.m_c):
            if not v > 0:
                raise InvalidParameters("masses and lengths must be positive")

    def consts(self):
        return np.array([self.l, self.m_p, self.m_c, self.g, self.b_p, self.b_c])

    @property
    def wrap_mask(self):
        return np.array([False, False, True, False])

    def energy(self, x) -> float:
        """Total mechanical energy, zero potential at the pivot height."""
        _, zd, th, thd = np.asarray(x, dtype=float)
        kin = (0.5 * (self.m_c + self.m_p) * zd ** 2
               + self.m_p * self.l * zd * thd * math.cos(th)
               + 0.5 * self.m_p * self.l ** 2 * thd ** 2)
        return kin + self.m_p * self.g * self.l * math.cos(th)


PLANTS = {"arm": ArmParams, "cartpole": CartPoleParams}


def make_plant(name: str, **overrides) -> PlantParams:
    try:
        cls = PLANTS[name]
    except KeyError:
        raise InvalidParameters(f"unknown plant {name!r}") from None
    if "target" in overrides:
        overrides["target"] = tuple(float(v) for v in overrides["target"])
    if "friction" in overrides:
        overrides["friction"] = tuple(tuple(float(v) for v in r) for r in overrides["friction"])
    return cls(**overrides)


def plant_from_dict(d: dict) -> PlantParams:
    d = dict(d)
    name = d.pop("plant")
    return make_plant(name, **d)


def load_plant(path) -> PlantParams:
    """Read a YAML/JSON plant file (SI units, keys as in :meth:`PlantParams.to_dict`)."""
    with open(path) as fh:
        return plant_from_dict(yaml.safe_load(fh))


def _vec(x, n, what):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape[0] != n:
        raise ValueError(f"{what} must have length {n}, got {a.shape[0]}")
    return a


def saturate(u, p: PlantParams) -> np.ndarray:
    u = _vec(u, p.n_controls, "control")
    return np.clip(u, p.u_min, p.u_max)


def arm_derivative(x, u, p: ArmParams) -> np.ndarray:
    x = _vec(x, 4, "state")
    u = _vec(u, 2, "control")
    c = p.consts()
    h = p.m2 * p.l1 * p.c2 * math.cos(x[1])
    m11 = p.i1 + p.i2 + p.m2 * p.l1 ** 2 + 2 * h
    m12 = p.i2 + h
    if abs(m11 * p.i2 - m12 * m12) < 1e-12 * max(1.0, m11 * p.i2):
        raise InvalidParameters("arm inertia matrix is singular")
    out = np.empty(4)
    K.arm_rhs(x, u, c, out)
    return out


def cartpole_derivative(x, u, p: CartPoleParams) -> np.ndarray:
    x = _vec(x, 4, "state")
    u = _vec(u, 1, "control")
    out = np.empty(4)
    K.cartpole_rhs(x, u, p.consts(), out)
    return out


def derivative(x, u, p: PlantParams) -> np.ndarray:
    if p.kind == K.ARM:
        return arm_derivative(x, u, p)
    return cartpole_derivative(x, u, p)


def rk4_step(f: Callable, x, u, dt: float, constrain: Callable | None = None) -> np.ndarray:
    """One classic RK4 step of ``x' = f(x, u)`` with ``u`` held constant.

    ``constrain`` post-processes the new state (angle wrapping, joint limits).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(x, u), dtype=float)
    k2 = np.asarray(f(x + 0.5 * dt * k1, u), dtype=float)
    k3 = np.asarray(f(x + 0.5 * dt * k2, u), dtype=float)
    k4 = np.asarray(f(x + dt * k3, u), dtype=float)
    out = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    if constrain is not None:
        out = constrain(out)
    if not np.all(np.isfinite(out)):
        raise IntegrationDiverged("RK4 step produced a non-finite state")
    return out


def plant_step(x, u, p: PlantParams) -> np.ndarray:
    """Saturate ``u`` and advance the plant one ``p.dt`` (compiled path)."""
    x = _vec(x, p.state_dim, "state")
    u = saturate(u, p)
    out = np.empty(p.state_dim)
    K.rk4(p.kind, x, u, p.consts(), p.dt, out)
    K.constrain(p.kind, out)
    if not K.all_finite(out):
        raise IntegrationDiverged("RK4 step produced a non-finite state")
    return out


def constrain_state(x, p: PlantParams) -> np.ndarray:
    out = np.array(x, dtype=float)
    K.constrain(p.kind, out)
    return out


def wrap_angle(a):
    """Angle(s) mapped onto (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    return a - 2 * np.pi * np.ceil((a - np.pi) / (2 * np.pi))


@dataclass
class Trajectory:
    states: np.ndarray  # (n, l)
    controls: np.ndarray  # (n - 1, m)
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.controls.shape[0] != self.states.shape[0] - 1:
            raise ValueError("need exactly one control per transition")

    @property
    def times(self):
        return np.arange(self.states.shape[0]) * self.dt

    def to_csv(self, path):
        """One row per step: k, t, state..., control... (blank on the last row)."""
        l = self.states.shape[1]
        m = self.controls.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t"] + [f"x{i}" for i in range(l)] + [f"u{j}" for j in range(m)])
            for k, t in enumerate(self.times):
                row = [k, repr(float(t))] + [repr(float(v)) for v in self.states[k]]
                if k < self.controls.shape[0]:
                    row += [repr(float(v)) for v in self.controls[k]]
                else:
                    row += [""] * m
                w.writerow(row)


def simulate(p: PlantParams, x0, policy, n_steps: int, noise_std: float | None = None,
             rng: np.random.Generator | None = None) -> Trajectory:
    """Roll the plant forward ``n_steps - 1`` transitions from ``x0``.

    ``policy`` is either a fixed control vector or a callable ``x -> u``
    queried at every step.  Controls are saturated before use.  After each
    RK4 step iid Gaussian noise with std ``noise_std`` (defaults to
    ``p.noise_std``) is added to every state entry.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    noise_std = p.noise_std if noise_std is None else noise_std
    if noise_std > 0 and rng is None:
        raise ValueError("a generator is required for noisy simulation")
    x = constrain_state(_vec(x0, p.state_dim, "initial state"), p)
    states = np.empty((n_steps, p.state_dim))
    controls = np.empty((n_steps - 1, p.n_controls))
    states[0] = x
    fixed = None if callable(policy) else saturate(policy, p)
    c = p.consts()
    nxt = np.empty(p.state_dim)
    for k in range(n_steps - 1):
        u = fixed if fixed is not None else saturate(policy(x), p)
        K.rk4(p.kind, x, u, c, p.dt, nxt)
        if noise_std > 0:
            nxt = nxt + noise_std * rng.standard_normal(p.state_dim)
        K.constrain(p.kind, nxt)
        if not K.all_finite(nxt):
            raise IntegrationDiverged(f"state became non-finite at step {k + 1}")
        x = nxt.copy()
        states[k + 1] = x
        controls[k] = u
    return Trajectory(states, controls, p.dt)


def simulate_open_loop(p: PlantParams, x0, controls: np.ndarray, noise_std: float = 0.0,
                       rng: np.random.Generator | None = None) -> Trajectory:
    """Apply a precomputed control sequence of shape (n - 1, m)."""
    controls = np.asarray(controls, dtype=float)
    it = iter(controls)
    return simulate(p, x0, lambda _x: next(it), controls.shape[0] + 1, noise_std, rng)


def kinetic_energy_arm(x, p: ArmParams) -> float:
    x = np.asarray(x, dtype=float)
    h = p.m2 * p.l1 * p.c2 * math.cos(x[1])
    M = np.array([[p.i1 + p.i2 + p.m2 * p.l1 ** 2 + 2 * h, p.i2 + h], [p.i2 + h, p.i2]])
    v = x[2:]
    return 0.5 * float(v @ M @ v)


def grid_axes(p: PlantParams, counts: Sequence[int], cell_centres: bool):
    """Equally spaced coordinates along each discretised dimension.

    Periodic dimensions and ``cell_centres=True`` use bin centres; other
    dimensions include both range ends.  A single point sits at the middle.
    """
    axes = []
    for (lo, hi), per, n in zip(p.grid_ranges, p.grid_periodic, counts):
        if n == 1:
            axes.append(np.array([0.5 * (lo + hi)]))
        elif per or cell_centres:
            axes.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
        else:
            axes.append(np.linspace(lo, hi, n))
    return axes


def grid_states(p: PlantParams, axes) -> np.ndarray:
    """States on the product grid of ``axes`` (first axis major), other dims zero."""
    a0, a1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    out = np.zeros((a0.size, p.state_dim))
    out[:, p.grid_dims[0]] = a0.ravel()
    out[:, p.grid_dims[1]] = a1.ravel()
    return out
