"""Local linear models from naive ("motor babbling") experience.

Pipeline: harmonically decaying open-loop controls are applied from a grid
of start states, the resulting experience is cut into short sub-trajectories
that stay inside a box around a linearisation centre, and a linear dynamical
system with inputs is fitted to them by expectation maximisation with the
observation matrix fixed to the identity.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from rloc import _kernels as K
from rloc.plants import DEG, PlantParams, grid_axes, grid_states, plant_from_dict, wrap_angle

log = logging.getLogger(__name__)

NAIVE_SET = (0, 1, -1)


@dataclass
class NaiveControlTensor:
    controls: np.ndarray  # (c, n_K - 1, m)
    signs: np.ndarray  # (c, m), entries of NAIVE_SET
    decay: float
    u_max: float

    @property
    def count(self) -> int:
        return self.controls.shape[0]


def build_naive_controls(m: int, u_max: float, b: float, n_K: int) -> NaiveControlTensor:
    """All 3**m sign patterns, each decaying as d * b * u_max / (b + k - 1)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if not b > 0:
        raise ValueError("decay b must be positive")
    signs = np.array(list(itertools.product(NAIVE_SET, repeat=m)), dtype=float)
    k = np.arange(1, n_K)
    profile = b * u_max / (b + k - 1.0)
    controls = signs[:, None, :] * profile[None, :, None]
    return NaiveControlTensor(controls, signs, float(b), float(u_max))


def grid_factors(n: int) -> tuple[int, int]:
    """Most nearly square factor pair ``(a, b)`` of ``n`` with ``a >= b``."""
    b = int(math.isqrt(n))
    while n % b:
        b -= 1
    return n // b, b


def naive_start_grid(p: PlantParams, n_starts: int) -> np.ndarray:
    """``n_starts`` equally spaced states over the two discretised dimensions.

    The larger factor goes on the angle axis (cart-pole 253 -> 23 x 11).
    """
    if n_starts < 1:
        raise ValueError("need at least one start state")
    counts = grid_factors(n_starts)
    return grid_states(p, grid_axes(p, counts, cell_centres=False))


@dataclass
class Experience:
    """Naive roll-outs: ``controls[r, k]`` drives ``states[r, k]`` to ``states[r, k + 1]``."""

    states: np.ndarray  # (n_N, n_K, l)
    controls: np.ndarray  # (n_N, n_K - 1, m)
    plant: PlantParams
    dropped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return self.states.shape[0]

    def paired(self) -> np.ndarray:
        """The (l + m) x (n_K - 1) x n_N tensor of (next state, control) pairs."""
        y = np.concatenate([self.states[:, 1:, :], self.controls], axis=2)
        return np.transpose(y, (2, 1, 0))

    def to_dict(self) -> dict:
        n, T, l = self.states.shape
        return {
            "kind": "experience",
            "plant": self.plant.to_dict(),
            "dropped": self.dropped,
            "meta": self.meta,
            "states": {"shape": [n, T, l], "data": self.states.ravel().tolist()},
            "controls": {"shape": list(self.controls.shape),
                         "data": self.controls.ravel().tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Experience":
        s = np.asarray(d["states"]["data"], dtype=float).reshape(d["states"]["shape"])
        c = np.asarray(d["controls"]["data"], dtype=float).reshape(d["controls"]["shape"])
        return cls(s, c, plant_from_dict(d["plant"]), d.get("dropped", 0), d.get("meta", {}))


def collect_experience(p: PlantParams, starts, controls: NaiveControlTensor,
                       rng: np.random.Generator | None = None,
                       noise_std: float | None = None) -> Experience:
    """Apply every naive control sequence from every start (record = start * c + seq)."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape[0] == 0 or controls.count == 0:
        raise ValueError("need at least one start and one control sequence")
    noise_std = p.noise_std if noise_std is None else noise_std
    seq = np.ascontiguousarray(controls.controls)
    n_rec = starts.shape[0] * controls.count
    n_K = seq.shape[1] + 1
    if noise_std > 0:
        if rng is None:
            raise ValueError("a generator is required for noisy collection")
        noise = noise_std * rng.standard_normal((n_rec, n_K - 1, p.state_dim))
    else:
        noise = np.zeros((0, 1, p.state_dim))
    states = np.zeros((n_rec, n_K, p.state_dim))
    ok = np.zeros(n_rec, dtype=np.bool_)
    umin, umax = p.u_bounds
    K.open_loop_batch(p.kind, p.consts(), p.dt, umin, umax, starts, seq, noise, states, ok)
    dropped = int((~ok).sum())
    if dropped:
        log.warning("dropped %d diverged naive records", dropped)
    ctrl = np.clip(np.tile(seq, (starts.shape[0], 1, 1)), umin, umax)
    return Experience(states[ok], ctrl[ok], p, dropped,
                      {"n_starts": int(starts.shape[0]), "n_sequences": controls.count,
                       "noise_std": float(noise_std)})


@dataclass
class SubTrajectorySet:
    states: np.ndarray  # (n_H, h, l), periodic angles unwrapped around the centre
    controls: np.ndarray  # (n_H, h - 1, m)
    centre: np.ndarray
    tol_angle: float
    tol_velocity: float
    found: int = 0

    @property
    def count(self) -> int:
        return self.states.shape[0]


def in_box(states: np.ndarray, centre, p: PlantParams, tol_angle: float,
           tol_velocity: float) -> np.ndarray:
    """Boolean mask over the leading axes of ``states``: inside the tolerance box."""
    centre = np.asarray(centre, dtype=float)
    wrap = p.wrap_mask
    ok = np.ones(states.shape[:-1], dtype=bool)
    for d in p.angle_dims:
        e = states[..., d] - centre[d]
        if wrap[d]:
            e = wrap_angle(e)
        ok &= np.abs(e) <= tol_angle
    for d in p.velocity_dims:
        ok &= np.abs(states[..., d] - centre[d]) <= tol_velocity
    return ok


def sample_subtrajectories(Y: Experience, centre, tol_angle: float, tol_velocity: float,
                           h: int, n_H: int) -> SubTrajectorySet:
    """Non-overlapping length-``h`` windows whose states all lie in the box.

    Each maximal in-box run is cut greedily from the left.  When more than
    ``n_H`` segments exist, ``n_H`` of them are taken at evenly spaced
    positions of the scan order.
    """
    if h < 2:
        raise ValueError("sub-trajectory length must be at least 2")
    p = Y.plant
    centre = np.asarray(centre, dtype=float)
    mask = in_box(Y.states, centre, p, tol_angle, tol_velocity)
    picks = []
    padded = np.zeros((mask.shape[0], mask.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    edges = np.diff(padded, axis=1)
    rec_on, start_on = np.nonzero(edges == 1)
    _, stop_on = np.nonzero(edges == -1)
    for r, a, b in zip(rec_on, start_on, stop_on):
        for k in range(a, b - h + 1, h):
            picks.append((r, k))
    found = len(picks)
    if found > n_H:
        idx = np.unique(np.round(np.linspace(0, found - 1, n_H)).astype(int))
        picks = [picks[i] for i in idx]
    l, m = Y.states.shape[2], Y.controls.shape[2]
    seg_x = np.empty((len(picks), h, l))
    seg_u = np.empty((len(picks), h - 1, m))
    for i, (r, k) in enumerate(picks):
        seg_x[i] = Y.states[r, k:k + h]
        seg_u[i] = Y.controls[r, k:k + h - 1]
    wrap = p.wrap_mask
    for d in np.flatnonzero(wrap):
        seg_x[..., d] = centre[d] + wrap_angle(seg_x[..., d] - centre[d])
    return SubTrajectorySet(seg_x, seg_u, centre, tol_angle, tol_velocity, found)


@dataclass
class LinearModel:
    """x_{k+1} = A x_k + B u_k + w,  observed through identity plus noise v."""

    centre: np.ndarray
    A: np.ndarray
    B: np.ndarray
    sigma_w: np.ndarray  # diagonal of the state-noise covariance
    sigma_v: np.ndarray  # diagonal of the observation-noise covariance
    log_likelihood: list = field(default_factory=list)
    n_segments: int = 0
    regularised: bool = False

    @property
    def cycles(self) -> int:
        return len(self.log_likelihood)

    def to_dict(self) -> dict:
        def mat(a):
            a = np.atleast_1d(np.asarray(a, dtype=float))
            return {"shape": list(a.shape), "data": a.ravel().tolist()}

        return {
            "kind": "linear_model",
            "centre": mat(self.centre),
            "A": mat(self.A),
            "B": mat(self.B),
            "sigma_w": mat(self.sigma_w),
            "sigma_v": mat(self.sigma_v),
            "log_likelihood": [float(v) for v in self.log_likelihood],
            "n_segments": int(self.n_segments),
            "regularised": bool(self.regularised),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        def arr(e):
            return np.asarray(e["data"], dtype=float).reshape(e["shape"])

        return cls(arr(d["centre"]), arr(d["A"]), arr(d["B"]), arr(d["sigma_w"]),
                   arr(d["sigma_v"]), list(d["log_likelihood"]), d["n_segments"],
                   d["regularised"])


def _least_squares(X, U, ridge):
    l = X.shape[2]
    m = U.shape[2]
    Z = np.concatenate([X[:, :-1].reshape(-1, l), U.reshape(-1, m)], axis=1)
    Y = X[:, 1:].reshape(-1, l)
    G = Z.T @ Z
    G += ridge * max(1.0, np.trace(G) / G.shape[0]) * np.eye(l + m)
    AB = np.linalg.solve(G, Z.T @ Y).T
    resid = Y - Z @ AB.T
    return AB[:, :l], AB[:, l:], np.mean(resid ** 2, axis=0)


def ldsi_fit(segments: SubTrajectorySet, n_c: int = 100, tol: float = 1e-7,
             ridge: float = 1e-8) -> LinearModel:
    """EM for z_{k+1} = A z_k + B u_k + w,  x_k = z_k + v, diagonal noise covariances.

    EM starts from the least-squares regression of x_{k+1} on (x_k, u_k), with
    the residual variance as state noise and a hundredth of it as
    observation noise.  The hidden state at the start of each segment has its
    first observation as mean and a fixed diagonal covariance (the
    per-dimension data variance).  Stops after ``n_c`` cycles or once the
    relative log-likelihood gain falls below ``tol``.
    """
    X = np.ascontiguousarray(segments.states, dtype=float)
    U = np.ascontiguousarray(segments.controls, dtype=float)
    if X.ndim != 3 or X.shape[0] < 1 or X.shape[1] < 2:
        raise ValueError("need at least one segment of length >= 2")
    S, T, l = X.shape
    if U.ndim != 3 or U.shape[:2] != (S, T - 1):
        raise ValueError("controls must be (n_segments, h - 1, m)")
    m = U.shape[2]
    scale = np.var(X.reshape(-1, l), axis=0)
    floor = 1e-14 * (1.0 + scale)
    V0 = np.diag(scale + 1e-6 * (1.0 + scale))
    n_trans = S * (T - 1)
    Uf = U.reshape(-1, m)
    Suu = Uf.T @ Uf
    Phi_obs = np.block([[np.einsum("sti,stj->ij", X[:, :-1], X[:, :-1]), X[:, :-1].reshape(-1, l).T @ Uf],
                        [Uf.T @ X[:, :-1].reshape(-1, l), Suu]])
    regularised = np.linalg.cond(Phi_obs) > 1e12
    if regularised:
        warnings.warn("degenerate sub-trajectory data; adding ridge to the regression",
                      RuntimeWarning, stacklevel=2)
    A, B, Q = _least_squares(X, U, ridge if regularised else 0.0)
    Q = np.maximum(Q, floor)
    R = np.maximum(1e-2 * Q, floor)
    trace = []
    eye = np.eye(l + m)
    for cycle in range(n_c):
        ll, mu, P, Pc = K.kalman_smooth(X, U, A, B, Q, R, V0)
        trace.append(float(ll))
        if cycle > 0 and ll - trace[-2] < tol * abs(trace[-2]):
            break
        z0 = mu[:, :-1].reshape(-1, l)
        z1 = mu[:, 1:].reshape(-1, l)
        Szz = S * P[:-1].sum(axis=0) + z0.T @ z0
        Szu = z0.T @ Uf
        S10 = S * Pc.sum(axis=0) + z1.T @ z0
        S1u = z1.T @ Uf
        S11 = S * P[1:].sum(axis=0) + z1.T @ z1
        Phi = np.block([[Szz, Szu], [Szu.T, Suu]])
        Psi = np.hstack([S10, S1u])
        if regularised:
            Phi = Phi + ridge * max(1.0, np.trace(Phi) / Phi.shape[0]) * eye
        AB = np.linalg.solve(Phi, Psi.T).T
        A, B = AB[:, :l], AB[:, l:]
        resid = S11 - AB @ Psi.T - Psi @ AB.T + AB @ Phi @ AB.T
        Q = np.maximum(np.diag(resid) / n_trans, floor)
        obs = ((X - mu) ** 2).sum(axis=(0, 1))
        R = np.maximum((obs + S * np.einsum("tii->i", P)) / (S * T), floor)
    return LinearModel(np.asarray(segments.centre, dtype=float).copy(), A, B, Q, R,
                       trace, S, bool(regularised))


def place_centres(p: PlantParams, n_a: int, previous=(), rng: np.random.Generator | None = None):
    """Linearisation centres: the target first, then uniform draws of the angles.

    Only the discretised angle dimensions are drawn (cart-pole ``(0, 0, theta, 0)``,
    arm ``(theta1, theta2, 0, 0)``); everything else is zero.  ``previous``
    centres are kept as a prefix and only the missing ones are drawn.
    """
    if n_a < 1:
        raise ValueError("need at least one centre")
    centres = [np.asarray(c, dtype=float).copy() for c in previous][:n_a]
    if not centres:
        centres.append(np.asarray(p.target, dtype=float).copy())
    while len(centres) < n_a:
        if rng is None:
            raise ValueError("a generator is required to place new centres")
        c = np.zeros(p.state_dim)
        for d, (lo, hi) in zip(p.grid_dims, p.grid_ranges):
            if d in p.angle_dims:
                c[d] = rng.uniform(lo, hi)
        centres.append(c)
    return centres


def fit_local_models(Y: Experience, centres, tol_angle: float, tol_velocity: float, h: int,
                     n_H: int, n_c: int = 100, tol: float = 1e-7, widen: float = 1.5,
                     max_widen: int = 6):
    """One LDSi model per centre.

    A centre whose box holds no sub-trajectory gets its box widened by
    ``widen`` until one is found (at most ``max_widen`` times).
    """
    models = []
    for c in centres:
        ta, tv = tol_angle, tol_velocity
        for _ in range(max_widen + 1):
            segs = sample_subtrajectories(Y, c, ta, tv, h, n_H)
            if segs.count:
                break
            ta, tv = ta * widen, tv * widen
        if not segs.count:
            raise RuntimeError(f"no experience near centre {np.asarray(c).tolist()}")
        models.append(ldsi_fit(segs, n_c, tol))
    return models


def default_tolerances():
    """Box half-widths (angle in rad, angular velocity in rad/s)."""
    return 20 * DEG, 120 * DEG
