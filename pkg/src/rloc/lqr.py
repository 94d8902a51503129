"""Infinite-horizon LQR gains from local linear models and the quadratic cost."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from rloc.plants import PlantParams, wrap_angle
from rloc.sysid import LinearModel

log = logging.getLogger(__name__)

MAX_ITER = 10_000
TOL = 1e-10


@dataclass(frozen=True)
class CostWeights:
    W: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if W.shape[0] != W.shape[1] or Z.shape[0] != Z.shape[1]:
            raise ValueError("cost weights must be square")
        if not np.allclose(W, W.T) or not np.allclose(Z, Z.T):
            raise ValueError("cost weights must be symmetric")
        if np.linalg.eigvalsh(W).min() < -1e-12:
            raise ValueError("W must be positive semi-definite")
        if np.linalg.eigvalsh(Z).min() <= 0:
            raise ValueError("Z must be positive definite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Z", Z)

    @classmethod
    def diag(cls, w, z) -> "CostWeights":
        return cls(np.diag(np.asarray(w, dtype=float)), np.diag(np.asarray(z, dtype=float)))

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "Z": self.Z.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CostWeights":
        return cls(np.asarray(d["W"], dtype=float), np.asarray(d["Z"], dtype=float))


def default_weights(p: PlantParams) -> CostWeights:
    if p.name == "arm":
        return CostWeights.diag([30, 30, 0, 0], [1, 1])
    return CostWeights.diag([30, 3, 2000, 200], [1])


@dataclass
class Controller:
    gain: np.ndarray  # (m, l)
    centre: np.ndarray
    target: np.ndarray
    converged: bool = True
    iterations: int = 0
    V: np.ndarray | None = None
    model_id: int = -1
    diagnostic: str = ""

    def to_dict(self) -> dict:
        d = {
            "kind": "controller",
            "model_id": self.model_id,
            "centre": self.centre.tolist(),
            "target": self.target.tolist(),
            "gain": {"shape": list(self.gain.shape), "data": self.gain.ravel().tolist()},
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostic": self.diagnostic,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Controller":
        g = np.asarray(d["gain"]["data"], dtype=float).reshape(d["gain"]["shape"])
        return cls(g, np.asarray(d["centre"], dtype=float), np.asarray(d["target"], dtype=float),
                   bool(d["converged"]), int(d["iterations"]), None, int(d.get("model_id", -1)),
                   d.get("diagnostic", ""))


def psd_factor(M) -> np.ndarray:
    """R with R^T R = M for a symmetric positive semi-definite M."""
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))).T


def riccati_gain(A, B, weights: CostWeights, max_iter: int = MAX_ITER, tol: float = TOL,
                 centre=None, target=None) -> Controller:
    """Backward Riccati recursion from V = W until the update is below ``tol``.

    The recursion V <- W + A'VA - A'VB (Z + B'VB)^-1 B'VA is carried in
    square-root form: with V = R'R, the QR factorisation of

        [[Z^1/2, 0], [R B, R A], [0, W^1/2]] = Q [[X, Y], [0, R_next]]

    gives X'X = Z + B'VB, X'Y = B'VA and R_next' R_next = V_next, so the
    gain is X^-1 Y and nothing is ever subtracted.  This keeps nearly
    uncontrollable pairs (cost-to-go around 1e10) accurate to about 1e-12.
    ``tol`` is relative to ``max(1, |V|_inf)`` so that large cost scales (the
    cart-pole angle weight is 2000) can still meet it in double precision.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    W, Z = weights.W, weights.Z
    l, m = B.shape
    if A.shape != (l, l) or W.shape != (l, l) or Z.shape != (m, m):
        raise ValueError("dimension mismatch between model and weights")
    if not tol > 0:
        raise ValueError("tol must be positive")
    centre = np.zeros(l) if centre is None else np.asarray(centre, dtype=float)
    target = np.zeros(l) if target is None else np.asarray(target, dtype=float)
    R = psd_factor(W)
    V = R.T @ R
    M = np.zeros((m + 2 * l, m + l))
    M[:m, :m] = psd_factor(Z)
    M[m + l:, m:] = R
    L = np.zeros((m, l))
    converged = False
    diagnostic = ""
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected below
        for it in range(1, max_iter + 1):
            M[m:m + l, :m] = R @ B
            M[m:m + l, m:] = R @ A
            if not np.all(np.isfinite(M)):
                diagnostic = f"cost-to-go became non-finite after {it} iterations"
                break
            T = np.linalg.qr(M, mode="r")
            L = np.linalg.solve(T[:m, :m], T[:m, m:])
            R = T[m:m + l, m:]
            V_new = R.T @ R
            if not np.all(np.isfinite(V_new)):
                diagnostic = f"cost-to-go became non-finite after {it} iterations"
                break
            delta = np.abs(V_new - V).max()
            V = V_new
            if delta < tol * max(1.0, np.abs(V).max()):
                converged = True
                break
        else:
            diagnostic = f"no convergence in {max_iter} iterations"
    if not np.all(np.isfinite(L)) or not np.all(np.isfinite(V)):
        L = np.zeros((m, l))
        converged = False
        diagnostic = diagnostic or "non-finite gain"
    if diagnostic:
        log.warning("riccati: %s", diagnostic)
    return Controller(L, centre, target, converged, it, V, -1, diagnostic)


def error_vector(x, target, wrap) -> np.ndarray:
    """x - target with the flagged dimensions reduced to (-pi, pi]."""
    e = np.asarray(x, dtype=float) - np.asarray(target, dtype=float)
    wrap = np.asarray(wrap, dtype=bool)
    if wrap.any():
        e = e.copy()
        e[..., wrap] = wrap_angle(e[..., wrap])
    return e


def lqr_control(c: Controller, x, wrap=None) -> np.ndarray:
    """u = -L (x - x*), unsaturated."""
    wrap = np.zeros(len(c.target), dtype=bool) if wrap is None else wrap
    return -c.gain @ error_vector(x, c.target, wrap)


def stage_cost(x, u, weights: CostWeights, target, wrap=None) -> float:
    e = error_vector(x, target, np.zeros(len(target), bool) if wrap is None else wrap)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return 0.5 * float(e @ weights.W @ e + u @ weights.Z @ u)


def build_controller_bank(models: list[LinearModel], weights: CostWeights, target,
                          max_iter: int = MAX_ITER, tol: float = TOL) -> list[Controller]:
    """One controller per model, same order (action i uses controller i)."""
    if not models:
        raise ValueError("need at least one model")
    bank = []
    for i, mdl in enumerate(models):
        c = riccati_gain(mdl.A, mdl.B, weights, max_iter, tol, mdl.centre, target)
        c.model_id = i
        if not c.converged:
            log.warning("controller %d not converged: %s", i, c.diagnostic)
        bank.append(c)
    return bank


def gain_stack(bank: list[Controller]) -> np.ndarray:
    return np.ascontiguousarray(np.stack([c.gain for c in bank]))
