"""Velocity-tracking controller: model feedforward plus scheduled PI feedback.

The feedback gains come from LQ designs on the gray-box model linearized
at a grid of reference velocities: at each node the scalar model
dv/dt = a(v) dv + b du (a = th3 + 2 th4 v, b = th1) is discretized
exactly, augmented with a summed-error state, and the Riccati equation
solved for (K_P, K_I).  The stored integral time T_I = K_P / K_I is in
samples.  Between nodes (K_P, T_I) interpolate linearly with endpoint
hold.

The PI is realized in anti-windup form: the integral channel is a
first-order filter F_s(q) = 1 / (1 + (q - 1) T_I) driven by the
saturated feedback share, which reproduces K_P / (1 - F_s(q)) =
K_P (1 + 1/((q-1) T_I)) exactly while unsaturated and stops the
integrator from winding up at the input limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lqr import dare_solve
from .sysid import GrayBoxModel
from .tables import read_csv, write_csv

DEFAULT_RHO_I = 0.01
DEFAULT_RHO_U = 10.0


@dataclass(frozen=True)
class GainSchedule:
    """PI gains tabulated over reference velocity."""

    v_grid: np.ndarray
    K_P: np.ndarray
    T_I: np.ndarray
    h: float
    rho_I: float = DEFAULT_RHO_I
    rho_u: float = DEFAULT_RHO_U

    def __post_init__(self):
        v = np.asarray(self.v_grid, dtype=float)
        kp = np.asarray(self.K_P, dtype=float)
        ti = np.asarray(self.T_I, dtype=float)
        object.__setattr__(self, "v_grid", v)
        object.__setattr__(self, "K_P", kp)
        object.__setattr__(self, "T_I", ti)
        if not (v.size and v.size == kp.size == ti.size):
            raise ValueError("grid/gain sizes mismatch")
        if v.size > 1 and not np.all(np.diff(v) > 0):
            raise ValueError("velocity grid must be strictly increasing")
        if np.any(ti <= 0):
            raise ValueError("integral times must be positive")
        if self.h <= 0:
            raise ValueError("sample time must be positive")

    def gains(self, v_ref: float) -> tuple[float, float]:
        """Interpolated (K_P, T_I) at the reference velocity (endpoints hold)."""
        kp = float(np.interp(v_ref, self.v_grid, self.K_P))
        ti = float(np.interp(v_ref, self.v_grid, self.T_I))
        return kp, ti

    def to_csv(self, path) -> None:
        write_csv(path, ["v_r", "K_P", "T_I"], [self.v_grid, self.K_P, self.T_I],
                  meta={"h": self.h, "rho_I": self.rho_I, "rho_u": self.rho_u})

    @classmethod
    def from_csv(cls, path) -> "GainSchedule":
        _, cols, meta = read_csv(path)
        return cls(v_grid=cols["v_r"], K_P=cols["K_P"], T_I=cols["T_I"],
                   h=float(meta["h"]), rho_I=float(meta["rho_I"]),
                   rho_u=float(meta["rho_u"]))


@dataclass(frozen=True)
class ControllerState:
    """Per-episode feedback state (reset at episode start)."""

    aw_filter: float = 0.0   # anti-windup integral channel [input units]
    prev_u_s: float = 0.0    # last saturated command [input units]


def feedforward(v_ref, a_ref, alpha, model: GrayBoxModel):
    """Invert the gray box for the input realizing (v_ref, a_ref) on slope alpha."""
    t1, t2, t3, t4, t5, t6 = model.theta
    v = np.asarray(v_ref, dtype=float)
    return (np.asarray(a_ref, dtype=float) - t2 - t3 * v - t4 * v * v
            - t5 * np.asarray(alpha, dtype=float)
            - t6 * np.asarray(alpha, dtype=float) ** 2) / t1


def reference_accel(v_ref: np.ndarray, h: float) -> np.ndarray:
    """Forward-difference reference acceleration; the final value is held."""
    v = np.asarray(v_ref, dtype=float)
    if v.size < 2:
        return np.zeros_like(v)
    a = np.diff(v) / h
    return np.append(a, a[-1])


def _discretize_node(a: float, b: float, h: float) -> tuple[float, float]:
    """Exact zero-order-hold discretization of dv/dt = a v + b u."""
    ah = a * h
    A_d = math.exp(ah)
    if abs(ah) < 1e-12:
        B_d = b * h
    else:
        B_d = b * math.expm1(ah) / a
    return A_d, B_d


def build_gain_schedule(model: GrayBoxModel, v_grid: np.ndarray, h: float,
                        rho_I: float = DEFAULT_RHO_I,
                        rho_u: float = DEFAULT_RHO_U) -> GainSchedule:
    """LQ-design PI gains at each grid node of the linearized gray box.

    Stage cost: dv^2 + rho_I * dv_I^2 + rho_u * du^2, where dv_I sums the
    velocity error.  Raises when a node yields a non-positive integral
    gain (no useful integral action at that design point).
    """
    v_grid = np.asarray(v_grid, dtype=float)
    t = model.theta
    b = t[0]
    kps = np.empty(v_grid.size)
    tis = np.empty(v_grid.size)
    Qx = np.diag([1.0, rho_I])
    Qu = np.array([[rho_u]])
    for i, v in enumerate(v_grid):
        a = t[2] + 2.0 * t[3] * v
        A_d, B_d = _discretize_node(a, b, h)
        A = np.array([[A_d, 0.0], [1.0, 1.0]])
        B = np.array([[B_d], [0.0]])
        K, _ = dare_solve(A, B, Qx, Qu)
        kp, ki = float(K[0, 0]), float(K[0, 1])
        if kp <= 0 or ki <= 0:
            raise ValueError(f"non-positive PI gains at node v={v:g}")
        kps[i] = kp
        tis[i] = kp / ki
    return GainSchedule(v_grid=v_grid, K_P=kps, T_I=tis, h=h,
                        rho_I=rho_I, rho_u=rho_u)


def control_step(cs: ControllerState, v_ref: float, v: float, u_ff: float,
                 schedule: GainSchedule, u_lim: float
                 ) -> tuple[float, float, float, ControllerState]:
    """One feedback update.

    Returns (u, u_s, du, next_state): the unsaturated command, the
    saturated command, the feedback share du = u_s - u_ff, and the
    updated controller state.
    """
    for x in (v_ref, v, u_ff):
        if not math.isfinite(x):
            raise ValueError("non-finite controller input")
    if u_lim <= 0:
        raise ValueError("u_lim must be positive")
    kp, ti = schedule.gains(v_ref)
    e = v_ref - v
    u = u_ff + kp * e + cs.aw_filter
    u_s = min(max(u, -u_lim), u_lim)
    du = u_s - u_ff
    w_next = cs.aw_filter + (du - cs.aw_filter) / ti
    return u, u_s, du, ControllerState(aw_filter=w_next, prev_u_s=u_s)
