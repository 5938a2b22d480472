"""Data-driven models of the longitudinal dynamics.

The central model is a six-parameter gray box

    dv/dt = th1*u + th2 + th3*v + th4*v^2 + th5*alpha + th6*alpha^2

fitted in output-error fashion: the model is simulated over the whole
record from the measured initial velocity and the simulated velocity is
matched to the measured one by damped Gauss-Newton steps.  A boolean
mask freezes structurally absent terms at zero.

Also provided: single/multi-output ARX least squares, a one-step
state-space estimator, and the two-coefficient drive-efficiency fit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError
from .tables import read_csv, write_csv, write_keyvalues, read_keyvalues

N_THETA = 6


@dataclass(frozen=True)
class Dataset:
    """Uniformly sampled record of velocity, slope, input, optional power."""

    t: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    P: np.ndarray | None = None

    def __post_init__(self):
        for name in ("t", "v", "alpha", "u"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.P is not None:
            object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        n = self.t.size
        if n < 10:
            raise ValueError("dataset needs at least 10 samples")
        for name in ("v", "alpha", "u"):
            if getattr(self, name).size != n:
                raise ValueError(f"column {name} length mismatch")
        if self.P is not None and self.P.size != n:
            raise ValueError("column P length mismatch")
        dt = np.diff(self.t)
        h = dt[0]
        if h <= 0 or np.abs(dt - h).max() > 1e-9 * max(1.0, h):
            raise ValueError("time grid must be uniform and increasing")

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    def to_csv(self, path) -> None:
        header = ["t", "v", "alpha", "u"]
        cols = [self.t, self.v, self.alpha, self.u]
        if self.P is not None:
            header.append("P")
            cols.append(self.P)
        write_csv(path, header, cols)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        _, cols, _ = read_csv(path)
        return cls(t=cols["t"], v=cols["v"], alpha=cols["alpha"], u=cols["u"],
                   P=cols.get("P"))


@dataclass(frozen=True)
class ArxModel:
    """ARX model A(q) y = B(q) u with A = 1 + a1 q^-1 + ... + an q^-n."""

    a: np.ndarray
    b: np.ndarray
    rms_residual: float

    @property
    def order(self) -> int:
        return self.a.size

    def predict(self, y_past: np.ndarray, u_past: np.ndarray) -> float:
        """One-step prediction from the latest ``order`` outputs/inputs (newest first)."""
        return float(-self.a @ y_past + self.b @ u_past)


@dataclass(frozen=True)
class GrayBoxModel:
    """Masked quadratic gray box of the longitudinal acceleration."""

    theta: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).copy()
        if theta.size != N_THETA:
            raise ValueError(f"theta must have {N_THETA} entries")
        mask = self.mask
        if mask is None:
            mask = np.ones(N_THETA, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.size != N_THETA:
            raise ValueError("mask length mismatch")
        if not mask[0]:
            raise ValueError("input coefficient th1 must stay active")
        theta[~mask] = 0.0
        if theta[0] == 0.0:
            raise ValueError("input coefficient th1 must be nonzero")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "mask", mask)

    def rhs(self, v, u, alpha):
        """Model acceleration dv/dt at the given operating point."""
        t1, t2, t3, t4, t5, t6 = self.theta
        return t1 * u + t2 + t3 * v + t4 * v * v + t5 * alpha + t6 * alpha * alpha

    def simulate(self, v0: float, u: np.ndarray, alpha: np.ndarray, h: float,
                 v_cap: float = 1e5) -> np.ndarray | None:
        """Integrate the model under zero-order-hold (u, alpha) sequences.

        One RK4 step per sample interval.  Returns the velocity sequence
        (same length as ``u``) or None if the state leaves ``|v| < v_cap``.
        """
        return _simulate_theta(self.theta, v0, np.asarray(u, float),
                               np.asarray(alpha, float), h, v_cap)


def _simulate_theta(theta, v0, u, alpha, h, v_cap=1e5):
    t1, t2, t3, t4, t5, t6 = theta
    n = u.size
    out = np.empty(n)
    v = float(v0)
    for k in range(n):
        out[k] = v
        if k == n - 1:
            break
        uk = u[k]
        ak = alpha[k]
        c = t1 * uk + t2 + t5 * ak + t6 * ak * ak

        def f(x):
            return c + t3 * x + t4 * x * x

        k1 = f(v)
        k2 = f(v + 0.5 * h * k1)
        k3 = f(v + 0.5 * h * k2)
        k4 = f(v + h * k3)
        v = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(v) or abs(v) > v_cap:
            return None
    return out


@dataclass(frozen=True)
class EfficiencyParams:
    """Drive efficiency coefficients: P = scale * eta(u) * u * v.

    ``gen_factor`` applies while generating traction (u >= 0),
    ``regen_factor`` while recuperating (u < 0).
    """

    gen_factor: float = 1.1
    regen_factor: float = 0.9
    scale: float = 1.0

    def __post_init__(self):
        if not (self.gen_factor >= 1.0 >= self.regen_factor > 0.0):
            raise ValueError("need gen_factor >= 1 >= regen_factor > 0")

    def eta(self, u):
        return np.where(np.asarray(u, dtype=float) >= 0.0,
                        self.gen_factor, self.regen_factor)


@dataclass
class GrayBoxFit:
    """Diagnostics from :func:`fit_graybox`."""

    cost_trace: list
    converged: bool
    n_iter: int
    rms: float


def fit_arx(y: np.ndarray, u: np.ndarray, n: int) -> ArxModel:
    """Least-squares ARX fit of order ``n`` on an input/output record."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if n < 1:
        raise ValueError("order must be >= 1")
    if y.size != u.size or y.size <= 2 * n:
        raise ValueError("record too short for the requested order")
    N = y.size
    rows = N - n
    phi = np.empty((rows, 2 * n))
    for i in range(1, n + 1):
        phi[:, i - 1] = -y[n - i:N - i]
        phi[:, n + i - 1] = u[n - i:N - i]
    target = y[n:]
    theta, _, rank, _ = np.linalg.lstsq(phi, target, rcond=None)
    if rank < 2 * n:
        raise EstimationError("ARX regression is rank deficient (poor excitation)")
    resid = target - phi @ theta
    return ArxModel(a=theta[:n], b=theta[n:], rms_residual=float(np.sqrt(np.mean(resid ** 2))))


def estimate_ss(X: np.ndarray, U: np.ndarray,
                X_next: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Estimate x+ = A x + B u by least squares over a sampled record.

    ``X`` and ``U`` are (N, n) and (N, m); ``X_next`` defaults to ``X``
    shifted by one sample.  Raises :class:`EstimationError` on a rank
    deficient regressor (insufficient excitation).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if X_next is None:
        X_next = X[1:]
        X = X[:-1]
        U = U[:-1]
    else:
        X_next = np.atleast_2d(np.asarray(X_next, dtype=float))
    n, m = X.shape[1], U.shape[1]
    phi = np.hstack([X, U])
    theta, _, rank, _ = np.linalg.lstsq(phi, X_next, rcond=None)
    if rank < n + m:
        raise EstimationError("state-space regression is rank deficient")
    A = theta[:n].T
    B = theta[n:].T
    return A, B


def equation_error_init(data: Dataset, mask: np.ndarray) -> np.ndarray:
    """Linear-regression warm start: fit finite-difference accelerations."""
    h = data.h
    dv = np.diff(data.v) / h
    v = 0.5 * (data.v[:-1] + data.v[1:])
    u = data.u[:-1]
    a = data.alpha[:-1]
    cols = [u, np.ones_like(u), v, v * v, a, a * a]
    mask = np.asarray(mask, dtype=bool)
    phi = np.stack([c for c, m in zip(cols, mask) if m], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(phi, dv, rcond=None)
    if rank < phi.shape[1]:
        raise EstimationError("gray-box warm-start regression is rank deficient")
    theta = np.zeros(N_THETA)
    theta[mask] = sol
    return theta


def fit_graybox(data: Dataset, theta0: np.ndarray | None = None,
                mask: np.ndarray | None = None, max_iter: int = 200,
                cost_tol: float = 1e-10, step_tol: float = 1e-8,
                fd_rel_step: float = 1e-6) -> tuple[GrayBoxModel, GrayBoxFit]:
    """Output-error gray-box fit by damped Gauss-Newton.

    Minimizes the squared output error between the measured velocities and
    a full-record simulation of the model.  The Jacobian of the simulated
    output with respect to the active parameters is taken by central
    finite differences (relative step ``fd_rel_step``).  Steps are halved
    until the cost decreases.  Convergence: relative cost decrease below
    ``cost_tol`` or parameter change below ``step_tol``; after ``max_iter``
    iterations the best iterate is returned with ``converged=False`` and
    a warning.
    """
    mask = np.ones(N_THETA, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask[0]:
        raise ValueError("input coefficient th1 must stay active")
    if theta0 is None:
        theta = equation_error_init(data, mask)
    else:
        theta = np.asarray(theta0, dtype=float).copy()
        theta[~mask] = 0.0
    act = np.flatnonzero(mask)
    h = data.h
    v_meas = data.v

    def cost_of(th):
        sim = _simulate_theta(th, v_meas[0], data.u, data.alpha, h)
        if sim is None:
            return math.inf, None
        r = sim - v_meas
        return float(r @ r), r

    cost, resid = cost_of(theta)
    if not math.isfinite(cost) and theta0 is None:
        # Equation-error warm starts can flip a drag coefficient positive on
        # narrow-range data, which is unstable in full simulation.  Drag
        # terms oppose motion, so clamp them nonpositive and retry once.
        theta[2] = min(theta[2], 0.0)
        theta[3] = min(theta[3], 0.0)
        cost, resid = cost_of(theta)
    if not math.isfinite(cost):
        raise EstimationError("initial gray-box parameters diverge on the data")
    trace = [cost]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # Central-difference Jacobian over the active parameters.
        J = np.empty((v_meas.size, act.size))
        for j, idx in enumerate(act):
            step = fd_rel_step * max(abs(theta[idx]), 1e-6)
            tp = theta.copy()
            tp[idx] += step
            tm = theta.copy()
            tm[idx] -= step
            sp = _simulate_theta(tp, v_meas[0], data.u, data.alpha, h)
            sm = _simulate_theta(tm, v_meas[0], data.u, data.alpha, h)
            if sp is None or sm is None:
                raise EstimationError("gray-box simulation diverged during fit")
            J[:, j] = (sp - sm) / (2.0 * step)
        delta, _, _, _ = np.linalg.lstsq(J.T @ J, -(J.T @ resid), rcond=None)

        lam = 1.0
        improved = False
        while lam >= 1e-8:
            trial = theta.copy()
            trial[act] += lam * delta
            c_trial, r_trial = cost_of(trial)
            if c_trial < cost:
                improved = True
                break
            lam *= 0.5
        if not improved:
            converged = True
            break
        rel_step = np.max(np.abs(lam * delta) / np.maximum(np.abs(theta[act]), 1e-12))
        rel_drop = (cost - c_trial) / max(cost, 1e-300)
        theta, cost, resid = trial, c_trial, r_trial
        trace.append(cost)
        if rel_drop < cost_tol or rel_step < step_tol:
            converged = True
            break
    if not converged:
        warnings.warn("gray-box fit stopped at iteration limit; returning best iterate")
    model = GrayBoxModel(theta=theta, mask=mask)
    rms = math.sqrt(cost / v_meas.size)
    return model, GrayBoxFit(cost_trace=trace, converged=converged, n_iter=it, rms=rms)


def fit_efficiency(P: np.ndarray, u: np.ndarray, v: np.ndarray,
                   defaults: tuple[float, float] = (1.1, 0.9)) -> EfficiencyParams:
    """Fit the drive/regen efficiency factors from power samples.

    Regresses P against u*v separately on the u >= 0 and u < 0 regimes.
    A missing or unexcited regime falls back to the corresponding default
    with a warning; estimates outside the admissible range
    gen >= 1 >= regen > 0 are clipped to the bound.
    """
    P = np.asarray(P, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = u * v
    out = []
    for name, sel, default in (("generation", u >= 0.0, defaults[0]),
                               ("regeneration", u < 0.0, defaults[1])):
        xx = float(x[sel] @ x[sel])
        if sel.sum() == 0 or xx < 1e-12:
            warnings.warn(f"no informative {name} samples; using default {default}")
            out.append(default)
        else:
            out.append(float(x[sel] @ P[sel] / xx))
    gen, regen = out
    if gen < 1.0:
        warnings.warn(f"generation factor estimate {gen:.4f} < 1; clipping")
        gen = 1.0
    if regen > 1.0:
        warnings.warn(f"regeneration factor estimate {regen:.4f} > 1; clipping")
        regen = 1.0
    if regen <= 0.0:
        warnings.warn(f"regeneration factor estimate {regen:.4f} <= 0; using default")
        regen = defaults[1]
    return EfficiencyParams(gen_factor=gen, regen_factor=regen)


def validate(model: GrayBoxModel, data: Dataset) -> float:
    """Normalized RMS error of a full-record model simulation.

    The simulated velocity (from the measured initial state under the
    recorded inputs) is compared with the measurement; the RMS error is
    normalized by the RMS deviation of the measurement from its mean.
    Returns ``inf`` when the simulation diverges.
    """
    sim = model.simulate(data.v[0], data.u, data.alpha, data.h)
    if sim is None:
        return math.inf
    err = sim - data.v
    denom = float(np.sqrt(np.mean((data.v - data.v.mean()) ** 2)))
    denom = max(denom, 1e-12)
    return float(np.sqrt(np.mean(err ** 2)) / denom)


def save_theta(path, model: GrayBoxModel, eff: EfficiencyParams | None = None) -> None:
    """Write the fitted parameters as a flat key-value text file."""
    items = {f"theta{i + 1}": model.theta[i] for i in range(N_THETA)}
    items["mask"] = ",".join("1" if m else "0" for m in model.mask)
    if eff is not None:
        items["theta7"] = eff.gen_factor
        items["theta8"] = eff.regen_factor
        items["scale"] = eff.scale
    write_keyvalues(path, items)


def load_theta(path) -> tuple[GrayBoxModel, EfficiencyParams | None]:
    """Read parameters written by :func:`save_theta`."""
    kv = read_keyvalues(path)
    theta = np.array([float(kv[f"theta{i + 1}"]) for i in range(N_THETA)])
    mask = np.array([c.strip() == "1" for c in kv["mask"].split(",")])
    eff = None
    if "theta7" in kv:
        eff = EfficiencyParams(gen_factor=float(kv["theta7"]),
                               regen_factor=float(kv["theta8"]),
                               scale=float(kv.get("scale", 1.0)))
    return GrayBoxModel(theta=theta, mask=mask), eff
