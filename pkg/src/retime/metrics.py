"""Evaluation metrics: stretched-time MSE, physical-time MSIE, stiffness diagnostics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator

from .errors import GridMismatch
from .geometry import second_differences
from .reparam import ReparamResult
from .systems import OdeSystem

TIME_RESCALE = 5.0


@dataclass
class TauMse:
    per_component: list[float]
    time: float
    state: float
    all: float


@dataclass
class Msie:
    per_component: list[float]
    state: float
    extrapolated: bool = False
    # fraction of the reference horizon covered by the prediction
    coverage: float = 1.0


@dataclass
class StiffnessDiag:
    max_second_difference: float
    explicit_euler_stable: bool


@dataclass
class MetricReport:
    tau_mse: Optional[TauMse] = None
    msie: Optional[Msie] = None
    stiffness: Optional[StiffnessDiag] = None
    labels: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def flat_row(self) -> dict:
        """One table row: labels, then tau-MSE and MSIE columns."""
        row = dict(self.labels)
        if self.tau_mse is not None:
            for i, v in enumerate(self.tau_mse.per_component, 1):
                row[f"tau_mse_y{i}"] = v
            row["tau_mse_time"] = self.tau_mse.time
            row["tau_mse_state"] = self.tau_mse.state
            row["tau_mse_all"] = self.tau_mse.all
        if self.msie is not None:
            for i, v in enumerate(self.msie.per_component, 1):
                row[f"msie_y{i}"] = v
            row["msie_state"] = self.msie.state
            row["msie_extrapolated"] = int(self.msie.extrapolated)
        if self.stiffness is not None:
            row["max_second_difference"] = self.stiffness.max_second_difference
            row["explicit_euler_stable"] = int(self.stiffness.explicit_euler_stable)
        return row


def _unit_interval(x, lo, span):
    return 2.0 * (x - lo) / span - 1.0


def tau_mse(pred: ReparamResult, ref: ReparamResult) -> TauMse:
    """Mean-squared error in stretched time.

    States are mapped to ``[-1, 1]`` with the reference extrema and time to
    ``[0, 5]`` with the reference horizon; the aggregate divides the summed
    squared errors by ``(N_q + 1) N_tau``.
    """
    if pred.y_of_tau.shape != ref.y_of_tau.shape or not np.allclose(pred.tau_grid, ref.tau_grid, rtol=0, atol=1e-12):
        raise GridMismatch("prediction and reference must share the tau grid and state dimension")
    yr, yp = ref.y_of_tau, pred.y_of_tau
    lo = yr.min(axis=0)
    span = np.ptp(yr, axis=0)
    span = np.where(span > 0, span, 1.0)
    err = _unit_interval(yp, lo, span) - _unit_interval(yr, lo, span)
    per = np.mean(err ** 2, axis=0)
    tr = ref.t_of_tau
    t0, tspan = tr[0], tr[-1] - tr[0]
    et = TIME_RESCALE * (pred.t_of_tau - t0) / tspan - TIME_RESCALE * (tr - t0) / tspan
    mse_t = float(np.mean(et ** 2))
    n_q = yr.shape[1]
    return TauMse(
        per_component=[float(v) for v in per],
        time=mse_t,
        state=float(np.mean(per)),
        all=float((np.sum(per) + mse_t) / (n_q + 1)),
    )


def msie(t_pred, y_pred, t_ref, y_ref, T: Optional[float] = None) -> Msie:
    """Mean squared integral error in physical time (trapezoidal on the reference grid).

    The prediction is interpolated shape-preservingly onto the reference
    times. A prediction ending before the reference horizon is extended by
    holding its last state, and the report is flagged.
    """
    t_pred = np.asarray(t_pred, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float).reshape(len(t_pred), -1)
    t_ref = np.asarray(t_ref, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float).reshape(len(t_ref), -1)
    if y_pred.shape[1] != y_ref.shape[1]:
        raise GridMismatch("state dimensions differ")
    T = float(t_ref[-1] - t_ref[0]) if T is None else float(T)
    # non-decreasing predictions may stall; keep the first of tied samples
    keep = np.concatenate([[True], np.diff(t_pred) > 0])
    t_pred, y_pred = t_pred[keep], y_pred[keep]
    if len(t_pred) >= 2:
        interp = PchipInterpolator(t_pred, y_pred, axis=0, extrapolate=False)
        q = interp(np.clip(t_ref, t_pred[0], None))
    else:
        q = np.full_like(y_ref, np.nan)
    # spline evaluation at its own knots can be off by an ulp; use the samples there
    j = np.clip(np.searchsorted(t_pred, t_ref), 0, len(t_pred) - 1)
    hit = t_pred[j] == t_ref
    q[hit] = y_pred[j[hit]]
    short = t_ref > t_pred[-1]
    q[short] = y_pred[-1]
    q[t_ref < t_pred[0]] = y_pred[0]
    per = trapezoid((q - y_ref) ** 2, t_ref, axis=0) / T
    coverage = float(min(1.0, (t_pred[-1] - t_ref[0]) / (t_ref[-1] - t_ref[0])))
    return Msie(
        per_component=[float(v) for v in per],
        state=float(np.mean(per)),
        extrapolated=bool(np.any(short)),
        coverage=coverage,
    )


def max_second_difference(phi, dtau: float) -> float:
    """``max_n |phi_{n+1} - 2 phi_n + phi_{n-1}| / dtau^2`` over interior points."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    if len(phi) < 3:
        return 0.0
    d2 = phi[2:] - 2.0 * phi[1:-1] + phi[:-2]
    return float(np.max(np.linalg.norm(d2, axis=1))) / dtau ** 2


def euler_in_tau(system: OdeSystem, result: ReparamResult, mu: Optional[float] = None):
    """Explicit Euler on ``dy/dtau = alpha f(y, t)`` over the result's tau grid.

    ``alpha`` on each step is the time-map increment divided by ``dtau``, so
    the physical clock follows the map exactly. Returns the state array
    (rows after a blow-up are inf/nan).
    """
    mu = result.mu if mu is None else mu
    tau, t = result.tau_grid, result.t_of_tau
    dtau = tau[1] - tau[0]
    alpha = np.diff(t) / dtau
    y = np.array(result.y_of_tau[0], dtype=float)
    out = np.full(result.y_of_tau.shape, np.nan)
    out[0] = y
    with np.errstate(all="ignore"):
        for j in range(len(tau) - 1):
            y = y + dtau * alpha[j] * system.rhs(y, t[j], mu)
            out[j + 1] = y
            if not np.all(np.isfinite(y)):
                break
    return out


def bounded(states, reference, limit: float = 10.0) -> bool:
    """All finite and ``|y~| < limit`` with ``y~`` mapping the reference range to ``[-1, 1]``."""
    states = np.asarray(states)
    if not np.all(np.isfinite(states)):
        return False
    lo, hi = reference.min(axis=0), reference.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return bool(np.all(np.abs(_unit_interval(states, lo, span)) < limit))


def stiffness_diag(result: ReparamResult, system: Optional[OdeSystem] = None) -> StiffnessDiag:
    """Second-difference size of the scaled augmented curve in tau, and Euler stability.

    Components are min-max scaled (as for arc length) before differencing.
    The stability flag needs the source ``system``; without it the flag is
    reported as False.
    """
    phi = np.column_stack([result.y_of_tau, result.t_of_tau])
    span = np.ptp(phi, axis=0)
    phi = (phi - phi.min(axis=0)) / np.where(span > 0, span, 1.0)
    dtau = result.tau_grid[1] - result.tau_grid[0]
    m2 = max_second_difference(phi, dtau)
    stable = False
    if system is not None:
        stable = bounded(euler_in_tau(system, result), result.y_of_tau)
    return StiffnessDiag(m2, stable)


def reconstruction_msie(result: ReparamResult, t_src, y_src) -> Msie:
    """Round-trip MSIE: the result mapped back to physical time against its source.

    Both sides are scaled to ``[-1, 1]`` with the source extrema so budgets
    are comparable across components.
    """
    y_src = np.asarray(y_src, dtype=float)
    lo = y_src.min(axis=0)
    span = np.ptp(y_src, axis=0)
    span = np.where(span > 0, span, 1.0)
    return msie(result.t_of_tau, _unit_interval(result.y_of_tau, lo, span),
                t_src, _unit_interval(y_src, lo, span))


__all__ = [
    "MetricReport",
    "Msie",
    "StiffnessDiag",
    "TauMse",
    "bounded",
    "euler_in_tau",
    "max_second_difference",
    "msie",
    "reconstruction_msie",
    "second_differences",
    "stiffness_diag",
    "tau_mse",
]
