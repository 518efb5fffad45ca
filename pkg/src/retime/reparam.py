"""Time reparameterization: solver-directed, extrema-based and trajectory-optimized.

Each method maps a physical-time :class:`~retime.integrate.Trajectory` to a
:class:`ReparamResult` sampled on a uniform stretched-time grid
``tau in [0, tau_f]`` together with a monotone :class:`TimeMap`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator, PPoly

from .errors import NonMonotoneTimeMap, OptimizerDiverged
from .geometry import (
    DEFAULT_N_SAMPLES,
    ArcCurve,
    arc_length,
    find_extrema,
    nondimensionalize,
    second_differences,
)
from .integrate import Trajectory

log = logging.getLogger(__name__)

METHODS = ("solver_directed", "extrema_based", "totr")
DEFAULT_TAU_F = 5.0
DEFAULT_N_TAU = 1000


@dataclass(frozen=True)
class TimeMap:
    """Monotone ``t(tau)`` sampled on a uniform grid, with PCHIP interpolants both ways."""

    tau_grid: np.ndarray
    t_of_tau: np.ndarray

    def __post_init__(self):
        if len(self.tau_grid) != len(self.t_of_tau):
            raise ValueError("tau_grid and t_of_tau lengths differ")
        if np.any(np.diff(self.t_of_tau) <= 0):
            raise NonMonotoneTimeMap("t(tau) must be strictly increasing")

    @property
    def tau_f(self) -> float:
        return float(self.tau_grid[-1])

    @property
    def T(self) -> float:
        return float(self.t_of_tau[-1])

    @cached_property
    def _forward(self):
        return PchipInterpolator(self.tau_grid, self.t_of_tau)

    def t(self, tau):
        return self._forward(tau)

    def tau(self, t):
        """Exact inverse of ``t``: root of the forward spline, so round trips close to rounding."""
        t = np.asarray(t, dtype=float)
        return invert_ppoly(self._forward, t.ravel()).reshape(t.shape)

    def dt_dtau(self, tau=None):
        """Time dilation ``alpha = dt/dtau`` (on the grid by default)."""
        return self._forward.derivative()(self.tau_grid if tau is None else tau)


@dataclass(frozen=True)
class SpeedProfile:
    """Traversal speed ``v(s) = exp(a + v_star(s))`` on a uniform arc-length grid."""

    s_grid: np.ndarray
    v_star: np.ndarray
    a: float

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.a + self.v_star)

    def arrival_time(self) -> float:
        return float(trapezoid(1.0 / self.v, self.s_grid))

    def tau_of_s(self) -> np.ndarray:
        """Cumulative ``int_0^s ds / v`` by the trapezoidal rule."""
        inv = 1.0 / self.v
        h = np.diff(self.s_grid)
        return np.concatenate([[0.0], np.cumsum(0.5 * h * (inv[1:] + inv[:-1]))])


@dataclass
class ReparamResult:
    method: str
    tau_grid: np.ndarray
    y_of_tau: np.ndarray
    time_map: TimeMap
    diagnostics: dict = field(default_factory=dict)
    mu: Optional[float] = None

    @property
    def t_of_tau(self) -> np.ndarray:
        return self.time_map.t_of_tau

    @property
    def tau_f(self) -> float:
        return float(self.tau_grid[-1])

    @property
    def dim(self) -> int:
        return self.y_of_tau.shape[1]

    def physical(self) -> Trajectory:
        """The result viewed as a physical-time trajectory (t(tau_j), y(tau_j))."""
        return Trajectory(self.t_of_tau, self.y_of_tau, self.mu if self.mu is not None else float("nan"))


def _uniform_tau(tau_f: float, n_tau: int) -> np.ndarray:
    if tau_f <= 0:
        raise ValueError("tau_f must be positive")
    if n_tau < 8:
        raise ValueError("n_tau must be >= 8")
    return np.linspace(0.0, tau_f, n_tau)


def max_acceleration(tau_grid: np.ndarray, y_of_tau: np.ndarray, t_of_tau: np.ndarray) -> float:
    """Largest ``|d^2 phi/dtau^2|`` of the min-max scaled augmented state (interior points)."""
    phi = np.column_stack([y_of_tau, t_of_tau])
    span = np.ptp(phi, axis=0)
    phi = (phi - phi.min(axis=0)) / np.where(span > 0, span, 1.0)
    h = tau_grid[1] - tau_grid[0]
    d2 = second_differences(phi, h)[1:-1]
    return float(np.max(np.linalg.norm(d2, axis=1))) if len(d2) else 0.0


def _finish(method, tau, y, t, traj, diagnostics) -> ReparamResult:
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    # pin the end points to the source data
    t[0], t[-1] = traj.times[0], traj.times[-1]
    y[0], y[-1] = traj.states[0], traj.states[-1]
    diagnostics.setdefault("max_accel", max_acceleration(tau, y, t))
    return ReparamResult(method, tau, y, TimeMap(tau, t), diagnostics, traj.mu)


# ---------------------------------------------------------------------------
# inversion of monotone piecewise cubics

def invert_ppoly(pp: PPoly, targets, n_bisect: int = 64) -> np.ndarray:
    """Solve ``pp(x) = target`` for a non-decreasing piecewise polynomial.

    Bracketing bisection inside the located interval, vectorized over targets;
    64 halvings reach the floating-point resolution of any interval.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    x = pp.x
    yk = pp(x)
    k = np.clip(np.searchsorted(yk, targets, side="right") - 1, 0, len(x) - 2)
    c = pp.c[:, k]
    lo = np.zeros_like(targets)
    hi = x[k + 1] - x[k]
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        val = c[0] * np.ones_like(mid)
        for row in c[1:]:
            val = val * mid + row
        below = val < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = x[k] + 0.5 * (lo + hi)
    out[targets <= yk[0]] = x[0]
    out[targets >= yk[-1]] = x[-1]
    return out


def _collapse_ties(s: np.ndarray, tau: np.ndarray):
    d = np.diff(tau)
    scale = max(abs(float(tau[-1] - tau[0])), 1e-300)
    if np.any(d < -1e-14 * scale):
        raise NonMonotoneTimeMap("time map decreases")
    keep = np.concatenate([[True], d > 1e-14 * scale])
    if not keep[-1]:
        # keep the true end point, drop its tied predecessor
        last_kept = np.nonzero(keep)[0][-1]
        keep[last_kept] = last_kept == 0
        keep[-1] = True
    return s[keep], tau[keep]


def invert_time(s_grid, tau_values, tau_targets=None, n_tau: int = DEFAULT_N_TAU) -> np.ndarray:
    """Invert a monotone map ``tau(s)`` given by samples on ``s_grid``.

    The forward map is the shape-preserving (PCHIP) interpolant of the
    samples; ``s(tau)`` is its exact inverse, evaluated at ``tau_targets``
    (default: ``n_tau`` uniform points on ``[tau(0), tau(S)]``). Ties closer
    than ``1e-14`` of the range are collapsed.
    """
    s = np.asarray(s_grid, dtype=float)
    tau = np.asarray(tau_values, dtype=float)
    if len(s) != len(tau) or len(s) < 2:
        raise ValueError("need matching s and tau samples (>= 2)")
    s, tau = _collapse_ties(s, tau)
    if len(s) < 2:
        raise NonMonotoneTimeMap("time map is constant")
    if tau_targets is None:
        tau_targets = np.linspace(tau[0], tau[-1], n_tau)
    return invert_ppoly(PchipInterpolator(s, tau), tau_targets)


# ---------------------------------------------------------------------------
# solver-directed

class KnotInterpolant:
    """PCHIP through ``(x_k, y_k)`` that returns the stored ``y_k`` bit-for-bit at the knots."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self._pp = PchipInterpolator(self.x, self.y, axis=0)

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        flat = q.ravel()
        out = self._pp(flat)
        k = np.clip(np.searchsorted(self.x, flat), 0, len(self.x) - 1)
        hit = self.x[k] == flat
        out[hit] = self.y[k[hit]]
        return out.reshape(q.shape + self.y.shape[1:])

def solver_directed_knots(times, tau_f: float) -> np.ndarray:
    """Stretched-time knots ``tau_n = (n/N) tau_f`` for an ``N+1`` point grid."""
    N = len(times) - 1
    return np.arange(N + 1) / N * tau_f


def solver_directed(traj: Trajectory, tau_f: float = DEFAULT_TAU_F, n_tau: int = DEFAULT_N_TAU) -> ReparamResult:
    """Clock inherited from the solver's accepted-step grid.

    Expects the implicit integrator's own grid, not a resampled one; a
    uniform input grid makes the time map linear and is reported.
    """
    tau = _uniform_tau(tau_f, n_tau)
    knots = solver_directed_knots(traj.times, tau_f)
    dt = np.diff(traj.times)
    uniform_input = bool(np.allclose(dt, dt[0], rtol=1e-9, atol=0.0))
    if uniform_input:
        log.warning("solver_directed: input grid is uniform; t(tau) degenerates to a linear map")
    t_knot = KnotInterpolant(knots, traj.times)
    y_knot = KnotInterpolant(knots, traj.states)
    diag = {
        "n_knots": len(knots),
        "uniform_input": uniform_input,
        "tau_knots": knots,
        "t_knots": traj.times.copy(),
        "knot_map": t_knot,
    }
    return _finish("solver_directed", tau, y_knot(tau), t_knot(tau), traj, diag)


# ---------------------------------------------------------------------------
# extrema-based

def extrema_hermite(s_ext: Sequence[float], S: float, tau_f: float) -> CubicHermiteSpline:
    """Piecewise cubic ``tau(s)`` through ``(s_k, s_k tau_f / S)`` with zero slope at every knot."""
    knots = np.concatenate([[0.0], np.asarray(s_ext, dtype=float), [S]])
    knots = np.unique(knots)
    values = knots / S * tau_f
    values[0], values[-1] = 0.0, tau_f
    return CubicHermiteSpline(knots, values, np.zeros_like(knots))


def _is_monotone(pp: PPoly, s_grid) -> bool:
    vals = pp(s_grid)
    return bool(np.all(np.diff(vals) >= 0) and np.all(pp.derivative()(s_grid) >= -1e-12))


def extrema_based(
    traj: Trajectory,
    tau_f: float = DEFAULT_TAU_F,
    n_tau: int = DEFAULT_N_TAU,
    n_samples: int = DEFAULT_N_SAMPLES,
    weights=None,
    scales=None,
) -> ReparamResult:
    """Clock from cubic Hermite segments pinned at the trajectory's extrema."""
    tau = _uniform_tau(tau_f, n_tau)
    arc = arc_length(nondimensionalize(traj, weights, scales), n_samples)
    s_ext = find_extrema(arc)
    spline = extrema_hermite(s_ext, arc.S, tau_f)
    fallback = False
    if not _is_monotone(spline, arc.s_grid):
        log.warning("extrema_based: Hermite time map not monotone; falling back to PCHIP slopes")
        fallback = True
        spline = PchipInterpolator(spline.x, spline(spline.x))
    s_of_tau = invert_ppoly(spline, tau)
    diag = {
        "n_extrema": int(len(s_ext)),
        "extrema_s": s_ext,
        "S": arc.S,
        "tau_of_s": spline,
        "monotone_fallback": fallback,
    }
    return _finish("extrema_based", tau, arc.states_at(s_of_tau), arc.time_at(s_of_tau), traj, diag)


# ---------------------------------------------------------------------------
# trajectory-optimized (TOTR)

@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 5000
    rel_tol: float = 1e-10
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    # "lbfgs": quasi-Newton directions; "gradient": steepest descent
    direction: str = "lbfgs"
    memory: int = 10
    n_samples: int = DEFAULT_N_SAMPLES
    smoothing_window: int = 1


@dataclass(frozen=True)
class SpeedProblem:
    """Discrete TOTR problem: curvature on a uniform arc-length grid."""

    s_grid: np.ndarray
    kappa: np.ndarray

    @property
    def S(self) -> float:
        return float(self.s_grid[-1] - self.s_grid[0])


def _trap_weights(s_grid) -> np.ndarray:
    h = np.diff(s_grid)
    w = np.zeros(len(s_grid))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _diff_operator(n: int, h: float) -> sp.csr_matrix:
    """First-derivative stencil: central inside, first-order one-sided at the ends."""
    rows, cols, vals = [0, 0], [0, 1], [-1.0 / h, 1.0 / h]
    i = np.arange(1, n - 1)
    rows += list(i) + list(i)
    cols += list(i + 1) + list(i - 1)
    vals += [0.5 / h] * len(i) + [-0.5 / h] * len(i)
    rows += [n - 1, n - 1]
    cols += [n - 1, n - 2]
    vals += [1.0 / h, -1.0 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def solve_offset(v_star, S: float, tau_f: float) -> float:
    """Offset ``a`` making ``int_0^S exp(-(a + v_star)) ds = tau_f`` under the trapezoidal rule."""
    if tau_f <= 0:
        raise ValueError("tau_f must be positive")
    v_star = np.asarray(v_star, dtype=float)
    s = np.linspace(0.0, S, len(v_star))
    m = float(np.min(v_star))
    integral = float(np.dot(_trap_weights(s), np.exp(-(v_star - m))))
    return -m + math.log(integral) - math.log(tau_f)


class _Objective:
    def __init__(self, problem, tau_f: float):
        s = np.asarray(problem.s_grid, dtype=float)
        self.s = s
        self.h = float(s[1] - s[0])
        self.w = _trap_weights(s)
        self.k2 = np.asarray(problem.kappa, dtype=float) ** 2
        self.D = _diff_operator(len(s), self.h)
        self.tau_f = tau_f
        self.S = float(s[-1] - s[0])

    def offset(self, v_star):
        return solve_offset(v_star, self.S, self.tau_f)

    def value(self, v_star, a):
        v = np.exp(a + v_star)
        dv = self.D @ v
        return float(np.dot(self.w, v * dv * dv + self.k2 * v ** 3))

    def value_grad(self, v_star, a):
        v = np.exp(a + v_star)
        dv = self.D @ v
        J = float(np.dot(self.w, v * dv * dv + self.k2 * v ** 3))
        # partial derivative with respect to v
        G = self.w * (dv * dv + 3.0 * self.k2 * v * v) + 2.0 * (self.D.T @ (self.w * v * dv))
        e = self.w * np.exp(-(v_star - np.min(v_star)))
        da = -e / e.sum()
        grad = v * G + float(np.dot(G, v)) * da
        return J, grad


def objective_and_gradient(v_star, a: float, arc, tau_f: float):
    """Discretized ``J_s[v] = int (v v_s^2 + kappa^2 v^3) ds`` and its total gradient.

    ``arc`` is anything carrying ``s_grid`` and ``kappa`` (an :class:`ArcCurve`
    or :class:`SpeedProblem`). ``v_s`` uses central differences with one-sided
    end stencils and the integral is trapezoidal; the gradient is the exact
    derivative of that discrete functional with respect to ``v_star``,
    including the dependence of ``a`` on ``v_star`` through :func:`solve_offset`.
    """
    v_star = np.asarray(v_star, dtype=float)
    if len(v_star) != len(arc.s_grid) or len(arc.kappa) != len(arc.s_grid):
        raise ValueError("v_star, s_grid and kappa must have the same length")
    return _Objective(arc, tau_f).value_grad(v_star, a)


def optimize_speed(problem, tau_f: float, cfg: OptimizerConfig = OptimizerConfig(), v_star0=None):
    """Minimize the TOTR objective over ``v_star`` with Armijo backtracking.

    The offset is re-solved in closed form after every accepted step, which
    removes the arrival-time constraint. Returns ``(SpeedProfile, info)``.
    """
    obj = _Objective(problem, tau_f)
    n = len(obj.s)
    x = np.zeros(n) if v_star0 is None else np.array(v_star0, dtype=float)
    a = obj.offset(x)
    J, g = obj.value_grad(x, a)
    trace = [J]
    s_hist, y_hist = [], []
    step0 = 1.0
    reason = "max_iter"
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while it < cfg.max_iter:
            gnorm = float(np.linalg.norm(g))
            if J == 0.0 or gnorm == 0.0 or not np.isfinite(gnorm):
                reason = "stationary"
                break
            if cfg.direction == "lbfgs" and s_hist:
                p = -_two_loop(g, s_hist, y_hist)
                if np.dot(p, g) >= 0:
                    s_hist.clear(), y_hist.clear()
                    p = -g
                alpha = 1.0
            else:
                p = -g
                alpha = step0
            accepted, J_new, x_new, a_new, alpha = _armijo(obj, x, J, g, p, alpha, cfg)
            if not accepted and s_hist:
                # quasi-Newton direction failed: retry along the gradient
                s_hist.clear(), y_hist.clear()
                p = -g
                accepted, J_new, x_new, a_new, alpha = _armijo(obj, x, J, g, p, step0, cfg)
            if not accepted:
                if np.isfinite(J_new) and J_new > J * (1.0 + 1e-8) and alpha * gnorm ** 2 > 1e-8 * J:
                    raise OptimizerDiverged(f"objective increased from {J:.6e} to {J_new:.6e} under a descent step")
                reason = "line_search_stalled"
                break
            J_old = J
            J, g_new = obj.value_grad(x_new, a_new)
            if cfg.direction == "lbfgs":
                sk, yk = x_new - x, g_new - g
                if np.dot(sk, yk) > 1e-12 * np.dot(yk, yk):
                    s_hist.append(sk), y_hist.append(yk)
                    if len(s_hist) > cfg.memory:
                        s_hist.pop(0), y_hist.pop(0)
            x, a, g = x_new, a_new, g_new
            # gauge: v_star is only defined up to a constant absorbed by a
            shift = float(np.mean(x))
            x, a = x - shift, a + shift
            step0 = min(alpha * 2.0, 1e6)
            trace.append(J)
            it += 1
            if abs(J_old - J) <= cfg.rel_tol * abs(J_old):
                reason = "rel_tol"
                break
    profile = SpeedProfile(obj.s.copy(), x, obj.offset(x))
    info = {
        "objective": float(trace[-1]),
        "initial_objective": float(trace[0]),
        "iterations": it,
        "objective_trace": trace,
        "stop_reason": reason,
    }
    return profile, info


def _armijo(obj, x, J, g, p, alpha, cfg):
    slope = float(np.dot(g, p))
    J_try = math.inf
    for _ in range(cfg.max_backtracks):
        x_try = x + alpha * p
        if np.all(np.isfinite(x_try)):
            a_try = obj.offset(x_try)
            J_try = obj.value(x_try, a_try)
            if np.isfinite(J_try) and J_try <= J + cfg.armijo_c * alpha * slope:
                return True, J_try, x_try, a_try, alpha
        alpha *= cfg.backtrack
    return False, J_try, x, None, alpha


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        al = rho * np.dot(s, q)
        alphas.append((rho, al))
        q -= al * y
    s, y = s_hist[-1], y_hist[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, al) in zip(zip(s_hist, y_hist), reversed(alphas)):
        be = rho * np.dot(y, q)
        q += (al - be) * s
    return q


def totr(
    traj: Trajectory,
    tau_f: float = DEFAULT_TAU_F,
    n_tau: int = DEFAULT_N_TAU,
    opt: OptimizerConfig = OptimizerConfig(),
    weights=None,
    scales=None,
) -> ReparamResult:
    """Trajectory-optimized clock: optimal traversal speed along the arc-length curve."""
    tau = _uniform_tau(tau_f, n_tau)
    arc = arc_length(nondimensionalize(traj, weights, scales), opt.n_samples, opt.smoothing_window)
    profile, info = optimize_speed(arc, tau_f, opt)
    tau_nodes = profile.tau_of_s()
    tau_nodes *= tau_f / tau_nodes[-1]
    s_of_tau = invert_time(arc.s_grid, tau_nodes, tau)
    diag = dict(info)
    diag.update({"S": arc.S, "speed": profile, "arrival_time": profile.arrival_time()})
    return _finish("totr", tau, arc.states_at(s_of_tau), arc.time_at(s_of_tau), traj, diag)


def constant_speed(
    traj: Trajectory,
    tau_f: float = DEFAULT_TAU_F,
    n_tau: int = DEFAULT_N_TAU,
    n_samples: int = DEFAULT_N_SAMPLES,
    weights=None,
) -> ReparamResult:
    """Plain arc-length clock ``tau = s tau_f / S`` (the TOTR starting point)."""
    tau = _uniform_tau(tau_f, n_tau)
    arc = arc_length(nondimensionalize(traj, weights), n_samples)
    s_of_tau = tau / tau_f * arc.S
    return _finish("constant_speed", tau, arc.states_at(s_of_tau), arc.time_at(s_of_tau), traj, {"S": arc.S})


def reparameterize(method: str, traj: Trajectory, tau_f: float = DEFAULT_TAU_F,
                   n_tau: int = DEFAULT_N_TAU, **kw) -> ReparamResult:
    if method == "solver_directed":
        return solver_directed(traj, tau_f, n_tau)
    if method == "extrema_based":
        return extrema_based(traj, tau_f, n_tau, **kw)
    if method == "totr":
        return totr(traj, tau_f, n_tau, **kw)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
