"""Reference trajectory generation.

Two families live here:

* fixed-step explicit schemes (forward Euler, classical RK4), used for the
  stability demonstrations and for surrogate rollouts;
* an adaptive, L-stable TR-BDF2 integrator whose accepted-step grid is the
  input of the solver-directed reparameterization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import MaxStepsExceeded, NonFinite, StepSizeUnderflow
from .systems import OdeSystem


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    mu: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.times.ndim != 1 or len(self.times) != len(self.states):
            raise ValueError("times and states must have the same length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-6
    atol: float = 1e-8
    h_init: Optional[float] = None
    h_min: float = 1e-14
    h_max: float = math.inf
    max_steps: int = 1_000_000
    safety: float = 0.9
    fac_min: float = 0.2
    fac_max: float = 5.0
    newton_max_iter: int = 8

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if self.h_init is not None and not self.h_min <= self.h_init <= self.h_max:
            raise ValueError("need h_min <= h_init <= h_max")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


# ---------------------------------------------------------------------------
# explicit fixed-step schemes

def _euler_step(f, y, t, h, mu):
    return y + h * f(y, t, mu)


def _rk4_step(f, y, t, h, mu):
    k1 = f(y, t, mu)
    k2 = f(y + 0.5 * h * k1, t + 0.5 * h, mu)
    k3 = f(y + 0.5 * h * k2, t + 0.5 * h, mu)
    k4 = f(y + h * k3, t + h, mu)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_SCHEMES = {"euler": _euler_step, "rk4": _rk4_step}


def integrate_explicit(
    system: OdeSystem,
    mu: float,
    scheme: str,
    n_steps: int,
    horizon: float,
    y0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Fixed-step explicit integration on ``n_steps + 1`` uniform points.

    Raises :class:`NonFinite` (with the failing step and the partial
    trajectory attached) as soon as any component overflows.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    try:
        step = _SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}") from None
    times = np.linspace(0.0, horizon, n_steps + 1)
    h = horizon / n_steps
    y = system.y0(mu) if y0 is None else np.array(y0, dtype=float)
    states = np.empty((n_steps + 1, len(y)))
    states[0] = y
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            y = step(system.rhs, y, times[n], h, mu)
            states[n + 1] = y
            if not np.all(np.isfinite(y)):
                partial = Trajectory(times[: n + 2], states[: n + 2], mu, {"solver": scheme})
                raise NonFinite(n + 1, f"{scheme}: non-finite state at step {n + 1}", partial)
    return Trajectory(times, states, mu, {"solver": scheme, "n_steps": n_steps})


# ---------------------------------------------------------------------------
# TR-BDF2

_GAMMA = 2.0 - math.sqrt(2.0)
_D = _GAMMA / 2.0
_W_Z = 1.0 / (_GAMMA * (2.0 - _GAMMA))
_W_Y = (1.0 - _GAMMA) ** 2 / (_GAMMA * (2.0 - _GAMMA))
# leading error constant of the scheme
_ERR_C = (-3.0 * _GAMMA ** 2 + 4.0 * _GAMMA - 2.0) / (12.0 * (2.0 - _GAMMA))


def _wrms(v, scale):
    return float(np.sqrt(np.mean((v / scale) ** 2)))


def _newton(f, t, rhs, x0, lu, dh, mu, tol, max_iter):
    """Solve x - dh*f(x, t) = rhs with a frozen iteration matrix."""
    x = x0
    prev = math.inf
    for _ in range(max_iter):
        g = x - dh * f(x, t, mu) - rhs
        dx = lu_solve(lu, -g)
        x = x + dx
        if not np.all(np.isfinite(x)):
            return None
        size = float(np.max(np.abs(dx) / np.maximum(1.0, np.abs(x))))
        if size <= tol:
            return x
        if size > 2.0 * prev:
            return None
        prev = size
    return None


def _initial_step(f, y0, mu, rtol, atol, horizon):
    scale = atol + rtol * np.abs(y0)
    f0 = f(y0, 0.0, mu)
    d0, d1 = _wrms(y0, scale), _wrms(f0, scale)
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h, horizon)


def integrate_implicit_adaptive(
    system: OdeSystem,
    mu: float,
    cfg: SolverConfig = SolverConfig(),
    horizon: Optional[float] = None,
    y0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Adaptive TR-BDF2 integration returning every accepted step.

    The iteration matrix ``I - d h J`` is factored with the Jacobian taken at
    the start of the step and reused by both Newton solves. Local error is
    estimated from the second divided difference of ``f`` over the three
    stage points, filtered through the iteration matrix, and controlled with
    a PI step-size controller.
    """
    f, jac = system.rhs, system.jacobian
    T = system.horizon(mu) if horizon is None else float(horizon)
    y = system.y0(mu) if y0 is None else np.array(y0, dtype=float)
    n = len(y)
    eye = np.eye(n)
    rtol, atol = cfg.rtol, cfg.atol
    newton_tol = 0.1 * min(rtol, atol)

    h = cfg.h_init if cfg.h_init is not None else _initial_step(f, y, mu, rtol, atol, T)
    h = min(max(h, cfg.h_min), cfg.h_max)

    t = 0.0
    times, states = [0.0], [y.copy()]
    fy = f(y, t, mu)
    J = jac(y, t, mu)
    err_prev = 1.0
    n_accept = n_reject = n_newton_fail = 0
    rejected_last = False

    while t < T:
        if n_accept >= cfg.max_steps:
            raise MaxStepsExceeded(f"{system.name} mu={mu:g}: more than {cfg.max_steps} steps")
        last = T - (t + h) <= max(cfg.h_min, 1e-14 * T)
        if last:
            h = T - t
        if h < cfg.h_min and not last:
            raise StepSizeUnderflow(f"{system.name} mu={mu:g}: h={h:.3e} < h_min at t={t:.6g}")

        lu = lu_factor(eye - _D * h * J)
        tg = t + _GAMMA * h
        t1 = T if last else t + h

        z = _newton(f, tg, y + _D * h * fy, y + _GAMMA * h * fy, lu, _D * h, mu,
                    newton_tol, cfg.newton_max_iter)
        x = None
        if z is not None:
            fz = f(z, tg, mu)
            x0 = y + (z - y) / _GAMMA
            x = _newton(f, t1, _W_Z * z - _W_Y * y, x0, lu, _D * h, mu,
                        newton_tol, cfg.newton_max_iter)
        if x is None:
            n_newton_fail += 1
            h *= 0.5
            rejected_last = True
            if h < cfg.h_min:
                raise StepSizeUnderflow(
                    f"{system.name} mu={mu:g}: Newton failure drove h below h_min at t={t:.6g}")
            continue

        fx = f(x, t1, mu)
        lte = 2.0 * _ERR_C * h * (fy / _GAMMA - fz / (_GAMMA * (1.0 - _GAMMA)) + fx / (1.0 - _GAMMA))
        est = lu_solve(lu, lte)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(x))
        err = max(_wrms(est, scale), 1e-10)

        if err <= 1.0:
            t = t1
            y, fy = x, fx
            times.append(t)
            states.append(y.copy())
            n_accept += 1
            fac = cfg.safety * err ** (-0.7 / 3.0) * err_prev ** (0.4 / 3.0)
            fac = min(max(fac, cfg.fac_min), cfg.fac_max)
            if rejected_last:
                fac = min(fac, 1.0)
            h = min(h * fac, cfg.h_max)
            err_prev = err
            rejected_last = False
            J = jac(y, t, mu)
        else:
            n_reject += 1
            h *= max(cfg.fac_min, cfg.safety * err ** (-1.0 / 3.0))
            rejected_last = True
            if h < cfg.h_min:
                raise StepSizeUnderflow(f"{system.name} mu={mu:g}: h={h:.3e} < h_min at t={t:.6g}")

    meta = {
        "solver": "trbdf2",
        "rtol": rtol,
        "atol": atol,
        "accepted": n_accept,
        "rejected": n_reject,
        "newton_failures": n_newton_fail,
    }
    return Trajectory(np.array(times), np.array(states), mu, meta)
