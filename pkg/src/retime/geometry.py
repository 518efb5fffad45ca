"""Geometric substrate shared by the arc-length based reparameterizations.

A trajectory is augmented with physical time as one extra component,
min-max scaled per component, and re-parameterized by arc length. The
uniform arc-length grid carries the curvature profile and the extrema
locations used by the extrema-based and trajectory-optimized methods.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .errors import DegenerateTrajectory, NonMonotoneAbscissa
from .integrate import Trajectory

DEFAULT_N_SAMPLES = 4096
EXTREMA_REL_PROMINENCE = 1e-3


@dataclass(frozen=True)
class AugmentedCurve:
    """Scaled augmented samples ``phi = [y_1..y_d, t]`` of one trajectory.

    ``scales[i] = (offset, span)`` so that ``phi_i = weights[i] * (x_i - offset) / span``.
    """

    phi: np.ndarray
    raw_t: np.ndarray
    scales: np.ndarray
    weights: np.ndarray
    zero_span: np.ndarray

    @property
    def dim(self) -> int:
        return self.phi.shape[1] - 1

    def dimensionalize(self, phi: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
        """Map scaled samples back to ``(t, states)``."""
        phi = self.phi if phi is None else np.asarray(phi, dtype=float)
        raw = self.scales[:, 0] + phi / self.weights * self.scales[:, 1]
        return raw[:, -1], raw[:, :-1]


def nondimensionalize(
    traj: Trajectory,
    weights: Optional[Sequence[float]] = None,
    scales: Optional[np.ndarray] = None,
) -> AugmentedCurve:
    """Min-max scale every state component and time to ``[0, 1]`` times its weight.

    ``scales`` may be supplied to apply a scaling fitted elsewhere (e.g. over a
    whole parametric batch); otherwise it is fitted on this trajectory.
    Constant components map to 0 and are flagged; their span is recorded as 1.
    """
    if len(traj) < 2:
        raise DegenerateTrajectory("need at least two samples")
    raw = np.column_stack([traj.states, traj.times])
    n_comp = raw.shape[1]
    w = np.ones(n_comp) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n_comp,) or np.any(w <= 0):
        raise ValueError(f"weights must be {n_comp} positive numbers")
    if scales is None:
        lo = raw.min(axis=0)
        span = raw.max(axis=0) - lo
    else:
        scales = np.asarray(scales, dtype=float)
        lo, span = scales[:, 0].copy(), scales[:, 1].copy()
    zero = span <= 0.0
    if zero[-1]:
        raise DegenerateTrajectory("trajectory has zero time span")
    span = np.where(zero, 1.0, span)
    phi = w * (raw - lo) / span
    return AugmentedCurve(
        phi=phi,
        raw_t=traj.times.copy(),
        scales=np.column_stack([lo, span]),
        weights=w,
        zero_span=zero,
    )


def fit_scales(trajectories: Sequence[Trajectory]) -> np.ndarray:
    """Global min-max scales over a batch (the per-trajectory default is not global)."""
    raw = np.vstack([np.column_stack([tr.states, tr.times]) for tr in trajectories])
    lo = raw.min(axis=0)
    return np.column_stack([lo, raw.max(axis=0) - lo])


@dataclass(frozen=True)
class ArcCurve:
    s_grid: np.ndarray
    phi_of_s: np.ndarray
    t_of_s: np.ndarray
    S: float
    kappa: np.ndarray
    curve: AugmentedCurve
    # cumulative arc length at each raw sample; interpolation knots for phi(s)
    s_knots: np.ndarray

    @property
    def ds(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0])

    @cached_property
    def _phi_interp(self):
        return PchipInterpolator(self.s_knots, self.curve.phi)

    @cached_property
    def _t_interp(self):
        return PchipInterpolator(self.s_knots, self.curve.raw_t)

    def phi_at(self, s) -> np.ndarray:
        return self._phi_interp(np.clip(s, 0.0, self.S))

    def states_at(self, s) -> np.ndarray:
        """Dimensional states at arc-length locations ``s``."""
        _, y = self.curve.dimensionalize(self.phi_at(s))
        return y

    def time_at(self, s) -> np.ndarray:
        return self._t_interp(np.clip(s, 0.0, self.S))


def arc_length(
    curve: AugmentedCurve,
    n_samples: int = DEFAULT_N_SAMPLES,
    smoothing_window: int = 1,
) -> ArcCurve:
    """Arc-length parameterization of the scaled augmented curve.

    The integrand ``sqrt(1 + |dy/dt|^2) dt`` is accumulated per sample
    interval with the secant slope, i.e. as chord lengths of the scaled
    polyline. ``phi`` and ``t`` are then resampled shape-preservingly onto
    ``n_samples`` uniform arc-length points.
    """
    if n_samples < 8:
        raise ValueError("n_samples must be >= 8")
    seg = np.linalg.norm(np.diff(curve.phi, axis=0), axis=1)
    s_knots = np.concatenate([[0.0], np.cumsum(seg)])
    S = float(s_knots[-1])
    if S <= 0.0:
        raise DegenerateTrajectory("trajectory has zero arc length")
    if np.any(seg <= 0.0):
        raise DegenerateTrajectory("repeated samples: arc length is not strictly increasing")
    s_grid = np.linspace(0.0, S, n_samples)
    phi_of_s = PchipInterpolator(s_knots, curve.phi)(s_grid)
    t_of_s = PchipInterpolator(s_knots, curve.raw_t)(s_grid)
    t_of_s[0], t_of_s[-1] = curve.raw_t[0], curve.raw_t[-1]
    kappa = curvature_of(phi_of_s, s_grid[1] - s_grid[0], smoothing_window)
    return ArcCurve(s_grid, phi_of_s, t_of_s, S, kappa, curve, s_knots)


def second_differences(x: np.ndarray, h: float) -> np.ndarray:
    """Second derivative along axis 0: central inside, one-sided 2nd order at the ends."""
    x = np.asarray(x, dtype=float)
    if len(x) < 4:
        raise ValueError("need at least 4 samples")
    d2 = np.empty_like(x)
    d2[1:-1] = x[2:] - 2.0 * x[1:-1] + x[:-2]
    d2[0] = 2.0 * x[0] - 5.0 * x[1] + 4.0 * x[2] - x[3]
    d2[-1] = 2.0 * x[-1] - 5.0 * x[-2] + 4.0 * x[-3] - x[-4]
    return d2 / (h * h)


def curvature_of(phi: np.ndarray, h: float, smoothing_window: int = 1) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    d2 = second_differences(phi, h)
    if smoothing_window > 1:
        if smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be odd")
        # average the vector before the norm so zero-mean noise cancels;
        # the window shrinks at the ends instead of repeating edge values
        total = uniform_filter1d(d2, smoothing_window, axis=0, mode="constant")
        count = uniform_filter1d(np.ones(len(d2)), smoothing_window, mode="constant")
        d2 = total / count[:, None]
    return np.linalg.norm(d2, axis=1)


def curvature(arc: ArcCurve, smoothing_window: int = 1) -> np.ndarray:
    """``|d^2 phi / ds^2|`` on the uniform arc-length grid.

    With ``smoothing_window > 1`` the second-difference vectors are
    moving-averaged before taking the norm.
    """
    return curvature_of(arc.phi_of_s, arc.ds, smoothing_window)


def find_extrema(arc: ArcCurve, rel_prominence: float = EXTREMA_REL_PROMINENCE) -> np.ndarray:
    """Arc-length locations of interior extrema of the state components.

    The time component is excluded. A turning point is kept only if its
    prominence exceeds ``rel_prominence`` times the component's total range.
    Locations closer than one grid cell are merged.
    """
    s, h = arc.s_grid, arc.ds
    found = []
    for comp in arc.phi_of_s[:, :-1].T:
        rng = float(np.ptp(comp))
        if rng <= 0.0:
            continue
        for sign in (1.0, -1.0):
            idx, _ = find_peaks(sign * comp, prominence=rel_prominence * rng)
            found.extend(s[idx])
    if not found:
        return np.empty(0)
    found = np.sort(np.asarray(found))
    keep = [found[0]]
    for x in found[1:]:
        if x - keep[-1] > h * (1.0 + 1e-9):
            keep.append(x)
    return np.asarray(keep)


def resample_uniform(xs, ys, n: int, mode: str = "shape_preserving"):
    """Resample ``ys(xs)`` onto ``n`` uniform points spanning ``[xs[0], xs[-1]]``.

    ``shape_preserving`` is monotone piecewise-cubic Hermite (no overshoot);
    ``cubic`` is a natural C2 spline.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise NonMonotoneAbscissa("abscissae must be strictly increasing with length >= 2")
    if mode == "shape_preserving":
        f = PchipInterpolator(xs, ys, axis=0)
    elif mode == "cubic":
        f = CubicSpline(xs, ys, axis=0, bc_type="natural")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    xu = np.linspace(xs[0], xs[-1], n)
    yu = f(xu)
    yu[0], yu[-1] = ys[0], ys[-1]
    return xu, yu
