"""Benchmark stiff ODE systems: stiff linear system (SLS), Van der Pol, HIRES.

Every system is exposed through :class:`OdeSystem`, whose callables take
``(y, t, mu)`` and return plain numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

Rhs = Callable[[np.ndarray, float, float], np.ndarray]


@dataclass(frozen=True)
class OdeSystem:
    name: str
    dim: int
    rhs: Rhs
    jacobian: Rhs
    y0_fn: Callable[[float], np.ndarray]
    horizon_fn: Callable[[float], float]
    training_mus: tuple[float, ...]
    test_mus: tuple[float, ...]
    # log10 exponents of the grids, used for file naming
    training_exponents: tuple[float, ...] = field(default=())
    test_exponents: tuple[float, ...] = field(default=())

    def y0(self, mu: float) -> np.ndarray:
        return np.array(self.y0_fn(mu), dtype=float)

    def horizon(self, mu: float) -> float:
        return float(self.horizon_fn(mu))

    def with_overrides(self, y0=None, horizon=None) -> "OdeSystem":
        """Copy with a fixed initial condition and/or horizon."""
        kw = {}
        if y0 is not None:
            y0 = np.asarray(y0, dtype=float)
            if y0.shape != (self.dim,):
                raise ValueError(f"y0 must have length {self.dim}")
            kw["y0_fn"] = lambda mu, _y=y0: _y.copy()
        if horizon is not None:
            if horizon <= 0:
                raise ValueError("horizon must be positive")
            kw["horizon_fn"] = lambda mu, _T=float(horizon): _T
        return replace(self, **kw)


def _grid(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = int(round((stop - start) / step))
    return tuple(round(start + k * step, 10) for k in range(n + 1))


def _pow10(exps: Sequence[float]) -> tuple[float, ...]:
    return tuple(10.0 ** e for e in exps)


# ---------------------------------------------------------------------------
# Stiff linear system

_SLS_MIX = np.array(
    [
        [5.0, 1.0, -1.0, 0.0, 0.0],
        [-1.0, 3.0, -10.0, 1.0, 2.0],
        [2.0, -1.0, 5.0, 1.0, -1.0],
        [0.0, 1.0, 2.0, 3.0, -3.0],
        [1.0, 12.0, -1.0, -2.0, 5.0],
    ]
)


@dataclass(frozen=True)
class SlsMatrices:
    A: np.ndarray

    @staticmethod
    def B(mu: float) -> np.ndarray:
        B = np.zeros((5, 5))
        B[0, 0] = -0.25 * mu
        B[0, 1] = 0.97 * mu
        B[1, 0] = -0.97 * mu
        B[1, 1] = -0.25 * mu
        B[2, 2] = -10.0 * mu / (mu ** 0.3 + 10.0)
        B[3, 3] = -100.0 * mu / (mu ** 0.6 + 100.0)
        B[4, 4] = -mu / (mu + 1.0)
        return B

    def operator(self, mu: float) -> np.ndarray:
        return self.A @ self.B(mu) @ self.A.T

    @staticmethod
    def decay_rates(mu: float) -> np.ndarray:
        return np.array(
            [
                0.25 * mu,
                10.0 * mu / (mu ** 0.3 + 10.0),
                100.0 * mu / (mu ** 0.6 + 100.0),
                mu / (mu + 1.0),
            ]
        )


def sls_matrices() -> SlsMatrices:
    Q, R = np.linalg.qr(_SLS_MIX)
    # positive diagonal of R makes the factorization unique
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return SlsMatrices(A=Q * signs)


def build_sls() -> OdeSystem:
    mats = sls_matrices()

    @lru_cache(maxsize=256)
    def op(mu: float) -> np.ndarray:
        M = mats.operator(mu)
        M.setflags(write=False)
        return M

    def rhs(y, t, mu):
        return op(float(mu)) @ np.asarray(y, dtype=float)

    def jac(y, t, mu):
        return op(float(mu)).copy()

    def horizon(mu):
        return min(10.0 / float(np.min(mats.decay_rates(mu))), 10.0)

    train_e = _grid(1.0, 4.0, 0.1)
    test_e = (1.05, 1.65, 2.25, 2.75, 3.35, 3.95)
    return OdeSystem(
        name="sls",
        dim=5,
        rhs=rhs,
        jacobian=jac,
        y0_fn=lambda mu: np.array([1.0, 0.0, 0.0, 0.0, 0.0]),
        horizon_fn=horizon,
        training_mus=_pow10(train_e),
        test_mus=_pow10(test_e),
        training_exponents=train_e,
        test_exponents=test_e,
    )


# ---------------------------------------------------------------------------
# Van der Pol, written with the mu^2 scaling on the second equation

def _vdp_rhs(y, t, mu):
    y1, y2 = y[0], y[1]
    return np.array([y2, mu * mu * ((1.0 - y1 * y1) * y2 - y1)])


def _vdp_jac(y, t, mu):
    y1, y2 = y[0], y[1]
    m2 = mu * mu
    return np.array([[0.0, 1.0], [m2 * (-2.0 * y1 * y2 - 1.0), m2 * (1.0 - y1 * y1)]])


VDP_Y0 = (2.0, 0.0)
# asymptotic relaxation period of eps*y'' = (1 - y^2) y' - y as eps -> 0
VDP_ASYMPTOTIC_PERIOD = 3.0 - 2.0 * math.log(2.0)


@lru_cache(maxsize=128)
def vdp_period(mu: float, y0: tuple[float, float] = VDP_Y0) -> float:
    """Relaxation period measured from upward zero crossings of y1."""
    from .integrate import SolverConfig, integrate_implicit_adaptive

    system = OdeSystem(
        name="vdp",
        dim=2,
        rhs=_vdp_rhs,
        jacobian=_vdp_jac,
        y0_fn=lambda m: np.array(y0),
        horizon_fn=lambda m: 1.0,
        training_mus=(),
        test_mus=(),
    )
    span = 3.2 * VDP_ASYMPTOTIC_PERIOD
    traj = integrate_implicit_adaptive(system, mu, SolverConfig(rtol=1e-6, atol=1e-8), span)
    t, y1 = traj.times, traj.states[:, 0]
    idx = np.nonzero((y1[:-1] < 0.0) & (y1[1:] >= 0.0))[0]
    if len(idx) < 2:
        return VDP_ASYMPTOTIC_PERIOD
    # linear interpolation of the crossing instants
    frac = -y1[idx] / (y1[idx + 1] - y1[idx])
    tc = t[idx] + frac * (t[idx + 1] - t[idx])
    return float(tc[1] - tc[0])


def build_vdp() -> OdeSystem:
    train_e = _grid(2.0, 4.0, 0.04)
    test_e = (2.01, 2.67, 3.33, 3.99)
    return OdeSystem(
        name="vdp",
        dim=2,
        rhs=_vdp_rhs,
        jacobian=_vdp_jac,
        y0_fn=lambda mu: np.array(VDP_Y0),
        horizon_fn=lambda mu: 2.0 * vdp_period(float(mu)),
        training_mus=_pow10(train_e),
        test_mus=_pow10(test_e),
        training_exponents=train_e,
        test_exponents=test_e,
    )


# ---------------------------------------------------------------------------
# HIRES chemical kinetics, stiff coupling mu * y6 * y8

def _hires_rhs(y, t, mu):
    y1, y2, y3, y4, y5, y6, y7, y8 = y
    r = mu * y6 * y8
    return np.array(
        [
            -1.71 * y1 + 0.43 * y2 + 8.32 * y3 + 0.0007,
            1.71 * y1 - 8.75 * y2,
            -10.03 * y3 + 0.43 * y4 + 0.035 * y5,
            8.32 * y2 + 1.71 * y3 - 1.12 * y4,
            -1.745 * y5 + 0.43 * y6 + 0.43 * y7,
            -r + 0.69 * y4 + 1.71 * y5 - 0.43 * y6 + 0.69 * y7,
            r - 1.81 * y7,
            -r + 1.81 * y7,
        ]
    )


def _hires_jac(y, t, mu):
    y6, y8 = y[5], y[7]
    J = np.zeros((8, 8))
    J[0, 0], J[0, 1], J[0, 2] = -1.71, 0.43, 8.32
    J[1, 0], J[1, 1] = 1.71, -8.75
    J[2, 2], J[2, 3], J[2, 4] = -10.03, 0.43, 0.035
    J[3, 1], J[3, 2], J[3, 3] = 8.32, 1.71, -1.12
    J[4, 4], J[4, 5], J[4, 6] = -1.745, 0.43, 0.43
    J[5, 3], J[5, 4], J[5, 5], J[5, 6], J[5, 7] = 0.69, 1.71, -0.43 - mu * y8, 0.69, -mu * y6
    J[6, 5], J[6, 6], J[6, 7] = mu * y8, -1.81, mu * y6
    J[7, 5], J[7, 6], J[7, 7] = -mu * y8, 1.81, -mu * y6
    return J


HIRES_Y0 = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0057)
HIRES_HORIZON = 450.0


def build_hires() -> OdeSystem:
    train_e = _grid(2.0, 4.0, 0.1)
    test_e = (2.025, 2.675, 3.325, 3.975)
    return OdeSystem(
        name="hires",
        dim=8,
        rhs=_hires_rhs,
        jacobian=_hires_jac,
        y0_fn=lambda mu: np.array(HIRES_Y0),
        horizon_fn=lambda mu: HIRES_HORIZON,
        training_mus=_pow10(train_e),
        test_mus=_pow10(test_e),
        training_exponents=train_e,
        test_exponents=test_e,
    )


_REGISTRY: dict[str, Callable[[], OdeSystem]] = {
    "sls": build_sls,
    "vdp": build_vdp,
    "hires": build_hires,
}


def register(name: str, builder: Callable[[], OdeSystem]) -> None:
    """Add a system builder to the name registry (used by the CLI)."""
    _REGISTRY[name] = builder


def available() -> list[str]:
    return sorted(_REGISTRY)


def get_system(name: str) -> OdeSystem:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {available()}") from None
