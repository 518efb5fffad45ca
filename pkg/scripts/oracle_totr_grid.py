"""Exhaustive 5^9 grid search for the 9-point coarse TOTR instance.

Standalone (numpy only, no package imports). The instance:

    s = 0, 1, ..., 8   (S = 8, h = 1)
    kappa = [0, 0, 1, 4, 1, 0, 0, 0, 0]
    tau_f = S = 8

Each node's log-speed v*_i ranges over LEVELS; for every combination the
speed v = exp(a + v*) is rescaled so the trapezoidal arrival time equals
tau_f, and the discrete objective

    J = sum_i w_i (v_i (Dv)_i^2 + kappa_i^2 v_i^3)

is evaluated with trapezoidal weights w and the derivative stencil
(central inside, first-order one-sided at both ends). Prints the minimum.
"""
import itertools

import numpy as np

S, N, TAU_F = 8.0, 9, 8.0
KAPPA = np.array([0, 0, 1, 4, 1, 0, 0, 0, 0], dtype=float)
LEVELS = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])


def objective(vstar: np.ndarray) -> np.ndarray:
    """Rows of ``vstar`` are candidate log-speed profiles."""
    h = S / (N - 1)
    w = np.full(N, h)
    w[0] = w[-1] = h / 2
    # arrival constraint: sum w exp(-(a + v*)) = tau_f
    a = np.log((w * np.exp(-vstar)).sum(axis=1) / TAU_F)
    v = np.exp(a[:, None] + vstar)
    dv = np.empty_like(v)
    dv[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    dv[:, 0] = (v[:, 1] - v[:, 0]) / h
    dv[:, -1] = (v[:, -1] - v[:, -2]) / h
    return (w * (v * dv**2 + KAPPA**2 * v**3)).sum(axis=1)


def main():
    best, arg = np.inf, None
    combos = np.array(list(itertools.product(range(len(LEVELS)), repeat=N)), dtype=np.int8)
    for chunk in np.array_split(combos, 20):
        vals = objective(LEVELS[chunk])
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, arg = float(vals[k]), LEVELS[chunk[k]]
    print(f"grid minimum J = {best!r}")
    print(f"argmin v* = {arg.tolist()}")


if __name__ == "__main__":
    main()
