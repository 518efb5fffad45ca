import math

import numpy as np
import pytest
from scipy.linalg import expm

from retime.errors import NonFinite
from retime.integrate import SolverConfig, Trajectory, integrate_explicit, integrate_implicit_adaptive
from retime.systems import OdeSystem, get_system, vdp_period


def linear(rate: float, dim: int = 1) -> OdeSystem:
    return OdeSystem(
        name="linear",
        dim=dim,
        rhs=lambda y, t, mu: rate * np.asarray(y),
        jacobian=lambda y, t, mu: rate * np.eye(dim),
        y0_fn=lambda mu: np.ones(dim),
        horizon_fn=lambda mu: 1.0,
        training_mus=(),
        test_mus=(),
    )


def test_rk4_exponential_decay():
    tr = integrate_explicit(linear(-1.0), 1.0, "rk4", 100, 1.0)
    assert tr.states[-1, 0] == pytest.approx(math.exp(-1), abs=1e-7)
    assert len(tr) == 101
    assert np.allclose(np.diff(tr.times), 0.01)


@pytest.mark.parametrize("scheme", ["euler", "rk4"])
def test_zero_field_is_exact(scheme):
    tr = integrate_explicit(linear(0.0, 3), 1.0, scheme, 37, 2.5)
    assert np.array_equal(tr.states, np.ones((38, 3)))


def test_rk4_is_fourth_order():
    errs = [abs(integrate_explicit(linear(-1.0), 1.0, "rk4", n, 1.0).states[-1, 0] - math.exp(-1))
            for n in (4, 8, 16, 32)]
    for a, b in zip(errs, errs[1:]):
        assert a / b >= 2 ** 3 * 0.9


def test_explicit_euler_blows_up_on_stiff_vdp():
    vdp = get_system("vdp")
    mu = 1e3
    try:
        tr = integrate_explicit(vdp, mu, "euler", 2000, vdp_period(mu))
    except NonFinite as exc:
        assert exc.step >= 1
        assert exc.partial is not None and not np.all(np.isfinite(exc.partial.states[-1]))
    else:
        assert np.max(np.abs(tr.states)) > 1e6


def test_nonfinite_carries_step_index():
    with pytest.raises(NonFinite) as info:
        integrate_explicit(linear(-1e4), 1.0, "euler", 1000, 1.0)
    # |1 - 10| ** n overflows a double near n = 308
    assert 300 <= info.value.step <= 320


def test_explicit_rejects_bad_arguments():
    with pytest.raises(ValueError):
        integrate_explicit(linear(-1.0), 1.0, "rk4", 0, 1.0)
    with pytest.raises(ValueError):
        integrate_explicit(linear(-1.0), 1.0, "heun", 10, 1.0)


@pytest.mark.parametrize("atol, max_steps", [(1e-6, 200), (1e-8, 500)])
def test_implicit_stiff_decay_takes_few_steps(atol, max_steps):
    # stability-limited forward Euler needs h < 2/1000, i.e. >= 500 steps;
    # relative control keeps h near 2e-5 until |y| < atol/rtol, so the
    # count depends on atol (156 and 367 steps when frozen)
    cfg = SolverConfig(rtol=1e-6, atol=atol)
    tr = integrate_implicit_adaptive(linear(-1000.0), 1.0, cfg, horizon=1.0)
    assert abs(tr.states[-1, 0] - math.exp(-1000.0)) < cfg.atol
    assert len(tr) - 1 < max_steps


def test_sls_matches_matrix_exponential():
    sls = get_system("sls")
    mu, rtol = 1e2, 1e-6
    tr = integrate_implicit_adaptive(sls, mu, SolverConfig(rtol=rtol, atol=1e-10), horizon=1.0)
    exact = expm(sls.jacobian(None, 0.0, mu) * 1.0) @ sls.y0(mu)
    assert tr.times[-1] == 1.0
    assert np.max(np.abs(tr.states[-1] - exact)) < 100 * rtol * max(1.0, np.max(np.abs(exact)))


def test_tolerance_changes_the_grid():
    sls = get_system("sls")
    fine = integrate_implicit_adaptive(sls, 10 ** 2.25, SolverConfig(rtol=1e-6))
    coarse = integrate_implicit_adaptive(sls, 10 ** 2.25, SolverConfig(rtol=1e-3))
    assert len(fine) != len(coarse)
    assert len(coarse) < len(fine)


def test_trajectory_shape_and_meta():
    tr = integrate_implicit_adaptive(get_system("hires"), 10 ** 2.675)
    assert tr.times[0] == 0.0 and tr.times[-1] == 450.0
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(np.isfinite(tr.states))
    assert tr.meta["solver"] and tr.meta["rtol"] == 1e-6


@pytest.mark.parametrize("e", get_system("hires").test_exponents)
def test_hires_conserves_y7_plus_y8(e):
    cfg = SolverConfig()
    tr = integrate_implicit_adaptive(get_system("hires"), 10.0 ** e, cfg)
    total = tr.states[:, 6] + tr.states[:, 7]
    assert np.max(np.abs(total - total[0])) < 10 * cfg.atol


@pytest.mark.parametrize("kw", [
    {"rtol": 0.0},
    {"atol": -1.0},
    {"h_min": 1.0, "h_max": 0.5},
    {"h_init": 10.0, "h_max": 1.0},
    {"max_steps": 0},
])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_step_limits_are_reported():
    from retime.errors import MaxStepsExceeded, StepSizeUnderflow

    vdp = get_system("vdp")
    with pytest.raises(MaxStepsExceeded):
        integrate_implicit_adaptive(vdp, 1e3, SolverConfig(max_steps=5))
    with pytest.raises(StepSizeUnderflow):
        integrate_implicit_adaptive(vdp, 1e4, SolverConfig(rtol=1e-6, h_min=1e-2, h_max=1e-2))


def test_trajectory_rejects_unsorted_times():
    with pytest.raises(ValueError):
        Trajectory([0.0, 1.0, 1.0], np.zeros((3, 1)), 1.0)


LADDER = (1e-5, 5e-6, 2.5e-6, 1.25e-6)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["sls", "vdp", "hires"])
def test_halving_rtol_never_doubles_the_error(name):
    system = get_system(name)
    for e in system.test_exponents:
        mu = 10.0 ** e
        # the two-period Van der Pol end point sits on a relaxation jump,
        # where final-state error measures phase only; stop mid slow branch
        T = 1.25 * vdp_period(mu) if name == "vdp" else system.horizon(mu)
        ref = integrate_implicit_adaptive(system, mu, SolverConfig(rtol=1e-10, atol=1e-12), T)
        floor = 1e-9 * (1 + np.max(np.abs(ref.states[-1])))
        errs = []
        for r in LADDER:
            tr = integrate_implicit_adaptive(system, mu, SolverConfig(rtol=r, atol=1e-3 * r), T)
            errs.append(np.max(np.abs(tr.states[-1] - ref.states[-1])))
        for a, b in zip(errs, errs[1:]):
            assert b <= 2 * a + floor, (e, errs)
