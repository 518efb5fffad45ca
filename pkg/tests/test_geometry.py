import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from retime.errors import DegenerateTrajectory, NonMonotoneAbscissa
from retime.geometry import (
    ArcCurve,
    arc_length,
    curvature,
    curvature_of,
    find_extrema,
    fit_scales,
    nondimensionalize,
    resample_uniform,
)
from retime.integrate import Trajectory
from retime.io import read_columns, save_arc

from conftest import held_out_cases, trajectory


def arc_from_phi(s, phi):
    """Bare ArcCurve around samples already on a uniform s grid (last column is time)."""
    return ArcCurve(s, phi, phi[:, -1], float(s[-1]), curvature_of(phi, s[1] - s[0]), None, s)


def test_constant_component_is_flagged():
    t = np.linspace(0, 10, 11)
    tr = Trajectory(t, np.column_stack([np.full(11, 3.0), t ** 2]), 1.0)
    c = nondimensionalize(tr)
    assert np.array_equal(c.phi[:, 0], np.zeros(11))
    assert c.zero_span.tolist() == [True, False, False]
    assert c.scales[0, 1] == 1.0
    assert np.allclose(c.phi[:, -1], t / 10, rtol=0, atol=1e-15)


def test_round_trip_is_exact(rng):
    t = np.cumsum(rng.uniform(0.1, 1.0, 50))
    y = rng.normal(size=(50, 3)) * [1e-3, 1.0, 1e4]
    c = nondimensionalize(Trajectory(t, y, 1.0), weights=[1.0, 2.0, 0.5, 3.0])
    assert c.phi.min() >= 0 and np.allclose(c.phi.max(axis=0), [1.0, 2.0, 0.5, 3.0])
    t2, y2 = c.dimensionalize()
    assert np.allclose(t2, t, rtol=1e-14, atol=0)
    assert np.allclose(y2, y, rtol=1e-14, atol=1e-14 * np.abs(y).max(axis=0))


def test_nondimensionalize_errors():
    with pytest.raises(DegenerateTrajectory):
        nondimensionalize(Trajectory([0.0], [[1.0]], 1.0))
    with pytest.raises(ValueError):
        nondimensionalize(Trajectory([0.0, 1.0], [[1.0], [2.0]], 1.0), weights=[1.0])


def test_batch_scales_cover_every_trajectory():
    a = Trajectory([0.0, 1.0], [[0.0], [1.0]], 1.0)
    b = Trajectory([0.0, 2.0], [[-1.0], [0.5]], 1.0)
    sc = fit_scales([a, b])
    assert np.array_equal(sc, [[-1.0, 2.0], [0.0, 2.0]])
    assert nondimensionalize(a, scales=sc).phi[-1].tolist() == [1.0, 0.5]


def test_arc_length_of_constant_state_is_time_span():
    t = np.linspace(0, 7, 30)
    arc = arc_length(nondimensionalize(Trajectory(t, np.full((30, 2), 4.0), 1.0)), 64)
    assert arc.S == pytest.approx(1.0, abs=1e-10)


def test_arc_length_of_diagonal():
    t = np.linspace(0, 1, 17)
    arc = arc_length(nondimensionalize(Trajectory(t, t, 1.0)), 64)
    assert arc.S == pytest.approx(math.sqrt(2), abs=1e-8)


def test_arc_length_of_helix_matches_quadrature():
    # scaled curve ((cos 2 pi t + 1)/2, (sin 2 pi t + 1)/2, t) has speed sqrt(1 + pi^2)
    t = np.linspace(0, 1, 20001)
    tr = Trajectory(t, np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)]), 1.0)
    oracle, _ = quad(lambda x: math.sqrt(1 + (math.pi * math.sin(2 * math.pi * x)) ** 2
                                         + (math.pi * math.cos(2 * math.pi * x)) ** 2), 0, 1)
    assert arc_length(nondimensionalize(tr), 4096).S == pytest.approx(oracle, abs=1e-6)


def test_arc_length_errors():
    t = np.linspace(0, 1, 5)
    c = nondimensionalize(Trajectory(t, t, 1.0))
    with pytest.raises(ValueError):
        arc_length(c, 4)


def test_straight_segment_has_zero_curvature():
    s = np.linspace(0, 3, 500)
    u = np.array([1.0, -2.0, 2.0]) / 3.0
    assert np.max(curvature_of(s[:, None] * u, s[1] - s[0])) < 1e-8


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_circle_curvature(r):
    s = np.linspace(0, 2 * np.pi * r, 1000)
    phi = r * np.column_stack([np.cos(s / r), np.sin(s / r)])
    assert np.allclose(curvature_of(phi, s[1] - s[0]), 1.0 / r, rtol=0, atol=1e-4)


def test_noisy_line_curvature_is_small_after_smoothing():
    # frozen instance: unit-speed line, spacing 0.25, 1001 points, sigma 1e-3;
    # worst case over 200 seeds at freeze time was 0.072
    h = 0.25
    s = np.arange(1001) * h
    u = np.array([3.0, 4.0]) / 5.0
    for seed in range(200):
        noise = np.random.default_rng(seed).normal(0, 1e-3, (len(s), 2))
        kappa = curvature_of(s[:, None] * u + noise, h, smoothing_window=11)
        assert kappa.max() < 0.1


def test_smoothing_window_must_be_odd():
    with pytest.raises(ValueError):
        curvature_of(np.zeros((20, 2)), 0.1, smoothing_window=4)


def test_extrema_of_sine():
    S = 4.0
    s = np.linspace(0, S, 2001)
    arc = arc_from_phi(s, np.column_stack([np.sin(2 * np.pi * s / S), s / S]))
    ext = find_extrema(arc)
    assert len(ext) == 2
    assert np.all(np.abs(ext - [S / 4, 3 * S / 4]) <= s[1] - s[0])


def test_monotone_and_constant_curves_have_no_extrema():
    s = np.linspace(0, 1, 500)
    mono = arc_from_phi(s, np.column_stack([s ** 2, np.exp(s), s]))
    flat = arc_from_phi(s, np.column_stack([np.zeros_like(s), s]))
    assert find_extrema(mono).size == 0
    assert find_extrema(flat).size == 0


def test_extrema_ignore_tiny_wiggles():
    s = np.linspace(0, 1, 4001)
    comp = s + 1e-5 * np.sin(400 * np.pi * s)
    assert find_extrema(arc_from_phi(s, np.column_stack([comp, s]))).size == 0


@pytest.mark.parametrize("mode", ["shape_preserving", "cubic"])
def test_linear_data_is_reproduced(mode):
    xs = np.array([0.0, 0.3, 1.1, 2.0, 4.5])
    xu, yu = resample_uniform(xs, 2 * xs - 1, 37, mode)
    assert np.allclose(yu, 2 * xu - 1, rtol=0, atol=1e-13)


def test_cubic_resampling_of_sine():
    xs = np.linspace(0, 2 * np.pi, 50)
    xu, yu = resample_uniform(xs, np.sin(xs), 500, "cubic")
    assert np.max(np.abs(yu - np.sin(xu))) < 1e-5


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=30),
       st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=30))
def test_shape_preserving_never_overshoots(dx, y):
    n = min(len(dx), len(y))
    xs = np.cumsum(dx[:n])
    ys = np.asarray(y[:n])
    xu, yu = resample_uniform(xs, ys, 200)
    k = np.clip(np.searchsorted(xs, xu, side="right") - 1, 0, n - 2)
    lo = np.minimum(ys[k], ys[k + 1])
    hi = np.maximum(ys[k], ys[k + 1])
    tol = 1e-12 * (1 + np.abs(ys).max())
    assert np.all(yu >= lo - tol) and np.all(yu <= hi + tol)


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=30),
       st.lists(st.floats(0.0, 3.0), min_size=2, max_size=30))
def test_shape_preserving_keeps_monotone_data_monotone(dx, dy):
    n = min(len(dx), len(dy))
    xs, ys = np.cumsum(dx[:n]), np.cumsum(dy[:n])
    _, yu = resample_uniform(xs, ys, 300)
    assert np.all(np.diff(yu) >= -1e-12 * (1 + ys.max()))


def test_resample_rejects_unsorted_abscissa():
    with pytest.raises(NonMonotoneAbscissa):
        resample_uniform([0.0, 2.0, 1.0], [0.0, 1.0, 2.0], 10)
    with pytest.raises(NonMonotoneAbscissa):
        resample_uniform([0.0], [1.0], 10)


@pytest.mark.parametrize("name, e", held_out_cases())
def test_arc_curves_of_benchmarks(name, e):
    tr = trajectory(name, e)
    arc = arc_length(nondimensionalize(tr))
    speed = np.linalg.norm(np.diff(arc.phi_of_s, axis=0), axis=1) / arc.ds
    assert 0.99 <= np.median(speed) <= 1.01
    assert np.all(np.diff(arc.t_of_s) > 0)
    assert np.all(arc.kappa >= 0)
    assert np.array_equal(arc.kappa, curvature(arc))
    # same path, every other sample
    keep = np.r_[np.arange(0, len(tr) - 1, 2), len(tr) - 1]
    sub = Trajectory(tr.times[keep], tr.states[keep], tr.mu)
    assert abs(arc_length(nondimensionalize(sub)).S / arc.S - 1) < 5e-3


def test_arc_dump(tmp_path):
    t = np.linspace(0, 1, 40)
    arc = arc_length(nondimensionalize(Trajectory(t, np.column_stack([t, t ** 2]), 1.0)), 16)
    save_arc(tmp_path / "arc.csv", arc)
    header, data = read_columns(tmp_path / "arc.csv")
    assert header == ["s", "kappa", "t", "phi1", "phi2", "phi3"]
    assert data.shape == (16, 6)
    assert np.array_equal(data[:, 0], arc.s_grid)
