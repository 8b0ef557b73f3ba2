import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumiforge.canvas import (CanvasError, CanvasGeometry, canvas_irradiance, render_canvas,
                              render_canvas_sequence)
from lumiforge.grid import build_grid, linear_trajectory, static_trajectory, superpose
from lumiforge.render.scene import HEAD_CENTER_CM


@pytest.fixture(scope="module")
def geo():
    return CanvasGeometry.for_resolution(64)


@pytest.fixture(scope="module")
def grid():
    return build_grid()


def test_on_axis_light_is_radially_symmetric(geo):
    d = 50.0
    light = np.asarray(HEAD_CENTER_CM) + d * geo.normal()
    raw = canvas_irradiance(light, 1000.0, geo)
    assert np.allclose(raw, raw[:, ::-1], atol=1e-15)
    assert np.allclose(raw, raw[::-1], atol=1e-15)
    assert np.allclose(raw, raw.T, atol=1e-15)
    peak = np.unravel_index(np.argmax(raw), raw.shape)
    assert peak[0] in (31, 32) and peak[1] in (31, 32)
    # the four centre pixels sit slightly off the foot point, so they read just under I/d^2
    assert raw.max() < 1000.0 / d ** 2
    assert raw.max() == pytest.approx(1000.0 / d ** 2, rel=1e-3)


def test_peak_value_at_foot_point():
    geo = CanvasGeometry.for_resolution(65)  # odd size: a pixel sits on the optical axis
    d = 40.0
    raw = canvas_irradiance(np.asarray(HEAD_CENTER_CM) + d * geo.normal(), 800.0, geo)
    assert raw[32, 32] == pytest.approx(800.0 / d ** 2, rel=1e-12)
    assert np.argmax(raw) == 32 * 65 + 32


def test_mirrored_lights_mirror_canvases(geo, grid):
    for idx in [(3, 28, 10), (30, 20, 25), (12, 30, 16)]:
        a = render_canvas(grid.world_position(idx), 2000.0, geo).pixels
        m = (grid.n_per_axis - 1 - idx[0], idx[1], idx[2])
        b = render_canvas(grid.world_position(m), 2000.0, geo).pixels
        assert np.array_equal(a, b[:, ::-1])


def test_light_behind_plane_gives_black_canvas(geo):
    light = np.asarray(HEAD_CENTER_CM) - 30.0 * geo.normal()
    assert not canvas_irradiance(light, 2000.0, geo).any()


def test_light_on_plane_rejected(geo):
    with pytest.raises(CanvasError):
        canvas_irradiance(np.asarray(HEAD_CENTER_CM) + np.array([10.0, 0.0, 0.0]), 2000.0, geo)


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(0, 32), st.integers(17, 32), st.integers(0, 32)),
       st.floats(1.0, 1e4), st.floats(0.01, 100.0))
def test_intensity_scaling_is_exact(idx, power, k):
    g = build_grid()
    geo = CanvasGeometry.for_resolution(32)
    p = g.world_position(idx)
    a = canvas_irradiance(p, power, geo)
    b = canvas_irradiance(p, k * power, geo)
    assert np.allclose(b, k * a, rtol=1e-12, atol=0)


def test_static_trajectory_identical_canvases(grid, geo):
    seq = render_canvas_sequence(static_trajectory(grid, (8, 28, 20), 5), geo)
    assert all(np.array_equal(seq.canvases[0], c) for c in seq.canvases)


def test_superposition_is_additive_before_clamp(grid, geo):
    a = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 8)
    b = linear_trajectory(grid, (16, 24, 0), (16, 30, 32), 8)
    both = render_canvas_sequence(superpose([a, b], [1.0, 0.5]), geo, clamp=False)
    ca = render_canvas_sequence(a, geo, clamp=False)
    cb = render_canvas_sequence(b, geo, clamp=False)
    assert np.allclose(both.canvases, ca.canvases + 0.5 * cb.canvases, rtol=1e-12, atol=0)


def test_horizontal_sweep_peak_moves_right(grid, geo):
    seq = render_canvas_sequence(linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 33), geo, clamp=False)
    cols = [np.unravel_index(np.argmax(c), c.shape)[1] for c in seq.canvases]
    assert all(b >= a for a, b in zip(cols, cols[1:]))
    assert cols[-1] > cols[0]


def test_canvas_independent_of_subject(grid, geo):
    # canvases take no scene argument: identical for every subject by construction
    tr = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 4)
    assert np.array_equal(render_canvas_sequence(tr, geo).canvases, render_canvas_sequence(tr, geo).canvases)


def test_sequence_values_in_unit_range(grid, geo):
    seq = render_canvas_sequence(linear_trajectory(grid, (0, 32, 0), (32, 32, 32), 6), geo)
    assert seq.canvases.shape == (6, 64, 64)
    assert seq.canvases.min() >= 0.0 and seq.canvases.max() <= 1.0
    assert seq.as_rgb().shape == (6, 64, 64, 3)
