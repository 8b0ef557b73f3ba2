import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumiforge.grid import (GridError, LightTrajectory, arc_trajectory, build_grid, linear_trajectory,
                            load_trajectory, save_trajectory, static_trajectory, superpose,
                            trajectory_from_dict, trajectory_to_dict)


@pytest.fixture(scope="module")
def grid():
    return build_grid()


def test_default_grid_cardinality(grid):
    assert grid.n_per_axis == 33
    assert grid.size == 35_937
    assert len(grid.positions()) == 35_937


def test_small_grid():
    g = build_grid(10, 5, (0, 0, 0))
    assert g.n_per_axis == 3 and g.size == 27


def test_non_divisible_spacing_rejected():
    with pytest.raises(GridError, match="does not divide"):
        build_grid(160, 7, (-80, -80, 0))


def test_positions_span_the_cube(grid):
    pos = grid.positions()
    assert np.allclose(pos.min(axis=0), [-80, -80, 0])
    assert np.allclose(pos.max(axis=0), [80, 80, 160])
    assert np.allclose(grid.centroid_cm, [0, 0, 80])


def test_flat_index_is_a_bijection(grid):
    seen = {grid.flat_index(idx) for idx in grid.indices()}
    assert seen == set(range(grid.size))


def test_out_of_bounds_index(grid):
    with pytest.raises(GridError):
        grid.check((33, 0, 0))
    assert not grid.contains((-1, 0, 0))


def test_horizontal_walk(grid):
    tr = linear_trajectory(grid, (0, 16, 16), (32, 16, 16), 33)
    assert [tuple(p) for p in tr.points] == [(t, 16, 16) for t in range(33)]
    assert tr.kind == "horizontal"


def test_static_walk(grid):
    tr = linear_trajectory(grid, (5, 5, 5), (5, 5, 5), 4)
    assert [tuple(p) for p in tr.points] == [(5, 5, 5)] * 4
    assert static_trajectory(grid, (5, 5, 5), 4) == tr


def test_diagonal_walk(grid):
    tr = linear_trajectory(grid, (0, 0, 0), (32, 32, 32), 33)
    assert [tuple(p) for p in tr.points] == [(t, t, t) for t in range(33)]
    assert tr.kind == "diagonal"


def test_vertical_kind(grid):
    assert linear_trajectory(grid, (16, 28, 0), (16, 28, 32), 16).kind == "vertical"


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.integers(0, 32)] * 3), st.tuples(*[st.integers(0, 32)] * 3), st.integers(2, 40))
def test_linear_walk_hits_endpoints_and_stays_inside(start, end, n):
    g = build_grid()
    tr = linear_trajectory(g, start, end, n)
    assert tuple(tr.points[0]) == start and tuple(tr.points[-1]) == end
    assert len(tr) == n
    assert all(g.contains(p) for p in tr.points)


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.integers(0, 32)] * 3), st.tuples(*[st.integers(0, 32)] * 3), st.integers(2, 40))
def test_reversed_walk_is_the_reverse(start, end, n):
    g = build_grid()
    fwd = linear_trajectory(g, start, end, n)
    back = linear_trajectory(g, end, start, n)
    assert fwd.points == back.points[::-1]


def test_arc_endpoints(grid):
    tr = arc_trajectory(grid, (16, 16, 16), 40.0, ("i", "k"), 0.0, math.pi, 9)
    assert len(tr) == 9
    assert tuple(tr.points[0]) == (24, 16, 16)
    assert tuple(tr.points[-1]) == (8, 16, 16)


def test_arc_zero_radius(grid):
    tr = arc_trajectory(grid, (16, 16, 16), 0.0, ("i", "k"), 0.0, math.pi, 5)
    assert [tuple(p) for p in tr.points] == [(16, 16, 16)] * 5


def test_arc_leaving_grid(grid):
    with pytest.raises(GridError, match="leaves the grid"):
        arc_trajectory(grid, (16, 16, 16), 200.0, ("i", "k"), 0.0, math.pi, 9)


def test_superpose(grid):
    a = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 16)
    b = linear_trajectory(grid, (16, 28, 0), (16, 28, 32), 16)
    multi = superpose([a, b], [1.0, 0.5])
    assert len(multi) == 16 and multi.kind == "multi"
    lights = multi.lights_at(3)
    assert [w for _, w in lights] == [1.0, 0.5]


def test_superpose_single_track_matches_track(grid):
    a = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 16)
    multi = superpose([a], [1.0])
    for t in range(16):
        (p1, w1), = multi.lights_at(t)
        (p2, w2), = a.lights_at(t)
        assert np.array_equal(p1, p2) and w1 == w2


def test_superpose_length_mismatch(grid):
    a = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 16)
    b = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 8)
    with pytest.raises(GridError, match="lengths differ"):
        superpose([a, b], [1.0, 1.0])


def test_mirror(grid):
    tr = linear_trajectory(grid, (3, 28, 5), (20, 28, 9), 8).mirrored()
    assert tuple(tr.points[0]) == (29, 28, 5)
    assert tuple(tr.points[-1]) == (12, 28, 9)


def test_resample_keeps_endpoints(grid):
    tr = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 33).resample(16)
    assert len(tr) == 16
    assert tuple(tr.points[0]) == (0, 28, 16) and tuple(tr.points[-1]) == (32, 28, 16)


def test_json_round_trip(tmp_path, grid):
    a = linear_trajectory(grid, (0, 28, 16), (32, 28, 16), 16)
    b = arc_trajectory(grid, (16, 16, 16), 40.0, ("i", "k"), 0.0, math.pi, 16)
    for tr in (a, superpose([a, b], [1.0, 0.25])):
        assert trajectory_from_dict(trajectory_to_dict(tr)) == tr
        save_trajectory(tr, tmp_path / "t.json")
        assert load_trajectory(tmp_path / "t.json") == tr


def test_empty_trajectory_rejected(grid):
    with pytest.raises(GridError):
        LightTrajectory(grid, ())
