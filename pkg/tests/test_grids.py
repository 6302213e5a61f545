import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psr_gmti.grids import (
    C0,
    AcquisitionGeometry,
    CircularTrajectory,
    OffGridVelocityError,
    RadarParams,
    SceneGrid,
    Topography,
    VelocityGrid,
    WaypointTrajectory,
    desk_geometry,
    min_detectable_speed,
    paper_geometry,
    paper_trajectory,
    phase,
    range_variation,
    scatterer_position,
    two_way_range,
)


def hover(height):
    """Antenna parked at (0, 0, height) for the whole aperture."""
    return WaypointTrajectory([0.0, 1.0], [[0.0, 0.0, height], [0.0, 0.0, height]], 2)


# --- scene grid ---------------------------------------------------------------


def test_scene_grid_spacing_and_centers():
    g = SceneGrid(100.0, 50.0, 5, 3)
    assert g.n_pixels == 15
    assert g.dx == 25.0 and g.dy == 25.0
    c = g.pixel_centers
    assert c.shape == (15, 2)
    # row-major: pixel 7 is row 1, col 2
    np.testing.assert_array_equal(c[7], [50.0, 25.0])
    np.testing.assert_array_equal(c[-1], [100.0, 50.0])


@given(st.integers(2, 12), st.integers(2, 12), st.data())
def test_pixel_index_bijection(nx, ny, data):
    g = SceneGrid(10.0, 10.0, nx, ny)
    k = data.draw(st.integers(0, nx * ny - 1))
    row, col = g.pixel_rowcol(k)
    assert (row, col) == divmod(k, nx)
    assert g.pixel_index(row, col) == k


def test_pixel_index_out_of_range():
    g = SceneGrid(10.0, 10.0, 3, 3)
    with pytest.raises(IndexError):
        g.pixel_index(3, 0)


# --- velocity grid --------------------------------------------------------------


def test_velocity_grid_zero_is_center_for_symmetric_odd():
    v = VelocityGrid.symmetric(20.0, 21)
    assert v.n_velocities == 441
    assert v.stationary_index == 220
    np.testing.assert_array_equal(v.samples[v.stationary_index], [0.0, 0.0])
    assert v.spacing == (2.0, 2.0)


def test_velocity_grid_row_major_samples():
    v = VelocityGrid(-1.0, 1.0, 3, 3)
    # k' = iy * mx + ix
    np.testing.assert_array_equal(v.samples[5], [1.0, 0.0])
    np.testing.assert_array_equal(v.samples[7], [0.0, 1.0])
    assert v.index_of((1.0, 0.0)) == 5


def test_velocity_grid_without_zero_rejected():
    with pytest.raises(ValueError):
        VelocityGrid(-1.0, 1.0, 4, 4)


def test_index_of_off_grid_raises():
    v = VelocityGrid.symmetric(18.0, 7)
    assert v.index_of((6.0, -12.0)) == v.samples.tolist().index([6.0, -12.0])
    with pytest.raises(OffGridVelocityError):
        v.index_of((5.0, 0.0))
    assert not v.contains((5.0, 0.0))


@given(st.integers(1, 10), st.floats(0.5, 40.0))
def test_symmetric_grid_center(half, vmax):
    v = VelocityGrid.symmetric(vmax, 2 * half + 1)
    assert v.stationary_index == (v.n_velocities - 1) // 2
    np.testing.assert_array_equal(v.samples[v.stationary_index], [0.0, 0.0])


# --- trajectories -----------------------------------------------------------------


def test_paper_trajectory_start_and_speed():
    t = paper_trajectory()
    np.testing.assert_allclose(t.position(0.0), [22000.0, 11000.0, 6500.0])
    # 2 pi R / S with R = 11 km, S = 262.5 s
    assert t.platform_speed == pytest.approx(263.29, abs=0.01)
    assert t.slow_time_samples[0] == 0.0 and t.slow_time_samples[-1] == 262.5


@given(st.floats(0.0, 262.5))
def test_circular_trajectory_stays_on_circle(s):
    t = paper_trajectory()
    p = t.position(s)
    assert math.hypot(p[0] - 11000.0, p[1] - 11000.0) == pytest.approx(11000.0, rel=1e-12)
    assert p[2] == 6500.0


def test_trajectory_below_scene_rejected():
    traj = CircularTrajectory((0.0, 0.0), 100.0, 5.0, 10.0, 4)
    scene = SceneGrid(10.0, 10.0, 3, 3, topography=Topography.flat(10.0))
    with pytest.raises(ValueError):
        AcquisitionGeometry(scene, VelocityGrid.symmetric(1.0, 3), traj, RadarParams(n_freq=2))


def test_radar_frequencies():
    r = RadarParams(center_frequency=9.45e9, bandwidth=50e6, n_freq=5)
    w = r.omegas
    assert np.all(np.diff(w) > 0)
    np.testing.assert_allclose(w[[0, -1]], 2 * np.pi * np.array([9.425e9, 9.475e9]))
    with pytest.raises(ValueError):
        RadarParams(bandwidth=0.0)


# --- geometric primitives ---------------------------------------------------------


def test_scatterer_position_examples():
    np.testing.assert_array_equal(scatterer_position((0, 0), (0, 0), 5.0), [0, 0, 0])
    np.testing.assert_array_equal(scatterer_position((10, 0), (2, 0), 3.0), [16, 0, 0])
    slope = Topography.plane(0.1, 0.0)
    z = scatterer_position((0.0, 0.0), (1.0, 1.0), 1.0, slope)
    assert z[2] == pytest.approx(0.1)


def test_two_way_range_nadir():
    assert two_way_range(hover(500.0), 0.3, (0.0, 0.0)) == pytest.approx(1000.0)


def test_two_way_range_paper_start():
    r = two_way_range(paper_trajectory(), 0.0, (0.0, 0.0))
    assert r == pytest.approx(2 * math.sqrt(22000**2 + 11000**2 + 6500**2))
    assert r == pytest.approx(50882.2, abs=0.05)


def test_two_way_range_mirror_symmetry():
    t = paper_trajectory()
    # at s = 0 the antenna sits at y = 11 km; mirror x across y = 11 km
    a = two_way_range(t, 0.0, (100.0, 10000.0))
    b = two_way_range(t, 0.0, (100.0, 12000.0))
    assert a == pytest.approx(b, rel=1e-14)


@given(st.floats(0.0, 262.5), st.floats(0, 100), st.floats(0, 100))
def test_range_at_least_twice_altitude(s, x1, x2):
    assert two_way_range(paper_trajectory(), s, (x1, x2)) >= 2 * 6500.0


def test_range_variation_vanishing_cases():
    t = paper_trajectory()
    assert range_variation(t, 0.0, (5.0, 5.0), (10.0, -3.0)) == 0.0
    assert range_variation(t, 100.0, (5.0, 5.0), (0.0, 0.0)) == 0.0
    # antenna straight above: look direction is vertical, ground motion is orthogonal
    assert range_variation(hover(1000.0), 0.5, (0.0, 0.0), (3.0, 4.0)) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(1.0, 262.5), st.floats(-20, 20), st.floats(-20, 20), st.floats(0.1, 3.0))
def test_range_variation_linear_in_s_and_nu(s, v1, v2, c):
    t = paper_trajectory()
    x = (40.0, 60.0)
    base = range_variation(t, s, x, (v1, v2))
    # linear in nu at fixed s
    assert range_variation(t, s, x, (c * v1, c * v2)) == pytest.approx(c * base, rel=1e-9, abs=1e-9)
    # manual oracle: 2 s u.v with u from antenna to ground point
    g = t.position(s)
    diff = np.array([x[0], x[1], 0.0]) - g
    u = diff / np.linalg.norm(diff)
    assert base == pytest.approx(2 * s * (u[0] * v1 + u[1] * v2), rel=1e-9, abs=1e-9)


def test_phase_examples():
    t = paper_trajectory()
    assert phase(0.0, t, 10.0, (1.0, 2.0), (3.0, 4.0)) == 0.0
    p1 = phase(1e10, t, 10.0, (1.0, 2.0), (3.0, 4.0))
    assert phase(2e10, t, 10.0, (1.0, 2.0), (3.0, 4.0)) == pytest.approx(2 * p1, rel=1e-14)
    # R = 2 * c0 / 2 = c0 gives one radian at omega = 1
    assert phase(1.0, hover(C0 / 2), 0.0, (0.0, 0.0), (0.0, 0.0)) == pytest.approx(1.0, rel=1e-14)


def test_phase_slope_is_total_path():
    t = paper_trajectory()
    x, nu, s = (30.0, 70.0), (6.0, -4.0), 42.0
    total = two_way_range(t, s, x) + range_variation(t, s, x, nu)
    assert phase(5.0, t, s, x, nu) == pytest.approx(5.0 * total / C0, rel=1e-14)


def test_min_detectable_speed():
    assert min_detectable_speed(50e6, 262.5) == pytest.approx(C0 / (2 * 50e6 * 262.5))
    assert min_detectable_speed(50e6, 262.5) == pytest.approx(0.01142, abs=1e-5)
    assert min_detectable_speed(50e6, 525.0) == pytest.approx(min_detectable_speed(50e6, 262.5) / 2)
    assert min_detectable_speed(C0 / 2, 1.0) == pytest.approx(1.0)


def test_geometry_factories():
    g = paper_geometry()
    assert g.shape == (441, 961)
    assert g.n_measurements == 51200
    d = desk_geometry()
    assert d.shape == (49, 225)
    assert d.n_measurements == 64 * 32
    assert d.velocities.spacing == (6.0, 6.0)
