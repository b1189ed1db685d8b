import numpy as np
import pytest

from convexband.utils import (
    as_points,
    farthest_point_subset,
    grid_box,
    lower_hull_affines,
    min_norm_point_hull,
    stable_hash_array,
    unit_directions,
)


def test_as_points_shapes():
    assert as_points(np.array([1.0, 2.0]), 2).shape == (1, 2)
    assert as_points(np.zeros((5, 3)), 3).shape == (5, 3)
    with pytest.raises(ValueError):
        as_points(np.zeros((5, 3)), 2)


def test_grid_box_counts_and_corners():
    pts = grid_box(np.array([0.0, -1.0]), np.array([1.0, 1.0]), 3)
    assert pts.shape == (9, 2)
    assert [0.0, -1.0] in pts.tolist()
    assert [1.0, 1.0] in pts.tolist()


def test_unit_directions_are_unit():
    for dim in (1, 2, 3, 5):
        D = unit_directions(dim, 32)
        assert np.allclose(np.linalg.norm(D, axis=1), 1.0)


def test_min_norm_point_segment():
    pts = np.array([[1.0, 0.0], [0.0, 1.0]])
    z, w = min_norm_point_hull(pts)
    assert np.allclose(z, [0.5, 0.5], atol=1e-8)
    assert np.allclose(w, [0.5, 0.5], atol=1e-6)


def test_min_norm_point_offset_segment():
    pts = np.array([[2.0, 1.0], [2.0, -1.0]])
    z, _ = min_norm_point_hull(pts)
    assert np.allclose(z, [2.0, 0.0], atol=1e-8)


def test_min_norm_point_hull_containing_origin():
    pts = np.array([[1.0, 0.0], [-1.0, 1.0], [-1.0, -1.0]])
    z, _ = min_norm_point_hull(pts)
    assert np.linalg.norm(z) < 1e-6


def test_lower_hull_affines_interpolates_below_samples():
    rng = np.random.default_rng(1)
    X = rng.uniform(-2, 2, size=(40, 1))
    y = (X[:, 0] ** 2) + 0.1 * rng.uniform(size=40)
    slopes, offs = lower_hull_affines(X, y)
    vals = np.max(X @ slopes.T + offs, axis=1)
    assert np.all(vals <= y + 1e-9)
    # hull touches the data from below at the hull vertices
    assert np.max(y - vals) < np.max(y) - np.min(y)


def test_lower_hull_affines_2d_matches_parabola_supports():
    xs = np.linspace(-1, 1, 9)
    X = np.array([[a, b] for a in xs for b in xs])
    y = np.sum(X**2, axis=1)
    slopes, offs = lower_hull_affines(X, y)
    grid = np.array([[a, b] for a in xs for b in xs])
    vals = np.max(grid @ slopes.T + offs, axis=1)
    assert np.all(vals <= y + 1e-9)
    assert np.max(np.abs(vals - y)) < 0.08  # fine grid, tight hull


def test_lower_hull_affine_data_short_circuit():
    X = np.linspace(0, 1, 7).reshape(-1, 1)
    y = 3.0 * X[:, 0] - 0.5
    slopes, offs = lower_hull_affines(X, y)
    assert slopes.shape == (1, 1)
    assert slopes[0, 0] == pytest.approx(3.0, abs=1e-10)
    assert offs[0] == pytest.approx(-0.5, abs=1e-10)


def test_stable_hash_distinguishes_shape_and_dtype():
    a = np.arange(6, dtype=float)
    b = a.reshape(2, 3)
    assert stable_hash_array(a) != stable_hash_array(b)
    assert stable_hash_array(a) == stable_hash_array(a.copy())


def test_farthest_point_subset_spreads():
    pts = np.array([[0.0], [0.1], [0.2], [5.0], [10.0]])
    idx = farthest_point_subset(pts, 3, start=0)
    chosen = sorted(pts[idx, 0].tolist())
    assert chosen == [0.0, 5.0, 10.0]
