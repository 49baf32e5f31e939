import numpy as np
import pytest

from bvh import (
    brute_force_closest, build_bvh, bvh_closest, bvh_closest_batch, closest_point_on_triangle, min_distance,
    refit_bvh,
)
from errors import RejectedInputError
from toy_data import make_uv_sphere

TRIANGLE = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@pytest.fixture
def bumpy_sphere(rng):
    vertices, faces = make_uv_sphere(1.0)
    vertices = vertices * (1.0 + 0.1 * rng.random((vertices.shape[0], 1)))
    return vertices, faces


@pytest.mark.parametrize("point, expected, distance", [
    ((0.2, 0.2, 1.0), (0.2, 0.2, 0.0), 1.0),        # face interior
    ((-1.0, -1.0, 0.0), (0.0, 0.0, 0.0), np.sqrt(2.0)),   # vertex a
    ((3.0, -1.0, 0.0), (1.0, 0.0, 0.0), np.sqrt(5.0)),    # vertex b
    ((-0.5, 4.0, 0.0), (0.0, 1.0, 0.0), np.sqrt(9.25)),   # vertex c
    ((0.5, -1.0, 0.0), (0.5, 0.0, 0.0), 1.0),        # edge ab
    ((-2.0, 0.5, 0.0), (0.0, 0.5, 0.0), 2.0),        # edge ac
    ((2.0, 2.0, 0.0), (0.5, 0.5, 0.0), np.sqrt(4.5)),     # edge bc
])
def test_closest_point_regions(point, expected, distance):
    q, d = closest_point_on_triangle(point, TRIANGLE)
    np.testing.assert_allclose(q, expected, atol=1e-12)
    assert d == pytest.approx(distance)


def test_degenerate_triangle_uses_longest_edge():
    collinear = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    q, d = closest_point_on_triangle((1.5, 1.0, 0.0), collinear)
    np.testing.assert_allclose(q, (1.5, 0.0, 0.0), atol=1e-12)
    assert d == pytest.approx(1.0)


def test_bvh_matches_brute_force(bumpy_sphere, rng):
    vertices, faces = bumpy_sphere
    bvh = build_bvh(vertices, faces)
    points = rng.uniform(-1.5, 1.5, size=(10_000, 3))
    tris, closest, dist = bvh_closest_batch(bvh, points)
    for i in range(points.shape[0]):
        t, q, d = brute_force_closest(vertices, faces, points[i])
        assert tris[i] == t
        assert dist[i] == pytest.approx(d, abs=1e-12)
        np.testing.assert_allclose(closest[i], q, atol=1e-9)


def test_vertex_ties_go_to_the_lowest_triangle():
    vertices, faces = make_uv_sphere(1.0)
    bvh = build_bvh(vertices, faces)
    # every incident face reaches the vertex at the same distance
    points = 1.25 * vertices
    tris, closest, dist = bvh_closest_batch(bvh, points)
    for i, p in enumerate(points):
        t, _, d = brute_force_closest(vertices, faces, p)
        assert tris[i] == t
        assert i in faces[t]
        assert dist[i] == pytest.approx(0.25, abs=1e-12)
        np.testing.assert_allclose(closest[i], vertices[i], atol=1e-12)


def test_duplicated_faces_resolve_to_the_first_copy(bumpy_sphere, rng):
    vertices, faces = bumpy_sphere
    doubled = np.concatenate([faces, faces])
    bvh = build_bvh(vertices, doubled)
    points = np.concatenate([rng.uniform(-1.5, 1.5, size=(2_000, 3)), 1.3 * vertices])
    tris, _, _ = bvh_closest_batch(bvh, points)
    assert tris.max() < faces.shape[0]
    for i, p in enumerate(points):
        assert tris[i] == brute_force_closest(vertices, doubled, p)[0]


def test_single_query_and_min_distance(bumpy_sphere, rng):
    vertices, faces = bumpy_sphere
    bvh = build_bvh(vertices, faces)
    points = rng.uniform(-2.0, 2.0, size=(200, 3))
    distances = [brute_force_closest(vertices, faces, p)[2] for p in points]
    assert min_distance(bvh, points) == pytest.approx(min(distances), abs=1e-12)
    t, q, d = bvh_closest(bvh, points[0])
    assert d == pytest.approx(distances[0], abs=1e-12)
    assert 0 <= t < faces.shape[0]


def test_refit_follows_moved_vertices(bumpy_sphere, rng):
    vertices, faces = bumpy_sphere
    bvh = build_bvh(vertices, faces)
    moved = vertices * 0.8 + np.array([0.3, -0.2, 0.1])
    refit_bvh(bvh, moved)
    for p in rng.uniform(-1.5, 1.5, size=(500, 3)):
        assert bvh_closest(bvh, p)[2] == pytest.approx(brute_force_closest(moved, faces, p)[2], abs=1e-12)


def test_refit_rejects_a_different_mesh(bumpy_sphere):
    vertices, faces = bumpy_sphere
    bvh = build_bvh(vertices, faces)
    with pytest.raises(RejectedInputError):
        refit_bvh(bvh, vertices[:-1])


def test_empty_inputs_are_rejected(bumpy_sphere):
    with pytest.raises(RejectedInputError):
        build_bvh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    bvh = build_bvh(*bumpy_sphere)
    with pytest.raises(RejectedInputError):
        min_distance(bvh, np.zeros((0, 3)))
