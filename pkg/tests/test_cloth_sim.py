import numpy as np
import pytest

from body_model import PoseParams, ShapeParams, pose_mesh
from cloth_sim import (
    BENDING, SHEAR, STENCIL, STRUCTURAL, ClothGrid, ClothSimulator, ColliderSet, SimParams, SphereCollider,
    build_cloth, grid_edges, incidence_slots, is_detached, kinetic_energy, min_distance_to_body,
    solve_distance_constraints, stencil_slots, step, warmup,
)
from errors import RejectedInputError
from scene_setup import BlanketPlacement, SceneConfig, build_bed_frame, farthest_vertex, init_blanket_placement
from telemetry import TelemetryRecorder, read_telemetry

DT = 1.0 / 30.0
FLAT = BlanketPlacement(center=np.zeros(3), normal=np.array([0.0, 0.0, -1.0]),
                        u_axis=np.array([1.0, 0.0, 0.0]), v_axis=np.array([0.0, 1.0, 0.0]))


def _free_params(**overrides):
    values = dict(dt=DT, damping=0.0)
    values.update(overrides)
    return SimParams(**values)


def test_two_by_two_grid():
    cloth = build_cloth(FLAT, 2, (1.0, 1.0), mass=1.0)
    structural = cloth.kinds == STRUCTURAL
    shear = cloth.kinds == SHEAR
    assert structural.sum() == 4
    assert shear.sum() == 2
    assert (cloth.kinds == BENDING).sum() == 0
    np.testing.assert_allclose(cloth.rest_lengths[structural], 1.0)
    np.testing.assert_allclose(cloth.rest_lengths[shear], np.sqrt(2.0))
    assert cloth.particle_mass == pytest.approx(0.25)


def test_edge_counts_at_full_resolution():
    n = 76
    edges, kinds = grid_edges(n)
    assert (kinds == STRUCTURAL).sum() == 2 * n * (n - 1)
    assert (kinds == SHEAR).sum() == 2 * (n - 1) ** 2
    assert (kinds == BENDING).sum() == 2 * n * (n - 2)
    assert edges.min() == 0 and edges.max() == n * n - 1


def test_grid_spans_the_blanket_size():
    cloth = build_cloth(FLAT, 5, (1.6, 2.2), mass=2.0)
    grid = cloth.positions.reshape(5, 5, 3)
    # rows run along the length, columns along the width
    assert grid[0, -1, 0] - grid[0, 0, 0] == pytest.approx(1.6)
    assert grid[-1, 0, 1] - grid[0, 0, 1] == pytest.approx(2.2)
    np.testing.assert_allclose(cloth.positions.mean(axis=0), FLAT.center, atol=1e-12)


def test_free_particle_gains_g_dt_per_frame():
    cloth = ClothGrid(positions=np.zeros((1, 3)), velocities=np.zeros((1, 3)),
                      constraints=np.zeros((0, 2), dtype=np.int64), rest_lengths=np.zeros(0),
                      kinds=np.zeros(0, dtype=np.int8), particle_mass=0.1, grid_res=1)
    params = _free_params()
    after = step(cloth, ColliderSet(margin=0.01), params)
    np.testing.assert_allclose(after.velocities[0], params.gravity * DT, atol=1e-9)
    np.testing.assert_allclose(after.positions[0], 0.5 * params.gravity * DT ** 2, atol=1e-9)


def test_two_particle_projection():
    positions = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    edges = np.array([[0, 1]])
    solve_distance_constraints(positions, np.ones(2), edges, [1.0], 1.0)
    np.testing.assert_allclose(positions, [[0.5, 0.0, 0.0], [1.5, 0.0, 0.0]], atol=1e-12)

    pinned = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    solve_distance_constraints(pinned, np.array([1.0, 0.0]), edges, [1.0], 1.0)
    np.testing.assert_allclose(pinned, [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], atol=1e-12)


def test_compliance_softens_the_correction():
    positions = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    solve_distance_constraints(positions, np.ones(2), np.array([[0, 1]]), [1.0], 1.0,
                               compliance=[1e-3], h=DT / 15)
    length = positions[1, 0] - positions[0, 0]
    assert 1.0 < length < 2.0


def test_ballistic_centroid(rng):
    cloth = build_cloth(FLAT, 10, (1.0, 1.0), mass=1.0)
    cloth = cloth.with_state(cloth.positions, rng.normal(scale=0.05, size=cloth.positions.shape))
    params = _free_params()
    start = cloth.positions.mean(axis=0)
    v0 = cloth.velocities.mean(axis=0)
    colliders = ColliderSet(margin=0.01)
    frames = 100
    for _ in range(frames):
        cloth = step(cloth, colliders, params)
    t = frames * DT
    expected = start + v0 * t + 0.5 * params.gravity * t ** 2
    np.testing.assert_allclose(cloth.positions.mean(axis=0), expected, atol=1e-6)


SPHERE_RADIUS = 0.5
DEFAULT_MARGIN = 0.0005


def _sphere_drop(grid_res):
    placement = BlanketPlacement(center=np.array([0.0, 0.0, -0.6]), normal=np.array([0.0, 0.0, -1.0]),
                                 u_axis=np.array([1.0, 0.0, 0.0]), v_axis=np.array([0.0, 1.0, 0.0]))
    cloth = build_cloth(placement, grid_res, (1.6, 1.6), mass=1.0)
    colliders = ColliderSet(margin=DEFAULT_MARGIN,
                            spheres=(SphereCollider(center=(0.0, 0.0, 0.0), radius=SPHERE_RADIUS),))
    return cloth, colliders, SimParams(dt=DT)


def _sphere_distances(cloth):
    return np.linalg.norm(cloth.positions, axis=1) - SPHERE_RADIUS


def test_blanket_drapes_over_a_sphere():
    cloth, colliders, params = _sphere_drop(40)
    closest = []
    for _ in range(100):
        cloth = step(cloth, colliders, params)
        closest.append(_sphere_distances(cloth).min())

    assert min(closest) >= DEFAULT_MARGIN - 1e-5
    assert closest[-1] <= DEFAULT_MARGIN + 0.02
    # the middle of the blanket is resting on top, not sliding off
    assert np.linalg.norm(cloth.positions.mean(axis=0)[:2]) < 0.05


@pytest.mark.parametrize("grid_res", [21, 40])
def test_drape_stays_mirror_symmetric(grid_res):
    cloth, colliders, params = _sphere_drop(grid_res)
    flip_x = np.array([-1.0, 1.0, 1.0])
    flip_y = np.array([1.0, -1.0, 1.0])
    for frame in range(100):
        cloth = step(cloth, colliders, params)
        grid = cloth.positions.reshape(grid_res, grid_res, 3)
        # columns run along x, rows along y
        np.testing.assert_allclose(grid, grid[:, ::-1] * flip_x, rtol=0, atol=1e-6, err_msg=f"frame {frame}")
        np.testing.assert_allclose(grid, grid[::-1, :] * flip_y, rtol=0, atol=1e-6, err_msg=f"frame {frame}")


def test_stencil_slots_pair_mirrored_neighbours():
    n = 5
    edges, _ = grid_edges(n)
    slots = stencil_slots(edges, n)
    centre = 2 * n + 2
    for k, (dr, dc) in enumerate(STENCIL):
        i, j = edges[slots[centre, k]]
        other = j if i == centre else i
        assert (other // n - 2, other % n - 2) == (dr, dc)
    corner = slots[0]
    assert (corner >= 0).sum() == 5
    assert np.array_equal(np.sort(slots[slots >= 0]), np.repeat(np.arange(len(edges)), 2))


def test_incidence_slots_follow_edge_order():
    slots = incidence_slots(np.array([[0, 1], [1, 2], [0, 2]]), 4)
    np.testing.assert_array_equal(slots, [[0, 2], [0, 1], [1, 2], [-1, -1]])


def test_detach_threshold_is_strict():
    assert not is_detached(0.30, 0.30)
    assert is_detached(0.3000001, 0.30)
    assert not is_detached(0.0, 0.30)
    with pytest.raises(RejectedInputError):
        is_detached(-0.1, 0.30)


@pytest.mark.parametrize("overrides", [
    {"substeps": 0},
    {"dt": 0.0},
    {"stretch_stiffness": 1.5},
    {"bend_stiffness": -0.1},
    {"relaxation": 0.0},
    {"relaxation": 2.0},
])
def test_invalid_parameters(overrides):
    with pytest.raises(RejectedInputError):
        _free_params(**overrides)


def test_margin_must_be_positive():
    with pytest.raises(RejectedInputError):
        ColliderSet(margin=0.0)


def _toy_scene(template, camera):
    rotations = np.zeros((template.num_joints, 3))
    body = pose_mesh(template, ShapeParams(np.zeros(template.num_betas)),
                     PoseParams(rotations, [0.0, 0.0, 2.0]))
    config = SceneConfig(blanket_size=(0.6, 1.8))
    index, _ = farthest_vertex(body.vertices, camera)
    bed = build_bed_frame(body.vertices[index], camera, config, body.vertices)
    return body, bed, init_blanket_placement(bed, body.vertices, config)


def _run_simulator(template, camera, frames, telemetry=None):
    body, bed, placement = _toy_scene(template, camera)
    simulator = ClothSimulator(SimParams(dt=DT, gravity_direction=tuple(bed.a1)), grid_res=12,
                               blanket_size=(0.6, 1.8), blanket_mass=1.0, margin=0.005, warmup_frames=4,
                               telemetry=telemetry)
    simulator.start(placement, bed, body.vertices, body.faces)
    distances = []
    for f in range(frames):
        sway = body.vertices + np.array([0.002 * f, 0.0, 0.0])
        distances.append(simulator.advance(f, sway))
    simulator.close()
    return simulator, distances


def test_simulator_is_deterministic(toy_template, toy_camera):
    first, d1 = _run_simulator(toy_template, toy_camera, 5)
    second, d2 = _run_simulator(toy_template, toy_camera, 5)
    assert np.array_equal(first.blanket_grid(), second.blanket_grid())
    assert d1 == d2
    assert first.blanket_grid().shape == (12, 12, 3)
    assert all(d >= 0.0 for d in d1)
    assert kinetic_energy(first.cloth) >= 0.0


def test_simulator_writes_telemetry(toy_template, toy_camera, tmp_path):
    path = tmp_path / "telemetry" / "segment.tsv"
    _run_simulator(toy_template, toy_camera, 3, telemetry=TelemetryRecorder(path))
    df = read_telemetry(path)
    assert df["phase"].tolist() == ["warmup"] * 4 + ["video"] * 3
    assert df["frame"].tolist() == [-4, -3, -2, -1, 0, 1, 2]


def _toy_drop(template, camera, margin=0.005):
    body, bed, placement = _toy_scene(template, camera)
    colliders = ColliderSet.for_body(body.vertices, body.faces, margin, bed=bed)
    cloth = build_cloth(placement, 12, (0.6, 1.8), mass=1.0)
    return cloth, colliders, SimParams(dt=DT, gravity_direction=tuple(bed.a1))


def test_warmup_without_frames_returns_the_cloth(toy_template, toy_camera):
    cloth, colliders, params = _toy_drop(toy_template, toy_camera)
    before = cloth.positions.copy()
    assert warmup(cloth, colliders, params, frames=0) is cloth
    assert np.array_equal(cloth.positions, before)


def test_warmup_lets_the_blanket_come_to_rest(toy_template, toy_camera):
    cloth, colliders, params = _toy_drop(toy_template, toy_camera)
    energies = []
    warmup(cloth, colliders, params, on_frame=lambda k, c: energies.append(kinetic_energy(c)))
    assert len(energies) == 24
    assert energies[-1] < 0.1 * max(energies)


def test_warmup_leaves_the_blanket_on_the_body(toy_template, toy_camera):
    margin = 0.005
    cloth, colliders, params = _toy_drop(toy_template, toy_camera, margin)
    settled = warmup(cloth, colliders, params)
    distance = min_distance_to_body(settled, colliders.body)
    assert margin - 1e-6 <= distance < 0.30
    assert not is_detached(distance, 0.30)
