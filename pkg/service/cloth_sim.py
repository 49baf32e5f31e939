"""
Blanket simulation with position-based dynamics.

A regular particle grid held together by structural, shear and bending
distance constraints, projected in Jacobi sweeps inside every substep,
then pushed out of the colliders (animated body mesh, bed cuboid, optional
analytic spheres) to the collision margin.

Each particle sums its constraint corrections in a fixed pairwise order over
the grid stencil, so a mirror-symmetric blanket on a mirror-symmetric
collider stays symmetric to the last bit, and two runs with the same inputs
give bit-identical particle positions.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
from numba import njit

from bvh import Bvh, build_bvh, bvh_query, min_distance, refit_bvh
from errors import RejectedInputError, SimulationFailure
from scene_setup import BedFrame, BlanketPlacement

STRUCTURAL, SHEAR, BENDING = 0, 1, 2
DEFAULT_WARMUP_FRAMES = 24
_TINY = 1e-12

# (row, col) offsets of a particle's incident edges; mirrored offsets sit in adjacent slots
STENCIL = (
    (0, -1), (0, 1), (-1, 0), (1, 0),
    (-1, -1), (-1, 1), (1, -1), (1, 1),
    (0, -2), (0, 2), (-2, 0), (2, 0),
)


@dataclass
class ClothGrid:
    positions: np.ndarray      # P x 3, meters
    velocities: np.ndarray     # P x 3, m/s
    constraints: np.ndarray    # E x 2 particle indices
    rest_lengths: np.ndarray   # E, meters
    kinds: np.ndarray          # E, STRUCTURAL / SHEAR / BENDING
    particle_mass: float
    grid_res: int
    slots: Optional[np.ndarray] = None   # P x K incident edges, -1 padded

    @property
    def num_particles(self) -> int:
        return self.positions.shape[0]

    def with_state(self, positions: np.ndarray, velocities: np.ndarray) -> "ClothGrid":
        return replace(self, positions=positions, velocities=velocities)


@dataclass(frozen=True)
class SimParams:
    dt: float
    substeps: int = 15
    collision_iterations: int = 10
    constraint_iterations: int = 10
    gravity_magnitude: float = 9.81
    gravity_direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    damping: float = 0.02
    stretch_stiffness: float = 1.0
    bend_stiffness: float = 0.5
    stretch_compliance: float = 0.0
    penetration_depth: float = 0.05
    relaxation: float = 1.5

    def __post_init__(self):
        if self.substeps < 1:
            raise RejectedInputError(f"substeps must be >= 1, got {self.substeps}")
        if not self.dt > 0:
            raise RejectedInputError(f"dt must be > 0, got {self.dt}")
        for name in ("stretch_stiffness", "bend_stiffness"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise RejectedInputError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if not 0.0 < self.relaxation < 2.0:
            raise RejectedInputError(f"relaxation must be in (0, 2), got {self.relaxation}")

    @property
    def gravity(self) -> np.ndarray:
        direction = np.asarray(self.gravity_direction, dtype=np.float64)
        return self.gravity_magnitude * direction / np.linalg.norm(direction)

    @classmethod
    def from_generation_config(cls, config, frame_rate: float, gravity_direction) -> "SimParams":
        return cls(
            dt=1.0 / frame_rate,
            substeps=config.substeps,
            collision_iterations=config.collision_iters,
            constraint_iterations=config.constraint_iters,
            gravity_magnitude=config.gravity,
            gravity_direction=tuple(float(c) for c in gravity_direction),
            damping=config.damping,
            stretch_stiffness=config.stretch_stiffness,
            bend_stiffness=config.bend_stiffness,
            stretch_compliance=config.stretch_compliance,
            penetration_depth=config.penetration_depth,
            relaxation=config.relaxation,
        )


@dataclass(frozen=True)
class SphereCollider:
    center: Tuple[float, float, float]
    radius: float


@dataclass
class ColliderSet:
    margin: float
    body: Optional[Bvh] = None
    bed: Optional[BedFrame] = None
    spheres: Tuple[SphereCollider, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.margin > 0:
            raise RejectedInputError(f"Collision margin must be > 0, got {self.margin}")

    @classmethod
    def for_body(cls, vertices: np.ndarray, faces: np.ndarray, margin: float, bed: BedFrame = None) -> "ColliderSet":
        return cls(margin=margin, body=build_bvh(vertices, faces), bed=bed)

    def set_body_frame(self, vertices: np.ndarray) -> None:
        if not np.all(np.isfinite(vertices)):
            raise RejectedInputError("Body collider vertices must be finite")
        refit_bvh(self.body, vertices)


def grid_edges(grid_res: int) -> Tuple[np.ndarray, np.ndarray]:
    """Constraint graph of a grid_res x grid_res particle grid, index = row * grid_res + col."""
    n = grid_res
    idx = np.arange(n * n).reshape(n, n)
    groups = [
        (np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1), STRUCTURAL),
        (np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1), STRUCTURAL),
        (np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1), SHEAR),
        (np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1), SHEAR),
        (np.stack([idx[:, :-2].ravel(), idx[:, 2:].ravel()], axis=1), BENDING),
        (np.stack([idx[:-2, :].ravel(), idx[2:, :].ravel()], axis=1), BENDING),
    ]
    edges = np.concatenate([g for g, _ in groups]).astype(np.int64)
    kinds = np.concatenate([np.full(len(g), k, dtype=np.int8) for g, k in groups])
    return edges, kinds


def build_cloth(placement: BlanketPlacement, grid_res: int, blanket_size: Tuple[float, float], mass: float) -> ClothGrid:
    """Flat particle grid spanning blanket_size (width along u, length along v), at rest."""
    if grid_res < 2:
        raise RejectedInputError(f"grid_res must be >= 2, got {grid_res}")
    width, length = blanket_size
    s = np.linspace(-0.5, 0.5, grid_res)
    # exactly antisymmetric about the centre
    s = 0.5 * (s - s[::-1])
    rows, cols = np.meshgrid(s * length, s * width, indexing="ij")
    positions = (placement.center
                 + cols.reshape(-1, 1) * placement.u_axis
                 + rows.reshape(-1, 1) * placement.v_axis)
    edges, kinds = grid_edges(grid_res)
    rest = np.linalg.norm(positions[edges[:, 1]] - positions[edges[:, 0]], axis=1)
    return ClothGrid(
        positions=positions,
        velocities=np.zeros_like(positions),
        constraints=edges,
        rest_lengths=rest,
        kinds=kinds,
        particle_mass=mass / positions.shape[0],
        grid_res=grid_res,
        slots=stencil_slots(edges, grid_res),
    )


@njit(cache=True)
def _project_distances(pred, inv_mass, edges, rest, stiffness, compliance, lambdas, h, iterations,
                       slots, edge_scale):
    num_edges = edges.shape[0]
    width = slots.shape[1]
    corr = np.zeros((num_edges, 3))
    buf = np.zeros((max(width, 1), 3))
    for _ in range(iterations):
        # every correction reads the same positions
        for e in range(num_edges):
            corr[e, 0] = 0.0
            corr[e, 1] = 0.0
            corr[e, 2] = 0.0
            i, j = edges[e, 0], edges[e, 1]
            wsum = inv_mass[i] + inv_mass[j]
            if wsum == 0.0:
                continue
            dx = pred[j, 0] - pred[i, 0]
            dy = pred[j, 1] - pred[i, 1]
            dz = pred[j, 2] - pred[i, 2]
            length = np.sqrt(dx * dx + dy * dy + dz * dz)
            if length < _TINY:
                continue
            c = length - rest[e]
            if compliance[e] > 0.0:
                alpha = compliance[e] / (h * h)
                d_lambda = -(c + alpha * lambdas[e]) / (wsum + alpha)
                lambdas[e] += d_lambda
                s = -d_lambda
            else:
                s = stiffness[e] * c / wsum
            s *= edge_scale[e] / length
            corr[e, 0] = s * dx
            corr[e, 1] = s * dy
            corr[e, 2] = s * dz

        for p in range(pred.shape[0]):
            w = inv_mass[p]
            for k in range(width):
                e = slots[p, k]
                if e < 0:
                    buf[k, 0] = 0.0
                    buf[k, 1] = 0.0
                    buf[k, 2] = 0.0
                else:
                    sign = w if edges[e, 0] == p else -w
                    buf[k, 0] = sign * corr[e, 0]
                    buf[k, 1] = sign * corr[e, 1]
                    buf[k, 2] = sign * corr[e, 2]
            # pairwise sum: mirrored stencil slots are added as commuting pairs
            m = width
            while m > 1:
                half = m // 2
                for k in range(half):
                    buf[k, 0] = buf[2 * k, 0] + buf[2 * k + 1, 0]
                    buf[k, 1] = buf[2 * k, 1] + buf[2 * k + 1, 1]
                    buf[k, 2] = buf[2 * k, 2] + buf[2 * k + 1, 2]
                if m % 2 == 1:
                    buf[half, 0] = buf[m - 1, 0]
                    buf[half, 1] = buf[m - 1, 1]
                    buf[half, 2] = buf[m - 1, 2]
                    half += 1
                m = half
            if width > 0:
                pred[p, 0] += buf[0, 0]
                pred[p, 1] += buf[0, 1]
                pred[p, 2] += buf[0, 2]


def incidence_slots(edges: np.ndarray, num_particles: int) -> np.ndarray:
    """Per-particle table of incident edge indices in edge order, padded with -1."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    ends = edges.T.ravel()
    ids = np.tile(np.arange(edges.shape[0]), 2)
    order = np.lexsort((ids, ends))
    ends, ids = ends[order], ids[order]
    degree = np.bincount(ends, minlength=num_particles)
    first = np.concatenate([[0], np.cumsum(degree)[:-1]]).astype(np.int64)
    slots = np.full((num_particles, int(degree.max(initial=0))), -1, dtype=np.int64)
    slots[ends, np.arange(ends.shape[0]) - first[ends]] = ids
    return slots


def stencil_slots(edges: np.ndarray, grid_res: int) -> np.ndarray:
    """
    Per-particle incident edges laid out by grid direction (STENCIL order),
    so a particle and its mirror image sum the same corrections in the same
    pairing.
    """
    n = grid_res
    edges = np.asarray(edges, dtype=np.int64)
    slots = np.full((n * n, len(STENCIL)), -1, dtype=np.int64)
    for a, b in ((0, 1), (1, 0)):
        p, q = edges[:, a], edges[:, b]
        dr, dc = q // n - p // n, q % n - p % n
        for k, (sr, sc) in enumerate(STENCIL):
            hit = np.nonzero((dr == sr) & (dc == sc))[0]
            slots[p[hit], k] = hit
    return slots


def edge_scales(edges: np.ndarray, num_particles: int, relaxation: float = 1.0) -> np.ndarray:
    """relaxation / max endpoint degree; both ends of an edge share it, so momentum is kept."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    degree = np.bincount(edges.ravel(), minlength=num_particles)
    if edges.shape[0] == 0:
        return np.zeros(0)
    return relaxation / np.maximum(degree[edges[:, 0]], degree[edges[:, 1]])


def solve_distance_constraints(positions, inv_mass, edges, rest_lengths, stiffness, iterations: int = 1,
                               compliance=None, h: float = 1.0, relaxation: float = 1.0,
                               slots=None) -> np.ndarray:
    """Jacobi projection of distance constraints; updates positions in place and returns them."""
    edges = np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2)
    num_particles = positions.shape[0]
    stiffness = np.broadcast_to(np.asarray(stiffness, dtype=np.float64), (edges.shape[0],)).copy()
    compliance = np.zeros(edges.shape[0]) if compliance is None else \
        np.broadcast_to(np.asarray(compliance, dtype=np.float64), (edges.shape[0],)).copy()
    if slots is None:
        slots = incidence_slots(edges, num_particles)
    _project_distances(positions, np.asarray(inv_mass, dtype=np.float64), edges,
                       np.asarray(rest_lengths, dtype=np.float64), stiffness, compliance,
                       np.zeros(edges.shape[0]), h, iterations, slots,
                       edge_scales(edges, num_particles, relaxation))
    return positions


@njit(cache=True)
def _collide(pred, margin, depth, iterations,
             has_body, vertices, faces, node_min, node_max, left, right, start, count, tri_index,
             has_bed, bed_center, bed_axes, bed_half,
             sphere_centers, sphere_radii):
    reach = max(margin, depth)
    reach2 = reach * reach
    local = np.zeros(3)
    for _ in range(iterations):
        for p in range(pred.shape[0]):
            for s in range(sphere_radii.shape[0]):
                dx = pred[p, 0] - sphere_centers[s, 0]
                dy = pred[p, 1] - sphere_centers[s, 1]
                dz = pred[p, 2] - sphere_centers[s, 2]
                d = np.sqrt(dx * dx + dy * dy + dz * dz)
                target = sphere_radii[s] + margin
                if d < target:
                    if d < _TINY:
                        dx, dy, dz, d = 0.0, 0.0, -1.0, 1.0
                    pred[p, 0] = sphere_centers[s, 0] + target * dx / d
                    pred[p, 1] = sphere_centers[s, 1] + target * dy / d
                    pred[p, 2] = sphere_centers[s, 2] + target * dz / d

            if has_bed:
                inside = True
                best_axis = -1
                best_pen = np.inf
                for a in range(3):
                    local[a] = ((pred[p, 0] - bed_center[0]) * bed_axes[a, 0]
                                + (pred[p, 1] - bed_center[1]) * bed_axes[a, 1]
                                + (pred[p, 2] - bed_center[2]) * bed_axes[a, 2])
                    pen = bed_half[a] + margin - abs(local[a])
                    if pen <= 0.0:
                        inside = False
                        break
                    if pen < best_pen:
                        best_pen = pen
                        best_axis = a
                if inside:
                    # axis 0 negative side is the top face, facing the camera
                    sign = 1.0 if local[best_axis] > 0.0 else -1.0
                    local[best_axis] = sign * (bed_half[best_axis] + margin)
                    for k in range(3):
                        pred[p, k] = (bed_center[k] + local[0] * bed_axes[0, k]
                                      + local[1] * bed_axes[1, k] + local[2] * bed_axes[2, k])

            if has_body:
                t, qx, qy, qz, d2 = bvh_query(pred[p, 0], pred[p, 1], pred[p, 2], reach2,
                                              vertices, faces, node_min, node_max, left, right,
                                              start, count, tri_index)
                if t < 0:
                    continue
                d = np.sqrt(d2)
                a, b, c = faces[t, 0], faces[t, 1], faces[t, 2]
                e1x = vertices[b, 0] - vertices[a, 0]
                e1y = vertices[b, 1] - vertices[a, 1]
                e1z = vertices[b, 2] - vertices[a, 2]
                e2x = vertices[c, 0] - vertices[a, 0]
                e2y = vertices[c, 1] - vertices[a, 1]
                e2z = vertices[c, 2] - vertices[a, 2]
                nx = e1y * e2z - e1z * e2y
                ny = e1z * e2x - e1x * e2z
                nz = e1x * e2y - e1y * e2x
                nn = np.sqrt(nx * nx + ny * ny + nz * nz)
                if nn < _TINY:
                    continue
                nx, ny, nz = nx / nn, ny / nn, nz / nn
                sx, sy, sz = pred[p, 0] - qx, pred[p, 1] - qy, pred[p, 2] - qz
                side = sx * nx + sy * ny + sz * nz
                if side < 0.0:
                    # inner side of the nearest face: push back out along its normal
                    pred[p, 0] = qx + margin * nx
                    pred[p, 1] = qy + margin * ny
                    pred[p, 2] = qz + margin * nz
                elif d < margin:
                    if d > _TINY:
                        nx, ny, nz = sx / d, sy / d, sz / d
                    pred[p, 0] = qx + margin * nx
                    pred[p, 1] = qy + margin * ny
                    pred[p, 2] = qz + margin * nz


_EMPTY_VERTS = np.zeros((0, 3))
_EMPTY_FACES = np.zeros((0, 3), dtype=np.int64)
_EMPTY_NODES = np.zeros((0, 3))
_EMPTY_INDEX = np.zeros(0, dtype=np.int64)


def _collider_arguments(colliders: ColliderSet):
    if colliders.body is not None:
        body = (True, *colliders.body.arrays)
    else:
        body = (False, _EMPTY_VERTS, _EMPTY_FACES, _EMPTY_NODES, _EMPTY_NODES,
                _EMPTY_INDEX, _EMPTY_INDEX, _EMPTY_INDEX, _EMPTY_INDEX, _EMPTY_INDEX)
    if colliders.bed is not None:
        bed = (True, colliders.bed.center, colliders.bed.basis, colliders.bed.half_extents)
    else:
        bed = (False, np.zeros(3), np.eye(3), np.zeros(3))
    if colliders.spheres:
        centers = np.array([s.center for s in colliders.spheres], dtype=np.float64)
        radii = np.array([s.radius for s in colliders.spheres], dtype=np.float64)
    else:
        centers, radii = np.zeros((0, 3)), np.zeros(0)
    return body + bed + (centers, radii)


def _constraint_coefficients(cloth: ClothGrid, params: SimParams):
    stretch = cloth.kinds != BENDING
    stiffness = np.where(stretch, params.stretch_stiffness, params.bend_stiffness)
    # compliance only softens stretch and shear; bending keeps plain stiffness
    compliance = np.where(stretch, params.stretch_compliance, 0.0)
    return stiffness, compliance


def step(cloth: ClothGrid, colliders: ColliderSet, params: SimParams, frame: int = None) -> ClothGrid:
    """
    Advance one video frame with params.substeps substeps of: gravity and
    damping integration, constraint projection, collision projection,
    velocity update.
    """
    x = cloth.positions.copy()
    v = cloth.velocities.copy()
    h = params.dt / params.substeps
    g = params.gravity
    inv_mass = np.full(cloth.num_particles, 1.0 / cloth.particle_mass)
    stiffness, compliance = _constraint_coefficients(cloth, params)
    lambdas = np.zeros(cloth.constraints.shape[0])
    slots = cloth.slots if cloth.slots is not None else incidence_slots(cloth.constraints, cloth.num_particles)
    scales = edge_scales(cloth.constraints, cloth.num_particles, params.relaxation)
    collider_args = _collider_arguments(colliders)

    for _ in range(params.substeps):
        v *= 1.0 - params.damping
        # exact for constant acceleration
        pred = x + v * h + 0.5 * h * h * g
        lambdas[:] = 0.0
        _project_distances(pred, inv_mass, cloth.constraints, cloth.rest_lengths, stiffness,
                           compliance, lambdas, h, params.constraint_iterations, slots, scales)
        _collide(pred, colliders.margin, params.penetration_depth, params.collision_iterations, *collider_args)
        v = (pred - x) / h + 0.5 * h * g
        x = pred

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise SimulationFailure("Cloth state became non-finite", frame=frame)
    return cloth.with_state(x, v)


def kinetic_energy(cloth: ClothGrid) -> float:
    return float(0.5 * cloth.particle_mass * np.sum(cloth.velocities ** 2))


def warmup(cloth: ClothGrid, colliders: ColliderSet, params: SimParams, frames: int = DEFAULT_WARMUP_FRAMES,
           on_frame: Callable[[int, ClothGrid], None] = None) -> ClothGrid:
    """Let the blanket settle on the frozen first-frame body before any output frame."""
    for k in range(frames):
        cloth = step(cloth, colliders, params, frame=k - frames)
        if on_frame is not None:
            on_frame(k, cloth)
    return cloth


def min_distance_to_body(cloth: ClothGrid, body: Bvh) -> float:
    return min_distance(body, cloth.positions)


def is_detached(distance: float, threshold: float) -> bool:
    if distance < 0 or threshold < 0:
        raise RejectedInputError("Distances must be non-negative")
    return distance > threshold


class ClothSimulator:
    """
    Runs the blanket for one segment: build, warm up against the frozen
    first-frame body, then one step per video frame against the moving body.
    """

    def __init__(self, params: SimParams, grid_res: int, blanket_size: Tuple[float, float], blanket_mass: float,
                 margin: float, warmup_frames: int = DEFAULT_WARMUP_FRAMES, telemetry=None):
        self.params = params
        self.grid_res = grid_res
        self.blanket_size = blanket_size
        self.blanket_mass = blanket_mass
        self.margin = margin
        self.warmup_frames = warmup_frames
        self.telemetry = telemetry
        self.cloth: Optional[ClothGrid] = None
        self.colliders: Optional[ColliderSet] = None

    def _record(self, frame: int, phase: str) -> None:
        if self.telemetry is not None:
            self.telemetry.record(frame, phase, min_distance_to_body(self.cloth, self.colliders.body),
                                  kinetic_energy(self.cloth))

    def start(self, placement: BlanketPlacement, bed: BedFrame, body_vertices: np.ndarray, body_faces: np.ndarray,
              start_frame: int = 0) -> None:
        self.cloth = build_cloth(placement, self.grid_res, self.blanket_size, self.blanket_mass)
        self.colliders = ColliderSet.for_body(body_vertices, body_faces, self.margin, bed=bed)

        def settle(k: int, cloth: ClothGrid) -> None:
            self.cloth = cloth
            self._record(start_frame - self.warmup_frames + k, "warmup")

        self.cloth = warmup(self.cloth, self.colliders, self.params, self.warmup_frames, on_frame=settle)

    def advance(self, frame: int, body_vertices: np.ndarray) -> float:
        """Simulate one video frame and return the cloth-to-body distance."""
        self.colliders.set_body_frame(body_vertices)
        self.cloth = step(self.cloth, self.colliders, self.params, frame=frame)
        distance = min_distance_to_body(self.cloth, self.colliders.body)
        if self.telemetry is not None:
            self.telemetry.record(frame, "video", distance, kinetic_energy(self.cloth))
        return distance

    def blanket_grid(self) -> np.ndarray:
        """Current particle positions as grid_res x grid_res x 3."""
        return self.cloth.positions.reshape(self.grid_res, self.grid_res, 3)

    def close(self) -> None:
        if self.telemetry is not None and self.telemetry.rows:
            self.telemetry.save()
