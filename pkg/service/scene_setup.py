"""
Per-video scene geometry: drift-cancelling camera repositioning, the bed
frame anchored at the camera-farthest body vertex, bed cuboid, initial
blanket placement, pinhole projection and the sun light.

Camera convention: x_cam = rotation @ x_world + translation, the camera looks
down +z, image v grows downwards.
"""
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from errors import RejectedInputError
from utils import warn

NEAR_Z = 1e-6
DEGENERATE_AXIS = 1e-9

# cuboid corners in (a1, a2, a3) half-extent units
_BOX_CORNERS = np.array([
    [-1, -1, -1], [-1, 1, -1], [-1, 1, 1], [-1, -1, 1],
    [1, -1, -1], [1, 1, -1], [1, 1, 1], [1, -1, 1],
], dtype=np.float64)
_BOX_FACES = np.array([
    [0, 1, 2], [0, 2, 3],
    [4, 6, 5], [4, 7, 6],
    [0, 4, 5], [0, 5, 1],
    [3, 2, 6], [3, 6, 7],
    [0, 3, 7], [0, 7, 4],
    [1, 5, 6], [1, 6, 2],
], dtype=np.int64)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray      # world -> camera
    translation: np.ndarray   # world -> camera, meters

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        if not (self.fx > 0 and self.fy > 0):
            raise RejectedInputError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise RejectedInputError(
                f"Principal point ({self.cx}, {self.cy}) outside the {self.width}x{self.height} image"
            )
        if (np.max(np.abs(rotation.T @ rotation - np.eye(3))) > 1e-6
                or abs(np.linalg.det(rotation) - 1.0) > 1e-6):
            raise RejectedInputError("Camera rotation is not a proper rotation matrix")
        if not np.all(np.isfinite(translation)):
            raise RejectedInputError("Camera translation must be finite")

    def with_extrinsics(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraModel":
        return replace(self, rotation=rotation, translation=translation)

    def scaled(self, factor: int) -> "CameraModel":
        """Same view rendered at factor x the resolution."""
        return replace(
            self, fx=self.fx * factor, fy=self.fy * factor, cx=self.cx * factor, cy=self.cy * factor,
            width=self.width * factor, height=self.height * factor,
        )

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class BedFrame:
    origin: np.ndarray        # the placed farthest vertex
    a1: np.ndarray            # away from the camera
    a2: np.ndarray            # camera up
    a3: np.ndarray            # a1 x a2
    top_extent: Tuple[float, float]   # (width along a3, length along a2)
    thickness: float
    bed_gap: float
    top_center: np.ndarray    # centre of the top face

    @property
    def basis(self) -> np.ndarray:
        """Rows a1, a2, a3."""
        return np.stack([self.a1, self.a2, self.a3])

    @property
    def center(self) -> np.ndarray:
        return self.top_center + 0.5 * self.thickness * self.a1

    @property
    def half_extents(self) -> np.ndarray:
        """Half sizes along (a1, a2, a3)."""
        return np.array([0.5 * self.thickness, 0.5 * self.top_extent[1], 0.5 * self.top_extent[0]])


@dataclass(frozen=True)
class SceneConfig:
    bed_gap: float = 0.02
    blanket_offset: float = 0.05
    blanket_size: Tuple[float, float] = (1.6, 2.2)
    bed_size: Tuple[float, float, float] = (2.0, 3.0, 0.3)
    sun_direction: Optional[Tuple[float, float, float]] = None
    detach_threshold: float = 0.30

    def __post_init__(self):
        distances = (self.bed_gap, self.blanket_offset, *self.blanket_size, *self.bed_size, self.detach_threshold)
        if not all(d > 0 for d in distances):
            raise RejectedInputError("Scene distances must all be positive")

    @classmethod
    def from_generation_config(cls, config) -> "SceneConfig":
        return cls(
            bed_gap=config.bed_gap,
            blanket_offset=config.blanket_offset,
            blanket_size=(config.blanket_width, config.blanket_length),
            bed_size=(config.bed_width, config.bed_length, config.bed_thickness),
            sun_direction=config.sun_direction,
            detach_threshold=config.detach_threshold,
        )


@dataclass(frozen=True)
class BlanketPlacement:
    center: np.ndarray
    normal: np.ndarray   # -a1, towards the camera
    u_axis: np.ndarray   # a3, blanket width
    v_axis: np.ndarray   # a2, blanket length


@dataclass(frozen=True)
class DirectionalLight:
    direction: np.ndarray
    intensity: float = 1.0


def camera_center(camera: CameraModel) -> np.ndarray:
    return -camera.rotation.T @ camera.translation


def image_up(camera: CameraModel) -> np.ndarray:
    """World direction of the image -v axis."""
    return -camera.rotation[1]


def image_right(camera: CameraModel) -> np.ndarray:
    return camera.rotation[0].copy()


def recenter_subject(root_translation, camera: CameraModel) -> CameraModel:
    """
    Move the camera instead of the body: the body is posed with zero root
    translation and every camera-frame coordinate is unchanged.
    """
    d = np.asarray(root_translation, dtype=np.float64).reshape(3)
    return camera.with_extrinsics(camera.rotation, camera.translation + camera.rotation @ d)


def farthest_vertex(vertices: np.ndarray, camera: CameraModel) -> Tuple[int, float]:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if vertices.shape[0] == 0:
        raise RejectedInputError("Cannot search an empty vertex set")
    distances = np.linalg.norm(vertices - camera_center(camera), axis=1)
    # argmax keeps the first maximum, i.e. the lowest index on ties
    index = int(np.argmax(distances))
    return index, float(distances[index])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def build_bed_frame(far_vertex, camera: CameraModel, config: SceneConfig, body_vertices: np.ndarray = None) -> BedFrame:
    """
    Axes anchored at the farthest vertex: a1 points away from the camera,
    a2 is the camera's up orthogonalised against a1, a3 = a1 x a2. The bed
    top sits bed_gap beyond the vertex along a1.
    """
    far_vertex = np.asarray(far_vertex, dtype=np.float64).reshape(3)
    offset = far_vertex - camera_center(camera)
    if np.linalg.norm(offset) < DEGENERATE_AXIS:
        raise RejectedInputError("Farthest vertex coincides with the camera centre")
    a1 = _unit(offset)

    up = image_up(camera)
    a2 = up - np.dot(up, a1) * a1
    if np.linalg.norm(a2) < DEGENERATE_AXIS:
        warn("Camera up is parallel to the bed normal; using camera right for the bed length axis")
        right = image_right(camera)
        a2 = right - np.dot(right, a1) * a1
    a2 = _unit(a2)
    a3 = np.cross(a1, a2)

    plane_point = far_vertex + config.bed_gap * a1
    if body_vertices is None:
        in_plane = np.zeros(2)
    else:
        rel = np.asarray(body_vertices, dtype=np.float64) - far_vertex
        coords = rel @ np.stack([a2, a3]).T
        in_plane = 0.5 * (coords.min(axis=0) + coords.max(axis=0))
    top_center = plane_point + in_plane[0] * a2 + in_plane[1] * a3

    width, length, thickness = config.bed_size
    return BedFrame(
        origin=far_vertex, a1=a1, a2=a2, a3=a3,
        top_extent=(float(width), float(length)), thickness=float(thickness),
        bed_gap=float(config.bed_gap), top_center=top_center,
    )


def bed_plane_distance(bed: BedFrame, point) -> float:
    """Signed distance from point to the bed top plane (positive on the camera side)."""
    return float(np.dot(bed.top_center - np.asarray(point, dtype=np.float64), bed.a1))


def bed_mesh(bed: BedFrame) -> Tuple[np.ndarray, np.ndarray]:
    scaled = _BOX_CORNERS * bed.half_extents
    vertices = bed.center + scaled @ bed.basis
    return vertices, _BOX_FACES.copy()


def init_blanket_placement(bed: BedFrame, body_vertices: np.ndarray, config: SceneConfig) -> BlanketPlacement:
    """
    Put the blanket plane (basis a2, a3) over the body's bounding-box centre,
    blanket_offset in front of the body vertex nearest the camera along a1.
    """
    body_vertices = np.asarray(body_vertices, dtype=np.float64)
    if body_vertices.ndim != 2 or body_vertices.shape[0] == 0:
        raise RejectedInputError("Body mesh has no vertices")
    rel = body_vertices - bed.origin
    depth = rel @ bed.a1
    coords = rel @ np.stack([bed.a2, bed.a3]).T
    mid = 0.5 * (coords.min(axis=0) + coords.max(axis=0))
    plane_depth = depth.min() - config.blanket_offset
    center = bed.origin + plane_depth * bed.a1 + mid[0] * bed.a2 + mid[1] * bed.a3
    return BlanketPlacement(center=center, normal=-bed.a1, u_axis=bed.a3.copy(), v_axis=bed.a2.copy())


def project(camera: CameraModel, point) -> Optional[Tuple[float, float, float]]:
    """
    Pinhole projection to (u, v, depth). Points with camera-frame z at or
    below 1e-6 m return None and are left to the caller to clip.
    """
    x, y, z = camera.to_camera(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]
    if z <= NEAR_Z:
        return None
    return camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy, z


def project_points(camera: CameraModel, points: np.ndarray):
    """Vectorised projection: (uv N x 2 with NaN behind the camera, depth N, valid mask N)."""
    cam = camera.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    valid = z > NEAR_Z
    uv = np.full((cam.shape[0], 2), np.nan)
    uv[valid, 0] = camera.fx * cam[valid, 0] / z[valid] + camera.cx
    uv[valid, 1] = camera.fy * cam[valid, 1] / z[valid] + camera.cy
    return uv, z, valid


def unproject(camera: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    cam = np.array([(u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy, depth])
    return camera.rotation.T @ (cam - camera.translation)


def sun_light(config: SceneConfig, bed: BedFrame = None) -> DirectionalLight:
    """Parallel-ray light; defaults to shining along +a1 (camera towards bed)."""
    if config.sun_direction is not None:
        return DirectionalLight(direction=_unit(np.asarray(config.sun_direction, dtype=np.float64)))
    if bed is None:
        raise RejectedInputError("A bed frame is needed for the default sun direction")
    return DirectionalLight(direction=bed.a1.copy())
