"""
Blanket rendering and compositing.

Body and bed are rasterised into a holdout depth map; the blanket is
rasterised with flat Lambert shading under a sun light, and only fragments
strictly in front of the holdout are written over the source frame. Every
other pixel keeps the source bytes.
"""
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from numba import njit
from PIL import Image

from errors import RejectedInputError
from scene_setup import CameraModel, DirectionalLight, camera_center

NEAR_CLIP = 1e-4
DEFAULT_AMBIENT = 0.15

TriangleMesh = Tuple[np.ndarray, np.ndarray]   # (V x 3 vertices, F x 3 faces)


@dataclass(frozen=True)
class BlanketMaterial:
    albedo: Tuple[float, float, float]
    two_sided: bool = True

    def __post_init__(self):
        albedo = tuple(float(c) for c in self.albedo)
        if len(albedo) != 3 or not all(0.0 <= c <= 1.0 for c in albedo):
            raise RejectedInputError(f"Albedo must be three values in [0, 1], got {self.albedo}")
        object.__setattr__(self, "albedo", albedo)


def blanket_rng(seed: int, *key: Union[int, str]) -> np.random.Generator:
    """Generator for one video, independent of every other (seed, key) pair."""
    entropy = [int(seed)] + [zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k) for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_blanket_color(rng: np.random.Generator) -> BlanketMaterial:
    return BlanketMaterial(albedo=tuple(rng.random(3)))


# ---------------------------------------------------------------------------
# rasterisation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _covers(e, dx, dy):
    if e > 0.0:
        return True
    # top-left fill rule on shared edges
    return e == 0.0 and ((dy == 0.0 and dx > 0.0) or dy < 0.0)


@njit(cache=True)
def _raster_triangles(screen, inv_z, depth, index):
    height, width = depth.shape
    for k in range(screen.shape[0]):
        ax, ay = screen[k, 0, 0], screen[k, 0, 1]
        bx, by = screen[k, 1, 0], screen[k, 1, 1]
        cx, cy = screen[k, 2, 0], screen[k, 2, 1]
        za, zb, zc = inv_z[k, 0], inv_z[k, 1], inv_z[k, 2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        if area < 0.0:
            bx, by, cx, cy = cx, cy, bx, by
            zb, zc = zc, zb
            area = -area

        x_lo = max(0, int(np.ceil(min(ax, bx, cx) - 0.5)))
        x_hi = min(width - 1, int(np.floor(max(ax, bx, cx) - 0.5)))
        y_lo = max(0, int(np.ceil(min(ay, by, cy) - 0.5)))
        y_hi = min(height - 1, int(np.floor(max(ay, by, cy) - 0.5)))

        for y in range(y_lo, y_hi + 1):
            py = y + 0.5
            for x in range(x_lo, x_hi + 1):
                px = x + 0.5
                e_ab = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                e_bc = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                e_ca = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if not (_covers(e_ab, bx - ax, by - ay) and _covers(e_bc, cx - bx, cy - by)
                        and _covers(e_ca, ax - cx, ay - cy)):
                    continue
                # 1/z is affine in screen space
                iz = (e_bc * za + e_ca * zb + e_ab * zc) / area
                if iz <= 0.0:
                    continue
                z = 1.0 / iz
                if z < depth[y, x]:
                    depth[y, x] = z
                    index[y, x] = k


def _clip_near(tri: np.ndarray) -> List[np.ndarray]:
    """Clip one camera-frame triangle against z = NEAR_CLIP, fan-triangulated."""
    polygon = []
    for i in range(3):
        p, q = tri[i], tri[(i + 1) % 3]
        p_in, q_in = p[2] >= NEAR_CLIP, q[2] >= NEAR_CLIP
        if p_in:
            polygon.append(p)
        if p_in != q_in:
            s = (NEAR_CLIP - p[2]) / (q[2] - p[2])
            point = p + s * (q - p)
            point[2] = NEAR_CLIP
            polygon.append(point)
    return [np.stack([polygon[0], polygon[i], polygon[i + 1]]) for i in range(1, len(polygon) - 1)]


def _camera_triangles(meshes: Sequence[TriangleMesh], camera: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """Camera-frame triangles of all meshes (near-clipped) and the source face id of each."""
    chunks, ids = [], []
    offset = 0
    for vertices, faces in meshes:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.shape[0] == 0:
            continue
        tris = camera.to_camera(vertices)[faces]
        face_ids = np.arange(faces.shape[0]) + offset
        offset += faces.shape[0]

        z = tris[:, :, 2]
        front = np.all(z >= NEAR_CLIP, axis=1)
        crossing = ~front & np.any(z >= NEAR_CLIP, axis=1)
        chunks.append(tris[front])
        ids.append(face_ids[front])
        for f in np.flatnonzero(crossing):
            pieces = _clip_near(tris[f])
            chunks.append(np.array(pieces).reshape(-1, 3, 3))
            ids.append(np.full(len(pieces), face_ids[f]))
    if not chunks:
        return np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(chunks), np.concatenate(ids).astype(np.int64)


def _rasterize(meshes: Sequence[TriangleMesh], camera: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest depth (float64) and nearest source face id (-1 when empty) per pixel."""
    depth = np.full((camera.height, camera.width), np.inf)
    face_at = np.full((camera.height, camera.width), -1, dtype=np.int64)
    tris, ids = _camera_triangles(meshes, camera)
    if tris.shape[0] == 0:
        return depth, face_at
    z = tris[:, :, 2]
    screen = np.empty((tris.shape[0], 3, 2))
    screen[:, :, 0] = camera.fx * tris[:, :, 0] / z + camera.cx
    screen[:, :, 1] = camera.fy * tris[:, :, 1] / z + camera.cy
    local = np.full(depth.shape, -1, dtype=np.int64)
    _raster_triangles(np.ascontiguousarray(screen), np.ascontiguousarray(1.0 / z), depth, local)
    covered = local >= 0
    face_at[covered] = ids[local[covered]]
    return depth, face_at


def rasterize_depth(meshes: Sequence[TriangleMesh], camera: CameraModel) -> np.ndarray:
    """Holdout depth map (float32, +inf where nothing is drawn)."""
    depth, _ = _rasterize(meshes, camera)
    return depth.astype(np.float32)


# ---------------------------------------------------------------------------
# shading
# ---------------------------------------------------------------------------

def linear_to_srgb(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1.0 / 2.4) - 0.055)


def face_colors(vertices: np.ndarray, faces: np.ndarray, material: BlanketMaterial, light: DirectionalLight,
                camera: CameraModel, ambient: float = DEFAULT_AMBIENT) -> np.ndarray:
    """Flat-shaded 8-bit sRGB colour of every face."""
    tris = np.asarray(vertices, dtype=np.float64)[faces]
    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)
    if material.two_sided:
        to_eye = camera_center(camera) - tris.mean(axis=1)
        flip = np.einsum("ij,ij->i", normals, to_eye) < 0
        normals[flip] *= -1.0
    direction = np.asarray(light.direction, dtype=np.float64)
    lambert = np.maximum(0.0, normals @ -direction) * light.intensity
    shade = np.maximum(ambient, lambert)
    linear = shade[:, None] * np.asarray(material.albedo)[None, :]
    return np.round(255.0 * linear_to_srgb(linear)).astype(np.uint8)


def render_blanket(blanket: TriangleMesh, material: BlanketMaterial, light: DirectionalLight, camera: CameraModel,
                   holdout: np.ndarray, original: np.ndarray, ambient: float = DEFAULT_AMBIENT) -> np.ndarray:
    """
    Composite the shaded blanket over original. A holdout rasterised at twice
    the camera resolution selects 2x2 supersampling; uncovered subsamples
    contribute the source pixel.
    """
    original = np.asarray(original)
    if original.shape != (camera.height, camera.width, 3) or original.dtype != np.uint8:
        raise RejectedInputError(
            f"Frame must be {camera.height}x{camera.width}x3 uint8, got {original.shape} {original.dtype}"
        )
    holdout = np.asarray(holdout)
    if holdout.shape == (camera.height, camera.width):
        factor = 1
    elif holdout.shape == (2 * camera.height, 2 * camera.width):
        factor = 2
    else:
        raise RejectedInputError(f"Holdout {holdout.shape} does not match the {camera.width}x{camera.height} camera")

    vertices, faces = blanket
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    out = original.copy()
    if faces.shape[0] == 0:
        return out

    view = camera if factor == 1 else camera.scaled(factor)
    depth, face_at = _rasterize([(vertices, faces)], view)
    visible = (face_at >= 0) & (depth < holdout.astype(np.float64))
    if not visible.any():
        return out
    colors = face_colors(vertices, faces, material, light, camera, ambient)

    if factor == 1:
        out[visible] = colors[face_at[visible]]
        return out

    h, w = camera.height, camera.width
    sub = np.repeat(np.repeat(original, 2, axis=0), 2, axis=1).astype(np.float64)
    sub[visible] = colors[face_at[visible]]
    mean = sub.reshape(h, 2, w, 2, 3).mean(axis=(1, 3))
    touched = visible.reshape(h, 2, w, 2).any(axis=(1, 3))
    out[touched] = np.round(mean[touched]).astype(np.uint8)
    return out


def composite_frame(blanket: TriangleMesh, holdouts: Sequence[TriangleMesh], material: BlanketMaterial,
                    light: DirectionalLight, camera: CameraModel, original: np.ndarray,
                    ambient: float = DEFAULT_AMBIENT, supersample: bool = False) -> np.ndarray:
    view = camera.scaled(2) if supersample else camera
    holdout = rasterize_depth(holdouts, view)
    return render_blanket(blanket, material, light, camera, holdout, original, ambient)


# ---------------------------------------------------------------------------
# render mesh
# ---------------------------------------------------------------------------

def grid_faces(res: int) -> np.ndarray:
    """Two triangles per quad of a res x res vertex grid (row-major indices)."""
    idx = np.arange(res * res).reshape(res, res)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    return np.stack([np.stack([a, c, b], axis=1), np.stack([b, c, d], axis=1)], axis=1).reshape(-1, 3)


def _subdivide_once(points: np.ndarray) -> np.ndarray:
    n = points.shape[0]
    face = 0.25 * (points[:-1, :-1] + points[1:, :-1] + points[:-1, 1:] + points[1:, 1:])

    row_mid = 0.5 * (points[:, :-1] + points[:, 1:])
    row_edge = row_mid.copy()
    row_edge[1:-1] = 0.25 * (points[1:-1, :-1] + points[1:-1, 1:] + face[:-1] + face[1:])
    col_mid = 0.5 * (points[:-1, :] + points[1:, :])
    col_edge = col_mid.copy()
    col_edge[:, 1:-1] = 0.25 * (points[:-1, 1:-1] + points[1:, 1:-1] + face[:, :-1] + face[:, 1:])

    moved = points.copy()
    face_avg = 0.25 * (face[:-1, :-1] + face[:-1, 1:] + face[1:, :-1] + face[1:, 1:])
    edge_avg = 0.25 * (row_mid[1:-1, :-1] + row_mid[1:-1, 1:] + col_mid[:-1, 1:-1] + col_mid[1:, 1:-1])
    moved[1:-1, 1:-1] = 0.25 * (face_avg + 2.0 * edge_avg + points[1:-1, 1:-1])
    # boundary curve rule; corners stay put
    for i in (0, n - 1):
        moved[i, 1:-1] = (points[i, :-2] + 6.0 * points[i, 1:-1] + points[i, 2:]) / 8.0
        moved[1:-1, i] = (points[:-2, i] + 6.0 * points[1:-1, i] + points[2:, i]) / 8.0

    out = np.empty((2 * n - 1, 2 * n - 1, 3))
    out[::2, ::2] = moved
    out[::2, 1::2] = row_edge
    out[1::2, ::2] = col_edge
    out[1::2, 1::2] = face
    return out


def subdivide_for_render(grid: np.ndarray, levels: int = 1) -> np.ndarray:
    """Smooth an (n, n, 3) cloth grid for display; the simulation state is not touched."""
    if levels < 0:
        raise RejectedInputError(f"levels must be >= 0, got {levels}")
    points = np.asarray(grid, dtype=np.float64)
    if points.ndim != 3 or points.shape[0] != points.shape[1] or points.shape[2] != 3:
        raise RejectedInputError(f"Expected an (n, n, 3) grid, got {points.shape}")
    for _ in range(levels):
        points = _subdivide_once(points)
    return points


def render_mesh(grid: np.ndarray, levels: int = 1) -> TriangleMesh:
    points = subdivide_for_render(grid, levels)
    return points.reshape(-1, 3), grid_faces(points.shape[0])


# ---------------------------------------------------------------------------
# frame files
# ---------------------------------------------------------------------------

def frame_extension(encoder: str) -> str:
    return {"png": ".png", "jpeg": ".jpg"}[encoder]


def encode_frame(image: np.ndarray, path: Path, encoder: str = "png", quality: int = 90) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    picture = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8))
    try:
        if encoder == "png":
            picture.save(path, format="PNG")
        elif encoder == "jpeg":
            picture.save(path, format="JPEG", quality=quality)
        else:
            raise RejectedInputError(f"Unknown encoder '{encoder}'")
    except OSError as e:
        raise OSError(f"Could not write frame {path}: {e}") from e
    return path


def load_frame(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Frame not found: {path}")
    with Image.open(path) as picture:
        return np.asarray(picture.convert("RGB"), dtype=np.uint8).copy()
