"""
Closest-point queries against a triangle mesh through an axis-aligned
bounding-box tree.

The tree is built once per mesh topology and refit when the vertices move.
Queries return exactly what a brute-force scan over all triangles returns,
including the tie rule (lowest triangle index wins on equal distance).
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numba import njit

from errors import RejectedInputError
from utils import warn

DEGENERATE_AREA = 1e-12
LEAF_SIZE = 4
STACK_SIZE = 128
# box lower bounds may round above an exactly tied triangle distance
BOX_SLACK = 1e-12


@njit(cache=True)
def _segment_closest(px, py, pz, ax, ay, az, bx, by, bz):
    dx, dy, dz = bx - ax, by - ay, bz - az
    dd = dx * dx + dy * dy + dz * dz
    if dd <= 0.0:
        return ax, ay, az
    t = ((px - ax) * dx + (py - ay) * dy + (pz - az) * dz) / dd
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return ax + t * dx, ay + t * dy, az + t * dz


@njit(cache=True)
def triangle_area(ax, ay, az, bx, by, bz, cx, cy, cz):
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    nx = aby * acz - abz * acy
    ny = abz * acx - abx * acz
    nz = abx * acy - aby * acx
    return 0.5 * np.sqrt(nx * nx + ny * ny + nz * nz)


@njit(cache=True)
def closest_point_scalar(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point of triangle ABC to P, by Voronoi region (Ericson)."""
    if triangle_area(ax, ay, az, bx, by, bz, cx, cy, cz) <= DEGENERATE_AREA:
        lab = (bx - ax) ** 2 + (by - ay) ** 2 + (bz - az) ** 2
        lbc = (cx - bx) ** 2 + (cy - by) ** 2 + (cz - bz) ** 2
        lca = (ax - cx) ** 2 + (ay - cy) ** 2 + (az - cz) ** 2
        if lab >= lbc and lab >= lca:
            return _segment_closest(px, py, pz, ax, ay, az, bx, by, bz)
        if lbc >= lca:
            return _segment_closest(px, py, pz, bx, by, bz, cx, cy, cz)
        return _segment_closest(px, py, pz, cx, cy, cz, ax, ay, az)

    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w)


@njit(cache=True)
def _triangle_closest(px, py, pz, vertices, faces, t):
    i, j, k = faces[t, 0], faces[t, 1], faces[t, 2]
    qx, qy, qz = closest_point_scalar(
        px, py, pz,
        vertices[i, 0], vertices[i, 1], vertices[i, 2],
        vertices[j, 0], vertices[j, 1], vertices[j, 2],
        vertices[k, 0], vertices[k, 1], vertices[k, 2],
    )
    d2 = (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    return qx, qy, qz, d2


@njit(cache=True)
def _box_distance2(px, py, pz, lo, hi):
    d = 0.0
    if px < lo[0]:
        d += (lo[0] - px) ** 2
    elif px > hi[0]:
        d += (px - hi[0]) ** 2
    if py < lo[1]:
        d += (lo[1] - py) ** 2
    elif py > hi[1]:
        d += (py - hi[1]) ** 2
    if pz < lo[2]:
        d += (lo[2] - pz) ** 2
    elif pz > hi[2]:
        d += (pz - hi[2]) ** 2
    return d


@njit(cache=True)
def bvh_query(px, py, pz, max_d2, vertices, faces, node_min, node_max, left, right, start, count, tri_index):
    """
    Returns (triangle, qx, qy, qz, squared distance). Only triangles strictly
    closer than max_d2 are reported; triangle -1 means none was.
    """
    best_t = -1
    best_d2 = max_d2
    bqx, bqy, bqz = 0.0, 0.0, 0.0
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_distance2(px, py, pz, node_min[node], node_max[node]) > best_d2 * (1.0 + BOX_SLACK):
            continue
        if left[node] < 0:
            for slot in range(start[node], start[node] + count[node]):
                t = tri_index[slot]
                qx, qy, qz, d2 = _triangle_closest(px, py, pz, vertices, faces, t)
                if d2 < best_d2 or (d2 == best_d2 and t < best_t):
                    best_t, best_d2 = t, d2
                    bqx, bqy, bqz = qx, qy, qz
        else:
            l, r = left[node], right[node]
            dl = _box_distance2(px, py, pz, node_min[l], node_max[l])
            dr = _box_distance2(px, py, pz, node_min[r], node_max[r])
            # nearer child on top of the stack
            if dl <= dr:
                stack[top] = r
                stack[top + 1] = l
            else:
                stack[top] = l
                stack[top + 1] = r
            top += 2
    return best_t, bqx, bqy, bqz, best_d2


@njit(cache=True)
def brute_force_query(px, py, pz, vertices, faces):
    best_t = -1
    best_d2 = np.inf
    bqx, bqy, bqz = 0.0, 0.0, 0.0
    for t in range(faces.shape[0]):
        qx, qy, qz, d2 = _triangle_closest(px, py, pz, vertices, faces, t)
        if d2 < best_d2:
            best_t, best_d2 = t, d2
            bqx, bqy, bqz = qx, qy, qz
    return best_t, bqx, bqy, bqz, best_d2


@njit(cache=True)
def _refit(vertices, faces, node_min, node_max, left, right, start, count, tri_index):
    # children always carry larger indices than their parent
    for node in range(node_min.shape[0] - 1, -1, -1):
        if left[node] < 0:
            for axis in range(3):
                node_min[node, axis] = np.inf
                node_max[node, axis] = -np.inf
            for slot in range(start[node], start[node] + count[node]):
                t = tri_index[slot]
                for corner in range(3):
                    v = faces[t, corner]
                    for axis in range(3):
                        value = vertices[v, axis]
                        if value < node_min[node, axis]:
                            node_min[node, axis] = value
                        if value > node_max[node, axis]:
                            node_max[node, axis] = value
        else:
            l, r = left[node], right[node]
            for axis in range(3):
                node_min[node, axis] = min(node_min[l, axis], node_min[r, axis])
                node_max[node, axis] = max(node_max[l, axis], node_max[r, axis])


@njit(cache=True)
def _batch_query(points, vertices, faces, node_min, node_max, left, right, start, count, tri_index):
    n = points.shape[0]
    tris = np.empty(n, dtype=np.int64)
    closest = np.empty((n, 3))
    dist = np.empty(n)
    for i in range(n):
        t, qx, qy, qz, d2 = bvh_query(
            points[i, 0], points[i, 1], points[i, 2], np.inf,
            vertices, faces, node_min, node_max, left, right, start, count, tri_index,
        )
        tris[i] = t
        closest[i, 0], closest[i, 1], closest[i, 2] = qx, qy, qz
        dist[i] = np.sqrt(d2)
    return tris, closest, dist


@njit(cache=True)
def _min_distance(points, vertices, faces, node_min, node_max, left, right, start, count, tri_index):
    # the running minimum doubles as the query cutoff
    best = np.inf
    for i in range(points.shape[0]):
        t, qx, qy, qz, d2 = bvh_query(
            points[i, 0], points[i, 1], points[i, 2], best,
            vertices, faces, node_min, node_max, left, right, start, count, tri_index,
        )
        if t >= 0:
            best = d2
    return np.sqrt(best)


@dataclass
class Bvh:
    vertices: np.ndarray
    faces: np.ndarray
    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    tri_index: np.ndarray

    @property
    def arrays(self):
        return (self.vertices, self.faces, self.node_min, self.node_max, self.left,
                self.right, self.start, self.count, self.tri_index)


def build_bvh(vertices: np.ndarray, faces: np.ndarray, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median split on the longest centroid axis; nodes stored in preorder."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    if faces.shape[0] == 0:
        raise RejectedInputError("Cannot build a BVH over an empty mesh")

    corners = vertices[faces]
    centroids = corners.mean(axis=1)
    areas = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
    degenerate = int(np.count_nonzero(areas <= DEGENERATE_AREA))
    if degenerate:
        warn(f"{degenerate} degenerate triangle(s) in collider mesh; using their longest edge")

    order = np.arange(faces.shape[0], dtype=np.int64)
    left, right, start, count = [], [], [], []

    def build(lo: int, hi: int) -> int:
        node = len(left)
        left.append(-1)
        right.append(-1)
        start.append(lo)
        count.append(hi - lo)
        if hi - lo <= leaf_size:
            return node
        chunk = centroids[order[lo:hi]]
        axis = int(np.argmax(chunk.max(axis=0) - chunk.min(axis=0)))
        order[lo:hi] = order[lo:hi][np.argsort(chunk[:, axis], kind="stable")]
        mid = (lo + hi) // 2
        left[node] = build(lo, mid)
        right[node] = build(mid, hi)
        count[node] = 0
        return node

    build(0, faces.shape[0])
    n = len(left)
    bvh = Bvh(
        vertices=vertices, faces=faces,
        node_min=np.empty((n, 3)), node_max=np.empty((n, 3)),
        left=np.asarray(left, dtype=np.int64), right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64), count=np.asarray(count, dtype=np.int64),
        tri_index=order,
    )
    _refit(*bvh.arrays)
    return bvh


def refit_bvh(bvh: Bvh, vertices: np.ndarray) -> Bvh:
    """Move the tree onto new vertex positions (same topology)."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    if vertices.shape != bvh.vertices.shape:
        raise RejectedInputError(f"Refit expects {bvh.vertices.shape} vertices, got {vertices.shape}")
    bvh.vertices = vertices
    _refit(*bvh.arrays)
    return bvh


def closest_point_on_triangle(p, triangle) -> Tuple[np.ndarray, float]:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    if triangle_area(*tri.reshape(-1)) <= DEGENERATE_AREA:
        warn("Degenerate triangle; closest point taken on its longest edge")
    q = np.array(closest_point_scalar(p[0], p[1], p[2], *tri.reshape(-1)))
    return q, float(np.linalg.norm(p - q))


def bvh_closest(bvh: Bvh, p) -> Tuple[int, np.ndarray, float]:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    t, qx, qy, qz, d2 = bvh_query(p[0], p[1], p[2], np.inf, *bvh.arrays)
    return int(t), np.array([qx, qy, qz]), float(np.sqrt(d2))


def brute_force_closest(vertices: np.ndarray, faces: np.ndarray, p) -> Tuple[int, np.ndarray, float]:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    if faces.shape[0] == 0:
        raise RejectedInputError("Cannot query an empty mesh")
    t, qx, qy, qz, d2 = brute_force_query(p[0], p[1], p[2], vertices, faces)
    return int(t), np.array([qx, qy, qz]), float(np.sqrt(d2))


def bvh_closest_batch(bvh: Bvh, points: np.ndarray):
    """(triangle ids, closest points, distances) for every row of points."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    return _batch_query(points, *bvh.arrays)


def min_distance(bvh: Bvh, points: np.ndarray) -> float:
    """Smallest distance from any of the points to the mesh."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise RejectedInputError("Cannot measure distance from an empty point set")
    return float(_min_distance(points, *bvh.arrays))
