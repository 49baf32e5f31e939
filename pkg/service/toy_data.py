"""
Small synthetic inputs: a closed ellipsoid "body" with a four-joint chain
and short sequences filmed by a fixed camera. Used by the test-suite and by
`main.py make-toy` for demos.
"""
from pathlib import Path
from typing import Tuple

import numpy as np

from body_model import BodyTemplate, save_body_model
from sequence_io import Intrinsics, SequenceInput, write_sequence

TOY_RADII = (0.2, 0.8, 0.12)          # width, length, depth (meters)
TOY_RINGS = 16
TOY_SEGMENTS = 16
TOY_JOINT_RINGS = (4, 7, 10, 13)
TOY_PARENTS = (-1, 0, 1, 2)
TOY_INTRINSICS = Intrinsics(fx=60.0, fy=60.0, cx=32.0, cy=24.0, width=64, height=48)
TOY_DEPTH = 2.0
TOY_SUBJECT_SPACING = 0.9


def make_uv_sphere(radius: float = 1.0, rings: int = TOY_RINGS, segments: int = TOY_SEGMENTS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed, outward-wound UV sphere with poles on the y axis. Vertex 0 is the
    +y pole, then `rings - 1` rings of `segments` vertices, then the -y pole.
    """
    theta = np.pi * np.arange(1, rings) / rings
    phi = 2.0 * np.pi * np.arange(segments) / segments
    t, p = np.meshgrid(theta, phi, indexing="ij")
    # cyclic axis swap keeps the winding: (x, y, z) <- (sin t sin p, cos t, sin t cos p)
    ring = np.stack([np.sin(t) * np.sin(p), np.cos(t), np.sin(t) * np.cos(p)], axis=-1).reshape(-1, 3)
    vertices = np.concatenate([[[0.0, 1.0, 0.0]], ring, [[0.0, -1.0, 0.0]]]) * radius

    def at(i, j):
        return 1 + i * segments + (j % segments)

    south = vertices.shape[0] - 1
    faces = []
    for j in range(segments):
        faces.append((0, at(0, j), at(0, j + 1)))
    for i in range(rings - 2):
        for j in range(segments):
            a, b, c, d = at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for j in range(segments):
        faces.append((at(rings - 2, j), south, at(rings - 2, j + 1)))
    return vertices, np.asarray(faces, dtype=np.int64)


def make_toy_template() -> BodyTemplate:
    unit, faces = make_uv_sphere(1.0)
    rest = unit * np.asarray(TOY_RADII)
    num_vertices, num_joints = rest.shape[0], len(TOY_PARENTS)

    regressor = np.zeros((num_joints, num_vertices))
    for k, ring in enumerate(TOY_JOINT_RINGS):
        members = 1 + (ring - 1) * TOY_SEGMENTS + np.arange(TOY_SEGMENTS)
        regressor[k, members] = 1.0 / TOY_SEGMENTS
    joint_y = regressor @ rest[:, 1]

    # piecewise-linear weights along the chain, clamped at both ends
    weights = np.zeros((num_vertices, num_joints))
    y = np.clip(rest[:, 1], joint_y[-1], joint_y[0])
    for v in range(num_vertices):
        k = min(int(np.searchsorted(-joint_y, -y[v], side="right")) - 1, num_joints - 2)
        k = max(k, 0)
        s = (joint_y[k] - y[v]) / (joint_y[k] - joint_y[k + 1])
        weights[v, k] = 1.0 - s
        weights[v, k + 1] = s

    shape_dirs = np.zeros((num_vertices, 3, 2))
    shape_dirs[:, 0, 0] = 0.1 * rest[:, 0]
    shape_dirs[:, 1, 1] = 0.1 * rest[:, 1]
    return BodyTemplate(
        rest_vertices=rest,
        faces=faces,
        skin_weights=weights,
        joint_regressor=regressor,
        shape_dirs=shape_dirs,
        pose_dirs=np.zeros((num_vertices, 3, 9 * (num_joints - 1))),
        parents=np.asarray(TOY_PARENTS, dtype=np.int64),
    )


def toy_motion(num_frames: int, num_subjects: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Gentle breathing-like sway: poses (S, N, 4, 3) and translations (S, N, 3)."""
    t = np.arange(num_frames) / 30.0
    poses = np.zeros((num_subjects, num_frames, len(TOY_PARENTS), 3))
    translations = np.zeros((num_subjects, num_frames, 3))
    offsets = (np.arange(num_subjects) - 0.5 * (num_subjects - 1)) * TOY_SUBJECT_SPACING
    for s in range(num_subjects):
        phase = 0.7 * s
        poses[s, :, 0, 1] = 0.05 * np.sin(2.0 * np.pi * 0.25 * t + phase)
        poses[s, :, 2, 0] = 0.10 * np.sin(2.0 * np.pi * 0.5 * t + phase)
        translations[s, :, 0] = offsets[s]
        translations[s, :, 2] = TOY_DEPTH + 0.01 * np.sin(2.0 * np.pi * 0.2 * t + phase)
    return poses, translations


def toy_frames(num_frames: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    k = TOY_INTRINSICS
    return rng.integers(0, 256, size=(num_frames, k.height, k.width, 3), dtype=np.uint8)


def make_toy_sequence(path: Path, num_frames: int = 60, num_subjects: int = 1, seed: int = 0,
                      sequence_id: str = "toy", split: str = "train") -> SequenceInput:
    """Write a toy sequence directory (with its own body-model archive) and return it."""
    path = Path(path)
    save_body_model(make_toy_template(), path / "body_model")
    poses, translations = toy_motion(num_frames, num_subjects)
    # stored as float32; keep the returned arrays identical to what is read back
    poses, translations = (a.astype(np.float32).astype(np.float64) for a in (poses, translations))
    seq = SequenceInput(
        sequence_id=sequence_id, frame_rate=30.0, split=split, intrinsics=TOY_INTRINSICS,
        poses=poses, translations=translations,
        betas=np.zeros((num_subjects, 2)),
        camera_rotations=np.repeat(np.eye(3)[None], num_frames, axis=0),
        camera_translations=np.zeros((num_frames, 3)),
        root=path, body_model="body_model",
    )
    write_sequence(seq, path, frames=toy_frames(num_frames, seed))
    return seq
