"""
SMPL-style parametric body: shape blendshapes, pose blendshapes, forward
kinematics and linear blend skinning.

All operations are size-generic, so toy templates with a handful of
vertices and joints go through exactly the same code as the full model.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from errors import RejectedInputError, SimulationInputError
from utils import warn

SMPL_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)

ROOT_PARENT = -1
ARCHIVE_FILES = ("rest_vertices", "skin_weights", "joint_regressor", "shape_dirs", "pose_dirs", "faces")
MAX_BODY_DIAGONAL = 5.0
BETA_WARN_LIMIT = 5.0
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class BodyTemplate:
    rest_vertices: np.ndarray     # V x 3
    faces: np.ndarray             # F x 3
    skin_weights: np.ndarray      # V x J
    joint_regressor: np.ndarray   # J x V
    shape_dirs: np.ndarray        # V x 3 x B
    pose_dirs: np.ndarray         # V x 3 x 9(J-1)
    parents: np.ndarray           # J

    def __post_init__(self):
        V = self.rest_vertices.shape[0]
        J = self.parents.shape[0]
        if self.rest_vertices.ndim != 2 or self.rest_vertices.shape[1] != 3 or V == 0:
            raise RejectedInputError(f"rest_vertices must be V x 3, got {self.rest_vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise RejectedInputError(f"faces must be F x 3, got {self.faces.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise RejectedInputError(f"face indices must lie in [0, {V})")
        if self.skin_weights.shape != (V, J):
            raise RejectedInputError(f"skin_weights must be {V} x {J}, got {self.skin_weights.shape}")
        if np.any(self.skin_weights < 0) or np.max(np.abs(self.skin_weights.sum(axis=1) - 1.0)) > 1e-6:
            raise RejectedInputError("skin_weights rows must be non-negative and sum to 1")
        if self.joint_regressor.shape != (J, V):
            raise RejectedInputError(f"joint_regressor must be {J} x {V}, got {self.joint_regressor.shape}")
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (V, 3):
            raise RejectedInputError(f"shape_dirs must be {V} x 3 x B, got {self.shape_dirs.shape}")
        if self.pose_dirs.shape != (V, 3, 9 * (J - 1)):
            raise RejectedInputError(f"pose_dirs must be {V} x 3 x {9 * (J - 1)}, got {self.pose_dirs.shape}")
        if self.parents[0] != ROOT_PARENT:
            raise RejectedInputError("parents[0] must be the root sentinel -1")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise RejectedInputError(f"parents[{j}] = {self.parents[j]} breaks topological order")

    @property
    def num_vertices(self) -> int:
        return self.rest_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def num_betas(self) -> int:
        return self.shape_dirs.shape[2]


@dataclass(frozen=True)
class ShapeParams:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(betas)):
            raise RejectedInputError("betas must be finite")
        if np.any(np.abs(betas) > BETA_WARN_LIMIT):
            warn(f"Shape coefficients beyond ±{BETA_WARN_LIMIT:g} are out of distribution: {np.round(betas, 3).tolist()}")
        object.__setattr__(self, "betas", betas)


@dataclass(frozen=True)
class PoseParams:
    joint_rotations: np.ndarray                   # J x 3 axis-angle, radians
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotations = np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1, 3)
        translation = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotations)) and np.all(np.isfinite(translation))):
            raise RejectedInputError("pose parameters must be finite")
        object.__setattr__(self, "joint_rotations", normalize_axis_angles(rotations))
        object.__setattr__(self, "root_translation", translation)


@dataclass(frozen=True)
class SkinnedMesh:
    vertices: np.ndarray   # V x 3, world frame
    faces: np.ndarray
    joints: np.ndarray     # J x 3

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


def normalize_axis_angles(rotations: np.ndarray) -> np.ndarray:
    """Wrap every axis-angle to magnitude < 2π, keeping its axis."""
    angles = np.linalg.norm(rotations, axis=1)
    wrapped = np.mod(angles, TWO_PI)
    scale = np.ones_like(angles)
    needs = angles >= TWO_PI
    scale[needs] = wrapped[needs] / angles[needs]
    return rotations * scale[:, None]


def batch_rodrigues(axis_angles: np.ndarray) -> np.ndarray:
    """N x 3 axis-angle vectors to N x 3 x 3 rotation matrices."""
    axis_angles = np.asarray(axis_angles, dtype=np.float64).reshape(-1, 3)
    theta = np.linalg.norm(axis_angles, axis=1)
    out = np.tile(np.eye(3), (axis_angles.shape[0], 1, 1))
    moving = theta > 0.0
    if not np.any(moving):
        return out
    k = axis_angles[moving] / theta[moving, None]
    K = np.zeros((k.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
    K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
    s = np.sin(theta[moving])[:, None, None]
    c = (1.0 - np.cos(theta[moving]))[:, None, None]
    out[moving] = np.eye(3) + s * K + c * (K @ K)
    return out


def rodrigues(axis_angle) -> np.ndarray:
    """Axis-angle 3-vector to a 3x3 rotation; the zero vector maps to identity."""
    return batch_rodrigues(np.asarray(axis_angle, dtype=np.float64).reshape(1, 3))[0]


def shape_blend(template: BodyTemplate, shape: ShapeParams) -> np.ndarray:
    betas = shape.betas
    if betas.shape[0] != template.num_betas:
        raise RejectedInputError(
            f"Got {betas.shape[0]} shape coefficients but the template has {template.num_betas} shape directions"
        )
    return template.rest_vertices + np.einsum("vcb,b->vc", template.shape_dirs, betas)


def regress_joints(rest_shape: np.ndarray, template: BodyTemplate) -> np.ndarray:
    return template.joint_regressor @ rest_shape


def _with_homogeneous_row(rotations: np.ndarray, translations: np.ndarray) -> np.ndarray:
    n = rotations.shape[0]
    out = np.zeros((n, 4, 4))
    out[:, :3, :3] = rotations
    out[:, :3, 3] = translations
    out[:, 3, 3] = 1.0
    return out


def forward_kinematics(rotations: np.ndarray, joints: np.ndarray, parents: np.ndarray):
    """
    Chain per-joint local transforms down the kinematic tree.

    Returns (world transforms J x 4 x 4, posed joint positions J x 3).
    """
    offsets = joints.copy()
    offsets[1:] -= joints[parents[1:]]
    local = _with_homogeneous_row(rotations, offsets)
    world = np.empty_like(local)
    world[0] = local[0]
    for j in range(1, parents.shape[0]):
        world[j] = world[parents[j]] @ local[j]
    return world, world[:, :3, 3].copy()


def pose_mesh(
    template: BodyTemplate,
    shape: ShapeParams,
    pose: PoseParams,
    pose_blendshapes: bool = True,
) -> SkinnedMesh:
    """
    Pose the body in the world frame.

    The mesh keeps the model's own origin convention (the pelvis is wherever
    the joint regressor puts it) and only root_translation is added on top,
    which is the convention of the ground-truth translations.
    """
    J = template.num_joints
    if pose.joint_rotations.shape[0] != J:
        raise RejectedInputError(f"Got {pose.joint_rotations.shape[0]} joint rotations for a {J}-joint template")

    v_shaped = shape_blend(template, shape)
    joints = regress_joints(v_shaped, template)
    rotations = batch_rodrigues(pose.joint_rotations)

    v_posed = v_shaped
    if pose_blendshapes and J > 1:
        pose_feature = (rotations[1:] - np.eye(3)).reshape(-1)
        v_posed = v_shaped + np.einsum("vcp,p->vc", template.pose_dirs, pose_feature)

    world, posed_joints = forward_kinematics(rotations, joints, template.parents)
    relative = world.copy()
    relative[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], joints)

    blended = np.einsum("vj,jab->vab", template.skin_weights, relative)
    vertices = np.einsum("vab,vb->va", blended[:, :3, :3], v_posed) + blended[:, :3, 3]

    vertices = vertices + pose.root_translation
    posed_joints = posed_joints + pose.root_translation
    if not (np.all(np.isfinite(vertices)) and np.all(np.isfinite(posed_joints))):
        raise SimulationInputError("Posed body mesh contains non-finite vertices")

    mesh = SkinnedMesh(vertices=vertices, faces=template.faces, joints=posed_joints)
    if mesh.diagonal >= MAX_BODY_DIAGONAL:
        warn(f"Posed body bounding-box diagonal is {mesh.diagonal:.2f} m (expected < {MAX_BODY_DIAGONAL:g} m)")
    return mesh


def load_body_model(path: Path) -> BodyTemplate:
    """Read a body-model archive directory (model.json + little-endian binaries)."""
    path = Path(path)
    meta_path = path / "model.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"Body model descriptor not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("endianness", "little") != "little":
        raise RejectedInputError(f"Unsupported endianness tag '{meta.get('endianness')}' in {meta_path}")

    V, F, J, B = (int(meta[k]) for k in ("V", "F", "J", "B"))
    shapes = {
        "rest_vertices": (V, 3),
        "skin_weights": (V, J),
        "joint_regressor": (J, V),
        "shape_dirs": (V, 3, B),
        "pose_dirs": (V, 3, 9 * (J - 1)),
        "faces": (F, 3),
    }
    arrays = {}
    for name, shape in shapes.items():
        file_path = path / f"{name}.bin"
        if not file_path.exists():
            raise FileNotFoundError(f"Body model array not found: {file_path}")
        dtype = "<u4" if name == "faces" else "<f4"
        data = np.fromfile(file_path, dtype=dtype)
        expected = int(np.prod(shape))
        if data.size != expected:
            raise RejectedInputError(f"{file_path.name} holds {data.size} values, expected {expected} for shape {shape}")
        arrays[name] = data.reshape(shape).astype(np.int64 if name == "faces" else np.float64)

    weights = arrays["skin_weights"]
    # float32 storage loses the exact unit row sum
    weights = weights / weights.sum(axis=1, keepdims=True)
    return BodyTemplate(
        rest_vertices=arrays["rest_vertices"],
        faces=arrays["faces"],
        skin_weights=weights,
        joint_regressor=arrays["joint_regressor"],
        shape_dirs=arrays["shape_dirs"],
        pose_dirs=arrays["pose_dirs"],
        parents=np.asarray(meta["parents"], dtype=np.int64),
    )


def save_body_model(template: BodyTemplate, path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "V": template.num_vertices,
        "F": int(template.faces.shape[0]),
        "J": template.num_joints,
        "B": template.num_betas,
        "parents": [int(p) for p in template.parents],
        "endianness": "little",
    }
    (path / "model.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    for name in ARCHIVE_FILES:
        dtype = "<u4" if name == "faces" else "<f4"
        np.ascontiguousarray(getattr(template, name), dtype=dtype).tofile(path / f"{name}.bin")
    return path
