"""
Motion sequence container.

A sequence is a directory holding:
    sequence.json           ids, frame rate, split, intrinsics, array table
    <array>.bin             little-endian float32, row-major, shape from the table
    frames/000000.png ...   source video frames, absolute frame numbering

Arrays: poses (S, N, J, 3) axis-angle, translations (S, N, 3) meters,
betas (S, B), camera_rotations (N, 3, 3) world->camera,
camera_translations (N, 3) meters.
"""
import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from body_model import ShapeParams
from errors import IngestionError
from render_composite import encode_frame, load_frame
from scene_setup import CameraModel

DESCRIPTOR = "sequence.json"
SPLITS = ("train", "test", "validation")
DEFAULT_FRAMES_DIR = "frames"
DEFAULT_FRAME_PATTERN = "{:06d}.png"
ARRAY_NAMES = ("poses", "translations", "betas", "camera_rotations", "camera_translations")


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def to_dict(self) -> Dict[str, float]:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class SequenceInput:
    sequence_id: str
    frame_rate: float
    split: str
    intrinsics: Intrinsics
    poses: np.ndarray                 # S x N x J x 3
    translations: np.ndarray          # S x N x 3
    betas: np.ndarray                 # S x B
    camera_rotations: np.ndarray      # N x 3 x 3
    camera_translations: np.ndarray   # N x 3
    root: Path
    frames_dir: str = DEFAULT_FRAMES_DIR
    frame_pattern: str = DEFAULT_FRAME_PATTERN
    body_model: Optional[str] = None

    @property
    def num_frames(self) -> int:
        return self.poses.shape[1]

    @property
    def num_subjects(self) -> int:
        return self.poses.shape[0]

    def camera(self, frame: int) -> CameraModel:
        k = self.intrinsics
        return CameraModel(k.fx, k.fy, k.cx, k.cy, k.width, k.height,
                           self.camera_rotations[frame], self.camera_translations[frame])

    def shape(self, subject: int) -> ShapeParams:
        return ShapeParams(self.betas[subject])

    def frame_path(self, frame: int) -> Path:
        return self.root / self.frames_dir / self.frame_pattern.format(frame)

    def load_frame(self, frame: int) -> np.ndarray:
        image = load_frame(self.frame_path(frame))
        if image.shape != (self.intrinsics.height, self.intrinsics.width, 3):
            raise IngestionError(
                f"Frame is {image.shape[1]}x{image.shape[0]}, intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}",
                field="frames", frame=frame,
            )
        return image

    def body_model_path(self) -> Optional[Path]:
        if self.body_model is None:
            return None
        return (self.root / self.body_model).resolve()


def _require(meta: dict, key: str):
    if key not in meta:
        raise IngestionError(f"Missing key '{key}' in {DESCRIPTOR}", field=key)
    return meta[key]


def _read_array(root: Path, name: str, table: dict) -> np.ndarray:
    entry = table.get(name)
    if entry is None:
        raise IngestionError(f"Array '{name}' is not declared", field=name)
    file_path = root / entry.get("file", f"{name}.bin")
    if not file_path.exists():
        raise IngestionError(f"Array file not found: {file_path}", field=name)
    shape = tuple(int(d) for d in entry["shape"])
    data = np.fromfile(file_path, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise IngestionError(f"{file_path.name} holds {data.size} values, shape {shape} needs {int(np.prod(shape))}",
                             field=name)
    return data.reshape(shape).astype(np.float64)


def _first_bad_frame(values: np.ndarray, frame_axis: int) -> Optional[int]:
    bad = ~np.isfinite(values)
    if not bad.any():
        return None
    per_frame = np.moveaxis(bad, frame_axis, 0).reshape(values.shape[frame_axis], -1).any(axis=1)
    return int(np.argmax(per_frame))


def _check_frame_count(name: str, actual: int, reference: str, expected: int) -> None:
    if actual != expected:
        raise IngestionError(f"'{name}' has {actual} frames but '{reference}' has {expected}", field=name)


def ingest_sequence(path: Path) -> SequenceInput:
    """
    Read and validate a sequence directory.

    Raises:
        FileNotFoundError: no descriptor at path
        IngestionError: schema violation, length mismatch or non-finite value
    """
    root = Path(path)
    descriptor = root / DESCRIPTOR
    if not descriptor.exists():
        raise FileNotFoundError(f"Sequence descriptor not found: {descriptor}")
    try:
        meta = json.loads(descriptor.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestionError(f"{descriptor} is not valid JSON: {e}")

    sequence_id = str(_require(meta, "sequence_id"))
    frame_rate = float(_require(meta, "frame_rate"))
    if not frame_rate > 0:
        raise IngestionError(f"frame_rate must be > 0, got {frame_rate}", field="frame_rate")
    split = str(_require(meta, "split"))
    if split not in SPLITS:
        raise IngestionError(f"split must be one of {SPLITS}, got '{split}'", field="split")
    raw_k = _require(meta, "intrinsics")
    try:
        intrinsics = Intrinsics(
            fx=float(raw_k["fx"]), fy=float(raw_k["fy"]), cx=float(raw_k["cx"]), cy=float(raw_k["cy"]),
            width=int(raw_k["width"]), height=int(raw_k["height"]),
        )
    except KeyError as e:
        raise IngestionError(f"Missing intrinsics entry {e}", field="intrinsics")

    table = _require(meta, "arrays")
    arrays = {name: _read_array(root, name, table) for name in ARRAY_NAMES}
    poses, translations, betas = arrays["poses"], arrays["translations"], arrays["betas"]
    rotations, cam_t = arrays["camera_rotations"], arrays["camera_translations"]

    if poses.ndim != 4 or poses.shape[3] != 3:
        raise IngestionError(f"poses must be (S, N, J, 3), got {poses.shape}", field="poses")
    num_subjects, num_frames = poses.shape[0], poses.shape[1]
    if num_subjects < 1:
        raise IngestionError("Sequence has no subjects", field="poses")
    declared = meta.get("num_subjects", num_subjects)
    if int(declared) != num_subjects:
        raise IngestionError(f"num_subjects is {declared} but poses hold {num_subjects}", field="num_subjects")
    declared = meta.get("num_frames", num_frames)
    _check_frame_count("num_frames", int(declared), "poses", num_frames)
    if translations.shape[:1] != (num_subjects,) or translations.shape[2:] != (3,) or translations.ndim != 3:
        raise IngestionError(f"translations must be ({num_subjects}, N, 3), got {translations.shape}",
                             field="translations")
    _check_frame_count("translations", translations.shape[1], "poses", num_frames)
    if betas.ndim != 2 or betas.shape[0] != num_subjects:
        raise IngestionError(f"betas must be ({num_subjects}, B), got {betas.shape}", field="betas")
    if rotations.shape[1:] != (3, 3):
        raise IngestionError(f"camera_rotations must be (N, 3, 3), got {rotations.shape}", field="camera_rotations")
    _check_frame_count("camera_rotations", rotations.shape[0], "poses", num_frames)
    if cam_t.ndim != 2 or cam_t.shape[1] != 3:
        raise IngestionError(f"camera_translations must be (N, 3), got {cam_t.shape}", field="camera_translations")
    _check_frame_count("camera_translations", cam_t.shape[0], "poses", num_frames)

    for name, values, axis in (("poses", poses, 1), ("translations", translations, 1),
                               ("camera_rotations", rotations, 0), ("camera_translations", cam_t, 0)):
        frame = _first_bad_frame(values, axis)
        if frame is not None:
            raise IngestionError("Non-finite value", field=name, frame=frame)
    if not np.all(np.isfinite(betas)):
        raise IngestionError("Non-finite value", field="betas")

    # float32 storage keeps rotations orthonormal to about 1e-7
    gram = np.einsum("nji,njk->nik", rotations, rotations) - np.eye(3)
    off = np.max(np.abs(gram), axis=(1, 2)) > 1e-6
    det_off = np.abs(np.linalg.det(rotations) - 1.0) > 1e-6
    if off.any() or det_off.any():
        frame = int(np.argmax(off | det_off))
        raise IngestionError("Camera rotation is not a proper rotation", field="camera_rotations", frame=frame)

    seq = SequenceInput(
        sequence_id=sequence_id, frame_rate=frame_rate, split=split, intrinsics=intrinsics,
        poses=poses, translations=translations, betas=betas,
        camera_rotations=rotations, camera_translations=cam_t, root=root,
        frames_dir=str(meta.get("frames_dir", DEFAULT_FRAMES_DIR)),
        frame_pattern=str(meta.get("frame_pattern", DEFAULT_FRAME_PATTERN)),
        body_model=meta.get("body_model"),
    )
    for f in range(num_frames):
        if not seq.frame_path(f).exists():
            raise IngestionError(f"Frame file not found: {seq.frame_path(f)}", field="frames", frame=f)
    return seq


def write_sequence(seq: SequenceInput, path: Path, frames: Sequence[np.ndarray] = None) -> Path:
    """
    Write seq as a container at path. Frames are encoded from `frames` when
    given, otherwise copied from the source container.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    table = {}
    for name in ARRAY_NAMES:
        values = np.ascontiguousarray(getattr(seq, name), dtype="<f4")
        values.tofile(root / f"{name}.bin")
        table[name] = {"file": f"{name}.bin", "shape": list(values.shape)}
    meta = {
        "sequence_id": seq.sequence_id,
        "frame_rate": seq.frame_rate,
        "split": seq.split,
        "num_frames": seq.num_frames,
        "num_subjects": seq.num_subjects,
        "intrinsics": seq.intrinsics.to_dict(),
        "frames_dir": seq.frames_dir,
        "frame_pattern": seq.frame_pattern,
        "arrays": table,
    }
    if seq.body_model is not None:
        meta["body_model"] = seq.body_model
    (root / DESCRIPTOR).write_text(json.dumps(meta, indent=2), encoding="utf-8")

    target = root / seq.frames_dir
    if frames is not None:
        if len(frames) != seq.num_frames:
            raise IngestionError(f"Got {len(frames)} frames for a {seq.num_frames}-frame sequence", field="frames")
        for f, image in enumerate(frames):
            encode_frame(image, target / seq.frame_pattern.format(f), encoder="png")
    elif (seq.root / seq.frames_dir).resolve() != target.resolve():
        target.mkdir(parents=True, exist_ok=True)
        for f in range(seq.num_frames):
            shutil.copyfile(seq.frame_path(f), target / seq.frame_pattern.format(f))
    return root
