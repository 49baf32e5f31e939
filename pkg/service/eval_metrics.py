"""
Pose-error metrics against generated manifests.

PA-MPJPE aligns predictions onto ground truth with the optimal similarity
transform before measuring; MPJPE measures raw camera-frame joints. Both
are reported in millimeters and pooled over (frame, subject) pairs.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from errors import EmptySelectionError, MetricError, RejectedInputError
from utils import warn

METERS_TO_MM = 1000.0
MIN_JOINTS = 3
DEGENERATE_VARIANCE = 1e-12
FILTERS = ("occluded", "all")
JOINT_SETS = ("all", "subset14")

# hips, knees, ankles, shoulders, elbows, wrists, neck, head
JOINT_SUBSET_14 = (8, 5, 2, 1, 4, 7, 21, 19, 17, 16, 18, 20, 12, 15)

PREDICTIONS_FILE = "predictions.json"


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass
class EvaluationResult:
    table: pd.DataFrame
    pa_mpjpe: float
    mpjpe: float
    filter: str


def _joint_pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise MetricError(f"Joint sets must both be J x 3, got {pred.shape} and {gt.shape}")
    if pred.shape[0] < MIN_JOINTS:
        raise MetricError(f"Need at least {MIN_JOINTS} joints, got {pred.shape[0]}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise MetricError("Joint sets must be finite")
    return pred, gt


def procrustes_align(pred, gt) -> SimilarityTransform:
    """Least-squares (s, R, t) mapping pred onto gt."""
    pred, gt = _joint_pair(pred, gt)
    mu_pred, mu_gt = pred.mean(axis=0), gt.mean(axis=0)
    x, y = pred - mu_pred, gt - mu_gt
    if np.sum(y * y) < DEGENERATE_VARIANCE:
        raise MetricError("Ground-truth joints are all coincident")
    var_pred = np.sum(x * x)
    if var_pred < DEGENERATE_VARIANCE:
        raise MetricError("Predicted joints are all coincident")

    u, sigma, vt = np.linalg.svd(y.T @ x)
    d = np.ones(3)
    # reflection guard on the weakest direction
    d[2] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rotation = (u * d) @ vt
    scale = float(np.sum(sigma * d) / var_pred)
    translation = mu_gt - scale * rotation @ mu_pred
    return SimilarityTransform(scale=scale, rotation=rotation, translation=translation)


def pa_mpjpe(pred, gt) -> float:
    pred, gt = _joint_pair(pred, gt)
    aligned = procrustes_align(pred, gt).apply(pred)
    return float(np.mean(np.linalg.norm(aligned - gt, axis=1)) * METERS_TO_MM)


def mpjpe(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"Joint sets differ in shape: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * METERS_TO_MM)


def manifest_table(manifest: dict) -> pd.DataFrame:
    """One row per (video, frame, subject) with the occlusion flag and camera-frame 3D joints."""
    videos = {v["id"]: v["name"] for v in manifest["videos"]}
    images = {i["id"]: i for i in manifest["images"]}
    rows = []
    for ann in manifest["annotations"]:
        image = images[ann["image_id"]]
        rows.append({
            "video_id": videos[image["video_id"]],
            "frame_index": int(image["frame_index"]),
            "subject": int(ann["subject"]),
            "blanket_occluded": bool(ann["blanket_occluded"]),
            "joints_3d": np.asarray(ann["keypoints_3d"], dtype=np.float64).reshape(-1, 3),
        })
    table = pd.DataFrame(rows, columns=["video_id", "frame_index", "subject", "blanket_occluded", "joints_3d"])
    return table.astype({"frame_index": "int64", "subject": "int64", "blanket_occluded": bool})


def aggregate(values: pd.DataFrame, manifest: dict, filter: str = "occluded", column: str = "pa_mpjpe") -> float:
    """
    Pooled mean of `column` over the retained (video, frame, subject) rows.
    With filter="occluded" only blanketed subjects are kept.
    """
    if filter not in FILTERS:
        raise RejectedInputError(f"filter must be one of {FILTERS}, got '{filter}'")
    keys = ["video_id", "frame_index", "subject"]
    flags = manifest_table(manifest)[keys + ["blanket_occluded"]]
    values = values.astype({"frame_index": "int64", "subject": "int64"})
    merged = pd.merge(values, flags, on=keys, how="left")
    merged["blanket_occluded"] = merged["blanket_occluded"].eq(True)
    if filter == "occluded":
        merged = merged[merged["blanket_occluded"]]
    if merged.empty:
        raise EmptySelectionError(f"No rows left after the '{filter}' filter")
    return float(merged[column].mean())


def write_predictions(path: Path, entries: pd.DataFrame, joints: np.ndarray) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    joints = np.ascontiguousarray(joints, dtype="<f4")
    joints.tofile(path / "joints.bin")
    meta = {
        "entries": [{"video_id": str(r.video_id), "frame_index": int(r.frame_index), "subject": int(r.subject)}
                    for r in entries.itertuples(index=False)],
        "joints": {"file": "joints.bin", "shape": list(joints.shape)},
    }
    (path / PREDICTIONS_FILE).write_text(json.dumps(meta, indent=1), encoding="utf-8")
    return path


def load_predictions(path: Path) -> Tuple[pd.DataFrame, np.ndarray]:
    """Prediction entries (video_id, frame_index, subject) and their K x J x 3 camera-frame joints in meters."""
    path = Path(path)
    descriptor = path / PREDICTIONS_FILE
    if not descriptor.exists():
        raise FileNotFoundError(f"Predictions descriptor not found: {descriptor}")
    meta = json.loads(descriptor.read_text(encoding="utf-8"))
    entries = pd.DataFrame(meta["entries"], columns=["video_id", "frame_index", "subject"])
    shape = tuple(int(d) for d in meta["joints"]["shape"])
    joints_file = path / meta["joints"].get("file", "joints.bin")
    if not joints_file.exists():
        raise FileNotFoundError(f"Prediction joints not found: {joints_file}")
    joints = np.fromfile(joints_file, dtype="<f4")
    if joints.size != int(np.prod(shape)) or len(shape) != 3 or shape[2] != 3:
        raise RejectedInputError(f"{joints_file.name} holds {joints.size} values, declared shape {shape}")
    joints = joints.reshape(shape).astype(np.float64)
    if shape[0] != len(entries):
        raise RejectedInputError(f"{len(entries)} entries but {shape[0]} joint sets")
    return entries, joints


def select_joints(joints: np.ndarray, joint_set: str) -> np.ndarray:
    if joint_set == "all":
        return joints
    if joint_set != "subset14":
        raise RejectedInputError(f"joints must be one of {JOINT_SETS}, got '{joint_set}'")
    if joints.shape[-2] != 24:
        raise MetricError(f"The 14-joint subset needs 24 joints, got {joints.shape[-2]}")
    return joints[..., list(JOINT_SUBSET_14), :]


def evaluate(entries: pd.DataFrame, joints: np.ndarray, manifest: dict, filter: str = "occluded",
             joint_set: str = "all") -> EvaluationResult:
    """Per-(frame, subject) errors against the manifest's 3D joints, pooled with `filter`."""
    gt = manifest_table(manifest).set_index(["video_id", "frame_index", "subject"])
    rows = []
    missing = 0
    for k, entry in enumerate(entries.itertuples(index=False)):
        key = (str(entry.video_id), int(entry.frame_index), int(entry.subject))
        if key not in gt.index:
            missing += 1
            continue
        truth = select_joints(gt.loc[key, "joints_3d"], joint_set)
        pred = select_joints(joints[k], joint_set)
        rows.append({"video_id": key[0], "frame_index": key[1], "subject": key[2],
                     "pa_mpjpe": pa_mpjpe(pred, truth), "mpjpe": mpjpe(pred, truth)})
    if missing:
        warn(f"{missing} prediction(s) have no ground truth in the manifest")
    table = pd.DataFrame(rows, columns=["video_id", "frame_index", "subject", "pa_mpjpe", "mpjpe"])
    return EvaluationResult(
        table=table,
        pa_mpjpe=aggregate(table, manifest, filter, "pa_mpjpe"),
        mpjpe=aggregate(table, manifest, filter, "mpjpe"),
        filter=filter,
    )
