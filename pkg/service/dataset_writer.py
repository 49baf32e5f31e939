"""
Output tree and annotation manifests.

Layout:
    <out>/<split>/<sequence_id>/<video_id>/<frame:06d>.<ext>
    <out>/annotations/person_keypoints_<split>.json
    <out>/generation_summary.csv
    <out>/generation_config.env
"""
import json
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Sequence, Tuple

import pandas as pd

from body_model import SMPL_JOINT_NAMES
from errors import RejectedInputError
from render_composite import frame_extension
from sequence_io import SPLITS

SCHEMA_VERSION = "1.0"
ANNOTATIONS_DIR = "annotations"
SUMMARY_FILE = "generation_summary.csv"
CONFIG_FILE = "generation_config.env"
PERSON_CATEGORY = 1


@dataclass
class FrameEntry:
    frame_index: int
    file_name: str                 # posix path relative to the output root
    width: int
    height: int
    annotations: List[dict] = field(default_factory=list)


@dataclass
class VideoEntry:
    record: object                 # pipeline.SegmentRecord
    frames: List[FrameEntry] = field(default_factory=list)


@dataclass
class ManifestFragment:
    sequence_id: str
    split: str
    subject: int
    keypoint_names: Tuple[str, ...]
    skeleton: List[Tuple[int, int]]
    videos: List[VideoEntry] = field(default_factory=list)

    @property
    def records(self) -> list:
        return [v.record for v in self.videos]


def keypoint_names(num_joints: int) -> Tuple[str, ...]:
    if num_joints == len(SMPL_JOINT_NAMES):
        return SMPL_JOINT_NAMES
    return tuple(f"joint_{i}" for i in range(num_joints))


def skeleton_edges(parents: Sequence[int]) -> List[Tuple[int, int]]:
    """Kinematic tree as 1-based keypoint pairs."""
    return [(int(p) + 1, j + 1) for j, p in enumerate(parents) if p >= 0]


def frame_file(split: str, sequence_id: str, video_id: str, frame: int, encoder: str = "png") -> str:
    return str(PurePosixPath(split, sequence_id, video_id, f"{frame:06d}{frame_extension(encoder)}"))


def manifest_path(output: Path, split: str) -> Path:
    return Path(output) / ANNOTATIONS_DIR / f"person_keypoints_{split}.json"


def _video_json(video_number: int, record) -> dict:
    return {
        "id": video_number,
        "name": record.video_id,
        "sequence_id": record.sequence_id,
        "subject": record.subject,
        "start_frame": record.start_frame,
        "end_frame": record.end_frame,
        "num_frames": record.num_frames,
        "status": record.status,
        "blanket_color": [float(c) for c in record.albedo],
        "seed": record.seed,
    }


def write_manifest(fragments: Iterable[ManifestFragment], output: Path) -> Dict[str, Path]:
    """
    One COCO-style keypoint manifest per split. Videos without frames are
    left out (they only appear in the run summary).
    """
    fragments = sorted(fragments, key=lambda fr: (fr.sequence_id, fr.subject))
    seen = set()
    for fragment in fragments:
        for video in fragment.videos:
            if video.record.video_id in seen:
                raise RejectedInputError(f"Duplicate video id '{video.record.video_id}'")
            seen.add(video.record.video_id)

    names, skeleton = SMPL_JOINT_NAMES, []
    if fragments:
        names, skeleton = fragments[0].keypoint_names, fragments[0].skeleton

    paths = {}
    for split in SPLITS:
        videos, images, annotations = [], [], []
        for fragment in (fr for fr in fragments if fr.split == split):
            for video in fragment.videos:
                if not video.frames:
                    continue
                video_number = len(videos) + 1
                videos.append(_video_json(video_number, video.record))
                for entry in video.frames:
                    image_id = len(images) + 1
                    images.append({
                        "id": image_id,
                        "file_name": entry.file_name,
                        "video_id": video_number,
                        "frame_index": entry.frame_index,
                        "width": entry.width,
                        "height": entry.height,
                    })
                    for ann in entry.annotations:
                        annotations.append({"id": len(annotations) + 1, "image_id": image_id,
                                            "category_id": PERSON_CATEGORY, **ann})
        manifest = {
            "info": {"schema_version": SCHEMA_VERSION, "split": split,
                     "description": "Pose sequences with a simulated blanket over one subject"},
            "categories": [{
                "id": PERSON_CATEGORY, "name": "person", "supercategory": "person",
                "keypoints": list(names), "skeleton": [list(e) for e in skeleton],
            }],
            "videos": videos,
            "images": images,
            "annotations": annotations,
        }
        path = manifest_path(output, split)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        paths[split] = path
    return paths


def load_manifest(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    version = manifest.get("info", {}).get("schema_version")
    if version != SCHEMA_VERSION:
        raise RejectedInputError(f"Unsupported manifest schema '{version}' in {path}")
    return manifest


def write_summary(records: Sequence, output: Path) -> Path:
    path = Path(output) / SUMMARY_FILE
    rows = [r.to_row() for r in records]
    df = pd.DataFrame(rows)
    if not df.empty:
        df = df.sort_values(["sequence_id", "subject", "start_frame"]).reset_index(drop=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path


def write_run_config(config, output: Path) -> Path:
    path = Path(output) / CONFIG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_env_text(), encoding="utf-8")
    return path


def audit(output: Path) -> pd.DataFrame:
    """
    Check the manifests against the frame files on disk. Returns one row per
    problem (columns: split, issue, path); an empty table means every manifest
    image maps to exactly one file and every frame file is listed.
    """
    output = Path(output)
    issues = []
    for split in SPLITS:
        path = manifest_path(output, split)
        listed = set()
        if path.exists():
            manifest = load_manifest(path)
            videos = {v["id"]: v for v in manifest["videos"]}
            counts = {v_id: 0 for v_id in videos}
            for image in manifest["images"]:
                name = image["file_name"]
                if name in listed:
                    issues.append((split, "duplicate_entry", name))
                listed.add(name)
                parts = PurePosixPath(name).parts
                video = videos.get(image["video_id"])
                if video is None:
                    issues.append((split, "unknown_video", name))
                    continue
                counts[image["video_id"]] += 1
                expected = (split, video["sequence_id"], video["name"])
                if len(parts) != 4 or parts[:3] != expected or not parts[3].startswith(f"{image['frame_index']:06d}."):
                    issues.append((split, "bad_layout", name))
                if not (output / name).is_file():
                    issues.append((split, "missing_file", name))
            for v_id, video in videos.items():
                if counts[v_id] != video["num_frames"]:
                    issues.append((split, "frame_count", video["name"]))
        split_dir = output / split
        if split_dir.exists():
            for file in sorted(p for p in split_dir.rglob("*") if p.is_file()):
                name = file.relative_to(output).as_posix()
                if name not in listed:
                    issues.append((split, "unlisted_file", name))
    return pd.DataFrame(issues, columns=["split", "issue", "path"])
