import json

import numpy as np
import pytest

from dataset_writer import (
    FrameEntry, ManifestFragment, VideoEntry, audit, frame_file, keypoint_names, load_manifest, manifest_path,
    skeleton_edges, write_manifest, write_run_config, write_summary,
)
from config import GenerationConfig, read_config_file
from errors import RejectedInputError
from pipeline import COMPLETED, DETACHED, SegmentRecord
from render_composite import encode_frame


def _record(ordinal, start, frames, status=COMPLETED, subject=0, sequence_id="seq"):
    return SegmentRecord(
        video_id=f"{sequence_id}_subject{subject}_{ordinal:03d}", sequence_id=sequence_id, split="train",
        subject=subject, ordinal=ordinal, start_frame=start, end_frame=start + max(frames - 1, 0), status=status,
        albedo=(0.1, 0.2, 0.3), seed=0, num_frames=frames,
    )


def _fragment(output, records, write_files=True):
    fragment = ManifestFragment(sequence_id="seq", split="train", subject=0,
                                keypoint_names=keypoint_names(4), skeleton=skeleton_edges([-1, 0, 1, 2]))
    image = np.zeros((4, 4, 3), dtype=np.uint8)
    for record in records:
        video = VideoEntry(record=record)
        for f in range(record.start_frame, record.start_frame + record.num_frames):
            name = frame_file("train", "seq", record.video_id, f)
            if write_files:
                encode_frame(image, output / name)
            video.frames.append(FrameEntry(frame_index=f, file_name=name, width=4, height=4,
                                           annotations=[{"subject": 0, "blanket_occluded": True}]))
        fragment.videos.append(video)
    return fragment


def test_names_and_skeleton():
    assert keypoint_names(24)[0] == "pelvis"
    assert keypoint_names(3) == ("joint_0", "joint_1", "joint_2")
    assert skeleton_edges([-1, 0, 1, 1]) == [(1, 2), (2, 3), (2, 4)]
    assert frame_file("test", "s", "s_subject0_000", 7, "jpeg") == "test/s/s_subject0_000/000007.jpg"


def test_manifest_lists_every_frame(tmp_path):
    fragment = _fragment(tmp_path, [_record(0, 0, 3, DETACHED), _record(1, 48, 2)])
    paths = write_manifest([fragment], tmp_path)
    assert set(paths) == {"train", "test", "validation"}

    manifest = load_manifest(paths["train"])
    assert [v["name"] for v in manifest["videos"]] == ["seq_subject0_000", "seq_subject0_001"]
    assert [v["status"] for v in manifest["videos"]] == ["detached", "completed"]
    assert [i["frame_index"] for i in manifest["images"]] == [0, 1, 2, 48, 49]
    assert len({a["id"] for a in manifest["annotations"]}) == 5
    assert manifest["categories"][0]["skeleton"] == [[1, 2], [2, 3], [3, 4]]
    assert load_manifest(paths["test"])["images"] == []
    assert audit(tmp_path).empty


def test_duplicate_video_ids_are_rejected(tmp_path):
    fragment = _fragment(tmp_path, [_record(0, 0, 1), _record(0, 5, 1)], write_files=False)
    with pytest.raises(RejectedInputError):
        write_manifest([fragment], tmp_path)


def test_audit_reports_missing_and_unlisted_files(tmp_path):
    fragment = _fragment(tmp_path, [_record(0, 0, 3)])
    write_manifest([fragment], tmp_path)
    (tmp_path / frame_file("train", "seq", "seq_subject0_000", 1)).unlink()
    stray = tmp_path / "train" / "seq" / "seq_subject0_000" / "000009.png"
    encode_frame(np.zeros((4, 4, 3), dtype=np.uint8), stray)

    issues = audit(tmp_path)
    assert sorted(issues["issue"]) == ["missing_file", "unlisted_file"]
    assert issues.loc[issues["issue"] == "unlisted_file", "path"].item() == "train/seq/seq_subject0_000/000009.png"


def test_audit_checks_frame_counts(tmp_path):
    write_manifest([_fragment(tmp_path, [_record(0, 0, 2)])], tmp_path)
    path = manifest_path(tmp_path, "train")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    manifest["videos"][0]["num_frames"] = 5
    path.write_text(json.dumps(manifest), encoding="utf-8")
    assert audit(tmp_path)["issue"].tolist() == ["frame_count"]


def test_schema_version_is_checked(tmp_path):
    path = write_manifest([], tmp_path)["train"]
    manifest = json.loads(path.read_text(encoding="utf-8"))
    manifest["info"]["schema_version"] = "0.1"
    path.write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(RejectedInputError):
        load_manifest(path)


def test_summary_and_config_files(tmp_path):
    records = [_record(1, 48, 0), _record(0, 0, 3, DETACHED)]
    summary = write_summary(records, tmp_path)
    assert summary.read_text(encoding="utf-8").splitlines()[1].startswith("seq_subject0_000,")

    config = GenerationConfig(seed=3, sun_direction=(0.0, 0.0, 1.0))
    replayed = GenerationConfig().with_overrides(read_config_file(write_run_config(config, tmp_path)))
    assert replayed == config
