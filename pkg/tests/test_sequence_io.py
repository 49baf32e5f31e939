import json

import numpy as np
import pytest

from errors import IngestionError
from sequence_io import DESCRIPTOR, ingest_sequence, write_sequence
from toy_data import toy_frames


def _rewrite_array(root, name, values):
    values = np.ascontiguousarray(values, dtype="<f4")
    values.tofile(root / f"{name}.bin")
    meta = json.loads((root / DESCRIPTOR).read_text(encoding="utf-8"))
    meta["arrays"][name]["shape"] = list(values.shape)
    (root / DESCRIPTOR).write_text(json.dumps(meta), encoding="utf-8")


def test_round_trip(toy_sequence):
    seq = ingest_sequence(toy_sequence.root)
    assert seq.sequence_id == "toy"
    assert seq.num_frames == 12 and seq.num_subjects == 1
    for name in ("poses", "translations", "betas", "camera_rotations", "camera_translations"):
        np.testing.assert_array_equal(getattr(seq, name), getattr(toy_sequence, name))
    assert seq.intrinsics == toy_sequence.intrinsics
    assert np.array_equal(seq.load_frame(3), toy_frames(12)[3])
    assert seq.body_model_path() == (toy_sequence.root / "body_model").resolve()


def test_copy_keeps_frames(toy_sequence, tmp_path):
    copy = write_sequence(ingest_sequence(toy_sequence.root), tmp_path / "copy")
    seq = ingest_sequence(copy)
    assert np.array_equal(seq.load_frame(11), toy_sequence.load_frame(11))


def test_length_mismatch_names_both_lengths(toy_sequence):
    _rewrite_array(toy_sequence.root, "translations", toy_sequence.translations[:, :11])
    with pytest.raises(IngestionError) as excinfo:
        ingest_sequence(toy_sequence.root)
    assert excinfo.value.field == "translations"
    assert "11" in str(excinfo.value) and "12" in str(excinfo.value)


def test_non_finite_value_names_field_and_frame(toy_sequence):
    poses = toy_sequence.poses.copy()
    poses[0, 5, 2, 1] = np.nan
    _rewrite_array(toy_sequence.root, "poses", poses)
    with pytest.raises(IngestionError) as excinfo:
        ingest_sequence(toy_sequence.root)
    assert excinfo.value.field == "poses"
    assert excinfo.value.frame == 5
    assert "frame 5" in str(excinfo.value)


def test_improper_camera_rotation(toy_sequence):
    rotations = toy_sequence.camera_rotations.copy()
    rotations[7] = np.diag([1.0, 1.0, -1.0])
    _rewrite_array(toy_sequence.root, "camera_rotations", rotations)
    with pytest.raises(IngestionError) as excinfo:
        ingest_sequence(toy_sequence.root)
    assert excinfo.value.frame == 7


def test_missing_frame_file(toy_sequence):
    toy_sequence.frame_path(4).unlink()
    with pytest.raises(IngestionError) as excinfo:
        ingest_sequence(toy_sequence.root)
    assert excinfo.value.field == "frames"
    assert excinfo.value.frame == 4


def test_unknown_split(toy_sequence):
    meta = json.loads((toy_sequence.root / DESCRIPTOR).read_text(encoding="utf-8"))
    meta["split"] = "holdout"
    (toy_sequence.root / DESCRIPTOR).write_text(json.dumps(meta), encoding="utf-8")
    with pytest.raises(IngestionError):
        ingest_sequence(toy_sequence.root)


def test_missing_descriptor(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_sequence(tmp_path)
