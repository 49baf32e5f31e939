import numpy as np
import pandas as pd
import pytest
from scipy.spatial.transform import Rotation

from errors import EmptySelectionError, MetricError
from eval_metrics import (
    JOINT_SUBSET_14, SimilarityTransform, aggregate, evaluate, load_predictions, mpjpe, pa_mpjpe, procrustes_align, select_joints,
    write_predictions,
)


def _similar(points, rng):
    scale = rng.uniform(0.3, 3.0)
    rotation = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
    return scale * points @ rotation.T + rng.normal(size=3)


def _residual(transform, pred, gt):
    return float(np.sum((transform.apply(pred) - gt) ** 2))


def _manifest(joints_3d, frames=10):
    """One video, two subjects per frame; subject 0 is under the blanket."""
    images, annotations = [], []
    for f in range(frames):
        images.append({"id": f + 1, "video_id": 1, "frame_index": f})
        for s in range(2):
            annotations.append({"id": len(annotations) + 1, "image_id": f + 1, "subject": s,
                                "blanket_occluded": s == 0, "keypoints_3d": joints_3d[f, s].ravel().tolist()})
    return {"videos": [{"id": 1, "name": "v_subject0_000"}], "images": images, "annotations": annotations}


def test_identical_sets():
    gt = np.random.default_rng(0).normal(size=(24, 3))
    transform = procrustes_align(gt, gt)
    assert transform.scale == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(transform.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(transform.translation, 0.0, atol=1e-9)
    assert pa_mpjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    assert mpjpe(gt, gt) == 0.0


def test_exact_similarity_recovery(rng):
    gt = rng.normal(size=(14, 3))
    r0 = Rotation.random(random_state=4).as_matrix()
    t0 = np.array([0.2, -0.5, 1.0])
    pred = 2.0 * gt @ r0.T + t0
    transform = procrustes_align(pred, gt)
    assert transform.scale == pytest.approx(0.5)
    np.testing.assert_allclose(transform.rotation, r0.T, atol=1e-9)
    np.testing.assert_allclose(transform.apply(pred), gt, atol=1e-9)


def test_similarity_transforms_score_zero(rng):
    for _ in range(1000):
        gt = rng.normal(size=(24, 3))
        assert pa_mpjpe(_similar(gt, rng), gt) < 1e-6


def test_alignment_is_invariant_and_optimal(rng):
    for _ in range(100):
        gt = rng.normal(size=(24, 3))
        pred = gt + rng.normal(scale=0.05, size=gt.shape)
        moved = _similar(pred, rng)
        assert pa_mpjpe(moved, gt) == pytest.approx(pa_mpjpe(pred, gt), abs=1e-9)
        assert pa_mpjpe(moved, gt) <= mpjpe(moved, gt) + 1e-9

        optimal = procrustes_align(pred, gt)
        best = _residual(optimal, pred, gt)
        for _ in range(100):
            other = SimilarityTransform(
                optimal.scale * rng.uniform(0.9, 1.1),
                Rotation.from_rotvec(rng.normal(scale=0.1, size=3)).as_matrix() @ optimal.rotation,
                optimal.translation + rng.normal(scale=0.01, size=3),
            )
            assert best <= _residual(other, pred, gt) + 1e-12


def test_reflection_is_never_returned(rng):
    gt = rng.normal(size=(10, 3))
    mirrored = gt * np.array([-1.0, 1.0, 1.0])
    rotation = procrustes_align(mirrored, gt).rotation
    assert np.linalg.det(rotation) == pytest.approx(1.0)
    # planar input has a rank-deficient covariance
    planar = gt.copy()
    planar[:, 2] = 0.0
    assert np.linalg.det(procrustes_align(planar, planar).rotation) == pytest.approx(1.0)


def test_uniform_offset_mpjpe():
    gt = np.zeros((5, 3))
    assert mpjpe(gt + np.array([0.006, 0.0, 0.008]), gt) == pytest.approx(10.0)


@pytest.mark.parametrize("num_joints", [14, 24])
def test_one_displaced_joint_mpjpe(rng, num_joints):
    gt = rng.normal(size=(num_joints, 3))
    pred = gt.copy()
    pred[3] += np.array([0.0, 0.012, 0.0])
    assert mpjpe(pred, gt) == pytest.approx(12.0 / num_joints)


def test_degenerate_inputs_are_rejected():
    with pytest.raises(MetricError):
        procrustes_align(np.random.default_rng(0).normal(size=(5, 3)), np.ones((5, 3)))
    with pytest.raises(MetricError):
        pa_mpjpe(np.zeros((2, 3)), np.eye(3)[:2])
    with pytest.raises(MetricError):
        pa_mpjpe(np.zeros((4, 3)), np.zeros((5, 3)))


def test_aggregate_filters_unoccluded_subjects(rng):
    manifest = _manifest(rng.normal(size=(10, 2, 24, 3)))
    rows = [{"video_id": "v_subject0_000", "frame_index": f, "subject": s, "pa_mpjpe": 10.0 * s + f}
            for f in range(10) for s in range(2)]
    values = pd.DataFrame(rows)
    assert aggregate(values, manifest, "occluded") == pytest.approx(np.mean(np.arange(10)))
    assert aggregate(values, manifest, "all") == pytest.approx(np.mean([10.0 * s + f for f in range(10) for s in range(2)]))

    only_visible = values[values["subject"] == 1]
    with pytest.raises(EmptySelectionError):
        aggregate(only_visible, manifest, "occluded")


def test_evaluate_with_stored_predictions(rng, tmp_path):
    gt = rng.normal(size=(10, 2, 24, 3))
    manifest = _manifest(gt)
    entries = pd.DataFrame([{"video_id": "v_subject0_000", "frame_index": f, "subject": s}
                            for f in range(10) for s in range(2)])
    # occluded subject predicted up to a similarity, the visible one off by 1 cm everywhere
    joints = np.stack([np.stack([_similar(gt[f, 0], rng), gt[f, 1] + 0.01]) for f in range(10)]).reshape(-1, 24, 3)

    loaded_entries, loaded = load_predictions(write_predictions(tmp_path / "pred", entries, joints))
    assert loaded_entries.equals(entries)
    np.testing.assert_allclose(loaded, joints, atol=1e-5)

    occluded = evaluate(entries, joints, manifest, filter="occluded")
    assert occluded.pa_mpjpe < 0.01
    assert len(occluded.table) == 20

    everything = evaluate(entries, joints, manifest, filter="all", joint_set="subset14")
    visible = everything.table[everything.table["subject"] == 1]
    np.testing.assert_allclose(visible["mpjpe"], 10.0 * np.sqrt(3.0), atol=1e-6)
    assert everything.pa_mpjpe < 0.01


def test_joint_subset():
    joints = np.arange(24 * 3, dtype=np.float64).reshape(24, 3)
    subset = select_joints(joints, "subset14")
    assert subset.shape == (14, 3)
    np.testing.assert_array_equal(subset[0], joints[JOINT_SUBSET_14[0]])
    with pytest.raises(MetricError):
        select_joints(joints[:10], "subset14")
