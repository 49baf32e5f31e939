"""
Generation driver.

For every (sequence, subject) family: pick a segment start, set up the bed
and blanket on that frame's body, warm the cloth up, then simulate, render
and write one frame per video frame until the blanket slides off, the
solver fails or the sequence ends. Restarts follow the minimum start gap.
"""
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from body_model import BodyTemplate, PoseParams, SkinnedMesh, load_body_model, pose_mesh
from cloth_sim import ClothSimulator, SimParams, is_detached
from config import GenerationConfig
from dataset_writer import (FrameEntry, ManifestFragment, VideoEntry, frame_file, keypoint_names,
                            skeleton_edges, write_manifest, write_run_config, write_summary)
from errors import ConfigError, SimulationFailure, SimulationInputError
from render_composite import (BlanketMaterial, blanket_rng, composite_frame, encode_frame, render_mesh,
                              sample_blanket_color)
from scene_setup import (BedFrame, BlanketPlacement, CameraModel, DirectionalLight, SceneConfig, bed_mesh,
                         build_bed_frame, farthest_vertex, init_blanket_placement, project_points,
                         recenter_subject, sun_light)
from sequence_io import DESCRIPTOR, SequenceInput, ingest_sequence
from telemetry import TelemetryRecorder
from utils import banner, log, warn

COMPLETED, DETACHED, SIM_ERROR = "completed", "detached", "sim_error"
TELEMETRY_DIR = "telemetry"


class Simulator(Protocol):
    def start(self, placement: BlanketPlacement, bed: BedFrame, body_vertices: np.ndarray,
              body_faces: np.ndarray, start_frame: int = 0) -> None: ...

    def advance(self, frame: int, body_vertices: np.ndarray) -> float: ...

    def blanket_grid(self) -> np.ndarray: ...

    def close(self) -> None: ...


SimulatorFactory = Callable[[BedFrame, str], Simulator]


@dataclass
class SegmentRecord:
    video_id: str
    sequence_id: str
    split: str
    subject: int
    ordinal: int
    start_frame: int
    end_frame: int
    status: str
    albedo: Tuple[float, float, float]
    seed: int
    num_frames: int = 0
    last_distance: Optional[float] = None
    message: str = ""

    def to_row(self) -> dict:
        return {
            "video_id": self.video_id, "sequence_id": self.sequence_id, "split": self.split,
            "subject": self.subject, "ordinal": self.ordinal, "start_frame": self.start_frame,
            "end_frame": self.end_frame, "num_frames": self.num_frames, "status": self.status,
            "color_r": self.albedo[0], "color_g": self.albedo[1], "color_b": self.albedo[2],
            "seed": self.seed, "last_distance": self.last_distance, "message": self.message,
        }


@dataclass
class FrameContext:
    record: SegmentRecord
    frame: int
    camera: CameraModel
    body: SkinnedMesh
    bed: BedFrame
    blanket_grid: np.ndarray
    material: BlanketMaterial
    light: DirectionalLight
    distance: float


@dataclass
class GenerationResult:
    records: List[SegmentRecord] = field(default_factory=list)
    failed_jobs: List[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.failed_jobs else 0

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_row() for r in self.records])


def make_video_id(sequence_id: str, subject: int, ordinal: int) -> str:
    return f"{sequence_id}_subject{subject}_{ordinal:03d}"


def next_start(failed_frame: int, start: int, min_restart_gap: int) -> int:
    """Restart no earlier than min_restart_gap after the previous start, and after the failing frame."""
    return max(failed_frame + 1, start + min_restart_gap)


def pose_frame(seq: SequenceInput, template: BodyTemplate, subject: int, frame: int,
               pose_blendshapes: bool = True) -> Tuple[SkinnedMesh, CameraModel]:
    """Body at the origin and the camera moved to keep every camera-frame coordinate."""
    pose = PoseParams(seq.poses[subject, frame])
    body = pose_mesh(template, seq.shape(subject), pose, pose_blendshapes=pose_blendshapes)
    camera = recenter_subject(seq.translations[subject, frame], seq.camera(frame))
    return body, camera


def default_simulator_factory(config: GenerationConfig, frame_rate: float,
                              telemetry_dir: Path = None) -> SimulatorFactory:
    blanket_size = (config.blanket_width, config.blanket_length)

    def factory(bed: BedFrame, video_id: str) -> ClothSimulator:
        params = SimParams.from_generation_config(config, frame_rate, gravity_direction=bed.a1)
        telemetry = None
        if telemetry_dir is not None:
            telemetry = TelemetryRecorder(Path(telemetry_dir) / f"{video_id}.tsv")
        return ClothSimulator(params, config.grid_res, blanket_size, config.blanket_mass, config.margin,
                              warmup_frames=config.warmup, telemetry=telemetry)

    return factory


def _run_segment(seq: SequenceInput, subject: int, template: BodyTemplate, config: GenerationConfig,
                 scene: SceneConfig, start: int, ordinal: int, factory: SimulatorFactory,
                 on_frame: Callable[[FrameContext], None] = None, progress: tqdm = None):
    """Run one segment; returns (record, failing frame or None when the sequence ran out)."""
    video_id = make_video_id(seq.sequence_id, subject, ordinal)
    rng = blanket_rng(config.seed, seq.sequence_id, subject, ordinal)
    material = sample_blanket_color(rng)
    record = SegmentRecord(
        video_id=video_id, sequence_id=seq.sequence_id, split=seq.split, subject=subject, ordinal=ordinal,
        start_frame=start, end_frame=start, status=COMPLETED, albedo=material.albedo, seed=config.seed,
    )

    simulator = None
    try:
        body, camera = pose_frame(seq, template, subject, start, config.pose_blendshapes)
        far_index, _ = farthest_vertex(body.vertices, camera)
        bed = build_bed_frame(body.vertices[far_index], camera, scene, body.vertices)
        placement = init_blanket_placement(bed, body.vertices, scene)
        light = sun_light(scene, bed)
        simulator = factory(bed, video_id)
        simulator.start(placement, bed, body.vertices, body.faces, start)

        for f in range(start, seq.num_frames):
            if f != start:
                body, camera = pose_frame(seq, template, subject, f, config.pose_blendshapes)
            distance = simulator.advance(f, body.vertices)
            record.end_frame = f
            record.num_frames += 1
            record.last_distance = float(distance)
            if on_frame is not None:
                on_frame(FrameContext(record, f, camera, body, bed, simulator.blanket_grid(), material, light,
                                      float(distance)))
            if progress is not None:
                progress.update(1)
            if is_detached(distance, config.detach_threshold):
                record.status = DETACHED
                return record, f
    except (SimulationFailure, SimulationInputError) as e:
        failed = start + record.num_frames
        record.status = SIM_ERROR
        record.message = str(e)
        warn(f"{video_id}: simulation failed at frame {failed}: {e}")
        return record, failed
    finally:
        if simulator is not None:
            simulator.close()
    return record, None


def generate_segments(seq: SequenceInput, subject: int, template: BodyTemplate, config: GenerationConfig,
                      simulator_factory: SimulatorFactory = None,
                      on_frame: Callable[[FrameContext], None] = None, show_progress: bool = False) -> List[SegmentRecord]:
    """
    Segment schedule for one subject. Every video frame lands in at most one
    segment; warm-up frames are never emitted.
    """
    if not 0 <= subject < seq.num_subjects:
        raise ValueError(f"Subject {subject} out of range for {seq.num_subjects} subject(s)")
    scene = SceneConfig.from_generation_config(config)
    factory = simulator_factory or default_simulator_factory(config, seq.frame_rate)
    records = []
    start, ordinal = 0, 0
    with tqdm(total=seq.num_frames, desc=f"{seq.sequence_id}/subject{subject}", leave=False,
              disable=not show_progress) as progress:
        while start < seq.num_frames:
            record, failed = _run_segment(seq, subject, template, config, scene, start, ordinal, factory,
                                          on_frame, progress)
            records.append(record)
            if failed is None:
                break
            start = next_start(failed, start, config.min_restart_gap)
            ordinal += 1
    return records


def frame_annotations(seq: SequenceInput, template: BodyTemplate, ctx: FrameContext, blanketed: int,
                      pose_blendshapes: bool = True) -> List[dict]:
    """Keypoint annotations of every subject in the frame; only `blanketed` is flagged occluded."""
    width, height = seq.intrinsics.width, seq.intrinsics.height
    annotations = []
    for subject in range(seq.num_subjects):
        if subject == blanketed:
            body, camera = ctx.body, ctx.camera
        else:
            body, camera = pose_frame(seq, template, subject, ctx.frame, pose_blendshapes)
        uv, _, valid = project_points(camera, body.joints)
        inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
        keypoints = []
        for j in range(body.joints.shape[0]):
            if valid[j]:
                keypoints += [float(uv[j, 0]), float(uv[j, 1]), 2 if inside[j] else 1]
            else:
                keypoints += [0.0, 0.0, 0]

        vert_uv, _, vert_valid = project_points(camera, body.vertices)
        if vert_valid.any():
            lo = np.clip(vert_uv[vert_valid].min(axis=0), 0, [width, height])
            hi = np.clip(vert_uv[vert_valid].max(axis=0), 0, [width, height])
            bbox = [float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])]
        else:
            bbox = [0.0, 0.0, 0.0, 0.0]

        annotations.append({
            "subject": subject,
            "keypoints": keypoints,
            "num_keypoints": int(inside.sum()),
            "keypoints_3d": [float(c) for c in camera.to_camera(body.joints).ravel()],
            "blanket_occluded": subject == blanketed,
            "bbox": bbox,
            "area": bbox[2] * bbox[3],
            "iscrowd": 0,
        })
    return annotations


def resolve_template(seq: SequenceInput, config: GenerationConfig) -> BodyTemplate:
    path = Path(config.body_model) if config.body_model else seq.body_model_path()
    if path is None:
        raise ConfigError(f"No body model for sequence '{seq.sequence_id}': set body_model or --body-model")
    return load_body_model(path)


def run_video(seq: SequenceInput, subject: int, output: Path, config: GenerationConfig,
              template: BodyTemplate = None, simulator_factory: SimulatorFactory = None,
              show_progress: bool = False) -> ManifestFragment:
    """Generate, render and write the video family that puts the blanket over `subject`."""
    output = Path(output)
    template = template if template is not None else resolve_template(seq, config)
    if simulator_factory is None:
        telemetry_dir = output / TELEMETRY_DIR if config.telemetry else None
        simulator_factory = default_simulator_factory(config, seq.frame_rate, telemetry_dir)

    fragment = ManifestFragment(
        sequence_id=seq.sequence_id, split=seq.split, subject=subject,
        keypoint_names=keypoint_names(template.num_joints), skeleton=skeleton_edges(template.parents),
    )
    videos = {}

    def write_frame(ctx: FrameContext) -> None:
        record = ctx.record
        if record.video_id not in videos:
            videos[record.video_id] = VideoEntry(record=record)
            fragment.videos.append(videos[record.video_id])
        blanket = render_mesh(ctx.blanket_grid, config.render_subdivisions)
        holdouts = [(ctx.body.vertices, ctx.body.faces), bed_mesh(ctx.bed)]
        image = composite_frame(blanket, holdouts, ctx.material, ctx.light, ctx.camera, seq.load_frame(ctx.frame),
                                ambient=config.ambient, supersample=config.supersample)
        name = frame_file(seq.split, seq.sequence_id, record.video_id, ctx.frame, config.encoder)
        encode_frame(image, output / name, config.encoder, config.jpeg_quality)
        videos[record.video_id].frames.append(FrameEntry(
            frame_index=ctx.frame, file_name=name, width=seq.intrinsics.width, height=seq.intrinsics.height,
            annotations=frame_annotations(seq, template, ctx, subject, config.pose_blendshapes),
        ))

    records = generate_segments(seq, subject, template, config, simulator_factory, write_frame, show_progress)
    for record in records:
        if record.video_id not in videos:
            fragment.videos.append(VideoEntry(record=record))
    fragment.videos.sort(key=lambda v: v.record.ordinal)
    return fragment


def discover_sequences(input_path: Path) -> List[Path]:
    """A sequence directory, or a directory of sequence directories."""
    input_path = Path(input_path)
    if (input_path / DESCRIPTOR).exists():
        return [input_path]
    if not input_path.is_dir():
        raise FileNotFoundError(f"Input not found: {input_path}")
    found = sorted(p.parent for p in input_path.glob(f"*/{DESCRIPTOR}"))
    if not found:
        raise FileNotFoundError(f"No {DESCRIPTOR} under {input_path}")
    return found


def _family_job(sequence_dir: str, subject: int, output: str, config: GenerationConfig,
                show_progress: bool) -> ManifestFragment:
    seq = ingest_sequence(Path(sequence_dir))
    return run_video(seq, subject, Path(output), config, show_progress=show_progress)


def print_summary(result: GenerationResult) -> None:
    banner("📊 Execution Summary")
    frames = 0
    for record in result.records:
        glyph = {COMPLETED: "✓", DETACHED: "ℹ", SIM_ERROR: "✗"}[record.status]
        log(f"{glyph} {record.video_id}: {record.status}, frames {record.start_frame}-{record.end_frame} "
            f"({record.num_frames:,} frames)")
        frames += record.num_frames
    videos = sum(1 for r in result.records if r.num_frames > 0)
    restarts = sum(1 for r in result.records if r.status == DETACHED)
    failures = sum(1 for r in result.records if r.status == SIM_ERROR)
    log(f"\nGenerated videos: {videos:,}")
    log(f"Generated frames: {frames:,}")
    log(f"Detach restarts: {restarts:,}")
    log(f"Simulation failures: {failures:,}")
    for job in result.failed_jobs:
        log(f"❌ Job failed: {job}")


def run_generation(input_path: Path, output: Path, config: GenerationConfig, show_progress: bool = True) -> GenerationResult:
    """Generate every family under input_path into output and write manifests and run summaries."""
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    jobs = []
    for sequence_dir in discover_sequences(input_path):
        seq = ingest_sequence(sequence_dir)
        log(f"✓ {seq.sequence_id}: {seq.num_frames:,} frames, {seq.num_subjects} subject(s), split '{seq.split}'")
        jobs.extend((str(sequence_dir), seq.sequence_id, subject) for subject in range(seq.num_subjects))
    log(f"ℹ {len(jobs)} video families, {config.jobs} worker(s)")

    fragments = {}
    result = GenerationResult()
    if config.jobs == 1:
        for sequence_dir, sequence_id, subject in jobs:
            try:
                fragments[(sequence_id, subject)] = _family_job(sequence_dir, subject, str(output), config,
                                                                show_progress)
            except Exception as e:
                log(f"❌ {sequence_id}/subject{subject}: {e}")
                result.failed_jobs.append(f"{sequence_id}/subject{subject}")
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = {
                pool.submit(_family_job, sequence_dir, subject, str(output), config, False): (sequence_id, subject)
                for sequence_dir, sequence_id, subject in jobs
            }
            for future in as_completed(futures):
                sequence_id, subject = futures[future]
                try:
                    fragments[(sequence_id, subject)] = future.result()
                    log(f"✓ {sequence_id}/subject{subject} done")
                except Exception as e:
                    log(f"❌ {sequence_id}/subject{subject}: {e}")
                    result.failed_jobs.append(f"{sequence_id}/subject{subject}")

    ordered = [fragments[key] for key in sorted(fragments)]
    for fragment in ordered:
        result.records.extend(fragment.records)
    result.failed_jobs.sort()

    for split, path in write_manifest(ordered, output).items():
        log(f"✓ Manifest ({split}): {path}")
    log(f"✓ Summary: {write_summary(result.records, output)}")
    log(f"✓ Config: {write_run_config(config, output)}")
    print_summary(result)
    return result
