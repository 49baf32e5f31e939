"""
Blanket occlusion dataset generator.

Sub-commands:
    generate        simulate, render and write blanketed videos + manifests
    audit           check manifest entries against frame files
    evaluate        PA-MPJPE / MPJPE of predictions against a manifest
    make-toy        write a toy body model and toy sequences
    plot-telemetry  chart a per-segment telemetry file
"""
import argparse
import sys
from pathlib import Path
from dotenv import load_dotenv

SCRIPT_DIR = Path(__file__).parent / "service"
sys.path.insert(0, str(SCRIPT_DIR))

PROJECT_ROOT = Path(__file__).parent
load_dotenv(PROJECT_ROOT / ".env")

from config import load_config
from utils import banner, log

# CLI flag -> configuration key
GENERATE_FLAGS = {
    "seed": "seed",
    "grid_res": "grid_res",
    "substeps": "substeps",
    "collision_iters": "collision_iters",
    "margin": "margin",
    "warmup": "warmup",
    "min_restart_gap": "min_restart_gap",
    "detach_threshold": "detach_threshold",
    "encoder": "encoder",
    "jobs": "jobs",
    "body_model": "body_model",
}


def run_generate(args) -> int:
    from pipeline import run_generation

    overrides = {GENERATE_FLAGS[k]: getattr(args, k) for k in GENERATE_FLAGS}
    if args.telemetry:
        overrides["telemetry"] = True
    config = load_config(args.config, overrides)

    banner("Generating blanket-occluded videos", leading_newline=False)
    log(f"Input:  {args.input}")
    log(f"Output: {args.output}")
    log(f"Seed {config.seed}, grid {config.grid_res}x{config.grid_res}, {config.substeps} substeps, "
        f"{config.collision_iters} collision iterations, encoder {config.encoder}\n")
    try:
        result = run_generation(Path(args.input), Path(args.output), config, show_progress=not args.quiet)
    except Exception as e:
        log(f"❌ Generation failed: {e}")
        raise
    return result.exit_code


def run_audit(args) -> int:
    from dataset_writer import audit

    banner("Auditing output tree", leading_newline=False)
    try:
        issues = audit(Path(args.output))
    except Exception as e:
        log(f"❌ Audit failed: {e}")
        raise
    if issues.empty:
        log("✓ Manifest entries and frame files match one-to-one")
        return 0
    log(f"✗ {len(issues):,} problem(s) found:")
    log(issues.to_string(index=False))
    return 1


def run_evaluate(args) -> int:
    from dataset_writer import load_manifest
    from eval_metrics import evaluate, load_predictions

    banner("Evaluating predictions", leading_newline=False)
    try:
        entries, joints = load_predictions(Path(args.pred))
        manifest = load_manifest(Path(args.gt_manifest))
        result = evaluate(entries, joints, manifest, filter=args.filter, joint_set=args.joints)
    except Exception as e:
        log(f"❌ Evaluation failed: {e}")
        raise
    log(f"Pairs evaluated: {len(result.table):,} (filter: {result.filter}, joints: {args.joints})")
    log(f"PA-MPJPE: {result.pa_mpjpe:.2f} mm")
    log(f"MPJPE:    {result.mpjpe:.2f} mm")
    if args.table:
        result.table.to_csv(args.table, index=False)
        log(f"✓ Per-frame errors saved to {args.table}")
    return 0


def run_make_toy(args) -> int:
    from toy_data import make_toy_sequence

    banner("Writing toy sequences", leading_newline=False)
    root = Path(args.output)
    for subjects in args.subjects:
        sequence_id = f"toy_{subjects}subj"
        seq = make_toy_sequence(root / sequence_id, num_frames=args.frames, num_subjects=subjects,
                                seed=args.seed, sequence_id=sequence_id, split=args.split)
        log(f"✓ {seq.sequence_id}: {seq.num_frames} frames, {seq.num_subjects} subject(s) -> {seq.root}")
    return 0


def run_plot_telemetry(args) -> int:
    from telemetry import plot_telemetry

    output = Path(args.output) if args.output else Path(args.input).with_suffix(".html")
    path = plot_telemetry(Path(args.input), output, detach_threshold=args.detach_threshold)
    log(f"✓ Chart saved to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="main.py", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="Generate blanket-occluded videos")
    gen.add_argument("--input", required=True, help="Sequence directory or a directory of sequences")
    gen.add_argument("--output", required=True)
    gen.add_argument("--config", type=Path, help="Flat key=value file mirroring every setting")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--grid-res", dest="grid_res", type=int)
    gen.add_argument("--substeps", type=int)
    gen.add_argument("--collision-iters", dest="collision_iters", type=int)
    gen.add_argument("--margin", type=float)
    gen.add_argument("--warmup", type=int)
    gen.add_argument("--min-restart-gap", dest="min_restart_gap", type=int)
    gen.add_argument("--detach-threshold", dest="detach_threshold", type=float)
    gen.add_argument("--encoder", choices=("png", "jpeg"))
    gen.add_argument("--jobs", type=int)
    gen.add_argument("--body-model", dest="body_model", help="Body-model archive directory")
    gen.add_argument("--telemetry", action="store_true", help="Write per-segment telemetry TSV files")
    gen.add_argument("--quiet", action="store_true", help="No progress bars")
    gen.set_defaults(func=run_generate)

    aud = commands.add_parser("audit", help="Verify manifest entries against frame files")
    aud.add_argument("--output", required=True)
    aud.set_defaults(func=run_audit)

    ev = commands.add_parser("evaluate", help="PA-MPJPE / MPJPE against a manifest")
    ev.add_argument("--pred", required=True, help="Predictions directory (predictions.json + joints)")
    ev.add_argument("--gt-manifest", dest="gt_manifest", required=True)
    ev.add_argument("--filter", choices=("occluded", "all"), default="occluded")
    ev.add_argument("--joints", choices=("all", "subset14"), default="all")
    ev.add_argument("--table", help="Optional CSV for the per-frame errors")
    ev.set_defaults(func=run_evaluate)

    toy = commands.add_parser("make-toy", help="Write toy sequences with their own body model")
    toy.add_argument("--output", required=True)
    toy.add_argument("--frames", type=int, default=60)
    toy.add_argument("--subjects", type=int, nargs="+", default=[1, 2])
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--split", choices=("train", "test", "validation"), default="train")
    toy.set_defaults(func=run_make_toy)

    tel = commands.add_parser("plot-telemetry", help="Chart a telemetry TSV as HTML")
    tel.add_argument("--input", required=True)
    tel.add_argument("--output")
    tel.add_argument("--detach-threshold", dest="detach_threshold", type=float)
    tel.set_defaults(func=run_plot_telemetry)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception:
        return 1


if __name__ == "__main__":
    sys.exit(main())
