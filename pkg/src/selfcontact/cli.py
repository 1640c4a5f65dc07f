"""``selfcontact`` command line: synth, detect, refine and eval stages.

Exit codes: 0 success, 2 input or parse error, 3 numerical failure, 4 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import io, synth
from .detection import DetectorConfig, align_to_frames, detect_contacts
from .errors import (BehindCamera, ConfigError, DegenerateAlignment, InputError, InsufficientData,
                     ModelMismatch, ScriptInfeasible, ThresholdUndefined)
from .metrics import evaluate_sequence
from .optimizer import RefinementConfig, refine_sequence
from .smoothing import OneEuroParams, smooth_poses
from .template import DEFAULT_SPACING, default_model

log = logging.getLogger("selfcontact")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4


def _detector_config(cfg):
    try:
        return DetectorConfig(**cfg.get("detector", {}))
    except TypeError as exc:
        raise ConfigError(f"detector settings: {exc}") from exc


def _run_setting(args, cfg, name, default):
    val = getattr(args, name, None)
    return val if val is not None else cfg.get("run", {}).get(name, default)


# -- stages ------------------------------------------------------------------------------

def cmd_synth(args, cfg):
    seed = int(_run_setting(args, cfg, "seed", 0))
    if args.script:
        spec = io.read_json(args.script)
        try:
            spec = dict(spec, seed=seed) if args.seed is not None else spec
            script = synth.MotionScript(**spec)
        except TypeError as exc:
            raise ConfigError(f"motion script: {exc}") from exc
    else:
        script = synth.random_motion_script(seed, n_frames=args.n_frames)
    model = default_model()
    sample = synth.gen_motion(script, model)
    trace, truth = synth.gen_signal(synth.signal_for_motion(script))
    truth_doc = {
        "contact_flags": [bool(f) for f in sample.contact_flags],
        "signal_intervals": [{"onset_s": a, "offset_s": b} for a, b in truth.intervals],
        "events": sample.contact_meta,
        "script": script.to_dict(),
    }
    with io.OutputDir(args.out) as out:
        out.write("trace.csv", io.trace_csv_text(trace))
        out.write("poses.json", io.dump_json(io.poses_to_json(sample.perturbed)))
        out.write("gt_poses.json", io.dump_json(io.poses_to_json(sample.gt)))
        out.write("keypoints.json", io.dump_json(io.keypoints_to_json(sample.keypoints)))
        out.write("camera.json", io.dump_json(sample.camera.to_dict()))
        out.write("model.json", io.dump_json(io.model_reference(DEFAULT_SPACING)))
        out.write("truth.json", io.dump_json(truth_doc))
    log.info("synthesised %d frames into %s", script.n_frames, args.out)


def _detect(trace, cfg, n_frames=None, frame_times=None):
    dcfg = _detector_config(cfg)
    timeline = detect_contacts(trace, dcfg, n_frames)
    if frame_times is not None:
        timeline.frame_flags = align_to_frames(timeline.intervals, frame_times)
    return timeline


def cmd_detect(args, cfg):
    trace = io.read_trace_csv(args.signal)
    times = io.read_frame_times(args.frame_times) if args.frame_times else None
    timeline = _detect(trace, cfg, args.n_frames, times)
    with io.OutputDir(args.out) as out:
        out.write("timeline.json", io.dump_json(timeline.to_dict()))
        out.write("signal.svg", io.signal_svg(trace, timeline))
    log.info("%d contact intervals", len(timeline.intervals))


def cmd_refine(args, cfg):
    poses = io.read_poses(args.poses)
    keypoints = io.read_keypoints(args.keypoints)
    camera = io.read_camera(args.camera)
    model = io.read_model(args.model)
    if args.timeline:
        flags = io.read_timeline(args.timeline).frame_flags
    else:
        flags = _detect(io.read_trace_csv(args.signal), cfg, len(poses)).frame_flags
    if not (len(poses) == len(keypoints) == len(flags)):
        raise ConfigError(f"frame counts differ: {len(poses)} poses, {len(keypoints)} keypoint "
                          f"frames, {len(flags)} contact flags")
    try:
        rcfg = RefinementConfig.from_dict(cfg.get("refinement", {}))
    except TypeError as exc:
        raise ConfigError(f"refinement settings: {exc}") from exc
    threads = int(_run_setting(args, cfg, "threads", 1))
    result = refine_sequence(poses, flags, keypoints, camera, model, rcfg, threads=threads)
    refined = result.poses
    if _run_setting(args, cfg, "smooth", False):
        refined = smooth_poses(refined, OneEuroParams.from_dict(cfg.get("smoothing", {})))
    contact = [f for f in result.frames if f.converged is not None]
    diag = {
        "config": rcfg.to_dict(),
        "global_init": {"converged": result.init.converged, "cost": result.init.cost},
        "contact_frames": len(contact),
        "converged_frames": sum(bool(f.converged) for f in contact),
        "frames": [dict(f.diagnostics(), frame=k) for k, f in enumerate(result.frames)],
    }
    with io.OutputDir(args.out) as out:
        out.write("refined_poses.json", io.dump_json(io.poses_to_json(refined)))
        out.write("diagnostics.json", io.dump_json(diag))
    log.info("%d/%d contact frames converged", diag["converged_frames"], len(contact))


def cmd_eval(args, cfg):
    est = io.read_poses(args.est)
    gt = io.read_poses(args.gt)
    model = io.read_model(args.model)
    if len(est) != len(gt):
        raise ConfigError(f"estimate has {len(est)} frames, ground truth {len(gt)}")
    report = evaluate_sequence(est, gt, model)
    cols = ["frame", "gt_contact", "min_pair_mm", "mean_pair_mm", "pa_v2v_mm"]
    with io.OutputDir(args.out) as out:
        out.write("report.json", io.dump_json(report.to_dict()))
        out.write("frames.csv", io.table_csv_text(report.per_frame, cols))
        out.write("errors.svg", io.error_curve_svg(report.per_frame))
    log.info("detection rate %s%%, V-distance %s mm", report.detection_rate_percent,
             report.v_distance_mm)


# -- entry point ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="selfcontact", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON settings file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic contact sequence")
    common(p)
    p.add_argument("--script", help="motion script JSON (default: random script from the seed)")
    p.add_argument("--n-frames", type=int, default=90)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="impedance trace to contact timeline")
    common(p)
    p.add_argument("--signal", required=True, help="trace CSV (time_s, impedance_ohm)")
    p.add_argument("--frame-times", help="video frame timestamps, one per line")
    p.add_argument("--n-frames", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("refine", help="contact-aware arm refinement")
    common(p)
    p.add_argument("--poses", required=True)
    p.add_argument("--keypoints", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--timeline", help="timeline JSON from detect")
    src.add_argument("--signal", help="trace CSV; detected on the fly")
    p.add_argument("--smooth", action="store_true", default=None, help="OneEuro-smooth the output")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="metrics of an estimate against ground truth")
    common(p)
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--model")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = io.read_config(args.config)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScriptInfeasible as exc:
        print(f"error: ScriptInfeasible: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, InsufficientData, ModelMismatch, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BehindCamera, DegenerateAlignment, ThresholdUndefined, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
