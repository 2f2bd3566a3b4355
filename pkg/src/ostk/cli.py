"""``ostk`` command line: simulate, calibrate, denoise, predict, evaluate,
benchmark.

Exit codes: 0 on success, 2 on configuration/usage errors, 3 on pipeline
errors. All randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import EstimatorConfig, estimate_matrix_sequence
from .core import TimeWindow, sight_partition, slice_window
from .denoising import DenoiserModel, make_denoiser
from .errors import ConfigError, OstkError, PipelineError, SchemaError
from .evaluation import WindowMetrics, aggregate
from .pipeline import (ExperimentConfig, experiment_config_from_dict,
                       run_benchmark, run_vpd_pipeline)
from .prediction import PredictorModel
from .scene_io import (load_matrix_sequence, load_model, load_scene,
                       write_matrix_sequence, write_report, write_scene)
from .simulate import generate_scene
from .pipeline import _sim_config_from_dict, MethodSpec


def _window(text: str) -> TimeWindow:
    try:
        t_s, t_e, t_p = (int(x) for x in text.split(","))
        return TimeWindow(t_s, t_e, t_p)
    except (ValueError, OstkError) as exc:
        raise ConfigError(f"bad --window {text!r} (expected t_s,t_e,t_p): {exc}")


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}")


def _denoiser_spec(text: str, window: TimeWindow):
    if text in ("identity", "kalman"):
        return make_denoiser(text)
    model = load_model(text)
    if not isinstance(model, DenoiserModel):
        raise ConfigError(f"{text}: not a denoiser model file")
    return make_denoiser(model)


def _cmd_simulate(args) -> int:
    cfg = _sim_config_from_dict(_load_json(args.config))
    scene = generate_scene(cfg, args.seed)
    write_scene(scene, args.out)
    print(f"wrote {args.out} ({scene.frame_count} frames, {len(scene.agents)} agents)")
    return 0


def _cmd_calibrate(args) -> int:
    scene = load_scene(args.scene)
    window = _window(args.window)
    cfg = EstimatorConfig(mode=args.mode, window_radius=args.radius,
                          robust=args.robust)
    mask = sight_partition(scene, window)
    seq, diags = estimate_matrix_sequence(scene, mask, window, cfg)
    write_matrix_sequence(seq, diags, args.out)
    worst = max((d.rms_reprojection for d in diags), default=float("nan"))
    print(f"wrote {args.out} ({len(seq)} matrices, worst frame RMS {worst:.4g} px)")
    return 0


def _cmd_denoise(args) -> int:
    scene = load_scene(args.scene)
    window = _window(args.window)
    if args.method == "model":
        if not args.model:
            raise ConfigError("--method model requires --model <file>")
        denoiser = _denoiser_spec(args.model, window)
    else:
        denoiser = _denoiser_spec(args.method, window)
    out = {"scene_id": scene.scene_id, "method": args.method,
           "window": [window.t_s, window.t_e, window.t_p], "agents": {}}
    for agent in scene.agents:
        obs = slice_window(agent.sensor_noisy, window, "observation")
        out["agents"][agent.agent_id] = denoiser(obs).points.tolist()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(out) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({len(out['agents'])} agents)")
    return 0


def _cmd_predict(args) -> int:
    scene = load_scene(args.scene)
    seq = load_matrix_sequence(args.matrices)
    window = seq.window
    denoiser = _denoiser_spec(args.denoiser, window)
    if args.predictor == "cv":
        predictor = "cv"
    else:
        predictor = load_model(args.predictor)
        if not isinstance(predictor, PredictorModel):
            raise ConfigError(f"{args.predictor}: not a predictor model file")
    cfg = ExperimentConfig(
        sources=(_dummy_source(),), methods=(MethodSpec(name="cli"),),
        window=window)
    output = run_vpd_pipeline(scene, cfg, denoiser=denoiser,
                              predictor=_cli_predictor(predictor, window),
                              matrices=(seq, ()))
    doc = {"scene_id": scene.scene_id,
           "window": [window.t_s, window.t_e, window.t_p], "agents": {}}
    for result in output.agents:
        doc["agents"][result.agent_id] = {
            "predicted": result.predicted.points.tolist(),
            "projected": result.projected.points.tolist(),
        }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({len(doc['agents'])} out-of-sight agents)")
    return 0


def _cli_predictor(spec, window: TimeWindow):
    from .prediction import make_predictor
    return make_predictor(spec, window.prediction_span)


def _dummy_source():
    from .pipeline import SceneSource
    return SceneSource("files", glob="*")


def _cmd_evaluate(args) -> int:
    scene = load_scene(args.scene)
    doc = _load_json(args.pred)
    window = TimeWindow(*doc["window"])
    windows = []
    for agent_id, payload in sorted(doc["agents"].items()):
        agent = scene.agent(agent_id)
        if agent.visual_gt_hidden is None:
            raise PipelineError("evaluation",
                                f"agent {agent_id!r} has no visual_gt_hidden")
        from .core import VisualTrajectory
        projected = VisualTrajectory.fully_present(
            window.observation_frames(), np.array(payload["projected"]))
        predicted = VisualTrajectory.fully_present(
            window.prediction_frames(), np.array(payload["predicted"]))
        gt_obs = slice_window(agent.visual_gt_hidden, window, "observation")
        gt_future = slice_window(agent.visual_gt_hidden, window, "prediction")
        from .evaluation import evaluate_window
        mse_d, mse_p, total = evaluate_window(projected, predicted, gt_obs, gt_future)
        windows.append(WindowMetrics(scene.scene_id, agent_id, mse_d, mse_p, total))
    report = aggregate(windows, fingerprint="", tool_version=__version__)
    write_report(report, args.out)
    print(f"SUM={report.sum:.4f} MSE-D={report.mse_d:.4f} MSE-P={report.mse_p:.4f}")
    return 0


def _cmd_benchmark(args) -> int:
    doc = _load_json(args.config)
    if args.seed is not None:
        doc["master_seed"] = args.seed
    cfg = experiment_config_from_dict(doc)
    result = run_benchmark(cfg, out_dir=args.out, jobs=args.jobs)
    for name, total, mse_d, mse_p in result.table:
        print(f"{name}: SUM={total:.4f} MSE-D={mse_d:.4f} MSE-P={mse_p:.4f}")
    for name, reason in sorted(result.failures.items()):
        print(f"{name}: FAILED ({reason})", file=sys.stderr)
    return 3 if result.failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ostk",
        description="Out-of-sight trajectory toolkit: simulate scenes, estimate "
                    "camera matrices, denoise sensor tracks, predict and score "
                    "pixel trajectories.")
    parser.add_argument("--version", action="version", version=f"ostk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene JSON")
    p.add_argument("--config", required=True, help="SimConfig JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate the camera matrix sequence")
    p.add_argument("--scene", required=True)
    p.add_argument("--window", required=True, help="t_s,t_e,t_p")
    p.add_argument("--mode", default="sliding_window",
                   choices=["stationary", "sliding_window"])
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--robust", default="none", choices=["none", "huber"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("denoise", help="denoise sensor observation windows")
    p.add_argument("--scene", required=True)
    p.add_argument("--method", required=True, choices=["kalman", "model", "identity"])
    p.add_argument("--model", help="model JSON (required with --method model)")
    p.add_argument("--window", required=True, help="t_s,t_e,t_p")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_denoise)

    p = sub.add_parser("predict", help="project and predict out-of-sight agents")
    p.add_argument("--scene", required=True)
    p.add_argument("--matrices", required=True, help="calibrate output JSON")
    p.add_argument("--denoiser", default="identity",
                   help="identity | kalman | model file")
    p.add_argument("--predictor", default="cv", help="cv | model file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against hidden truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True, help="predict output JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("benchmark", help="run a full experiment config")
    p.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SchemaError) as exc:
        print(f"ostk: config error: {exc}", file=sys.stderr)
        return 2
    except OstkError as exc:
        print(f"ostk: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
