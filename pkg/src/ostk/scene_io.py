"""JSON (de)serialization for scenes, matrix sequences, models and reports.

Scene files hold one scene each: scene metadata, an optional camera block
(3x3 intrinsics, one 3x4 extrinsic per frame, scale), and per-agent
full-length trajectory arrays with ``null`` marking ABSENT visual samples.
Floats are written in Python's shortest round-trip representation, so
write/load is bit-exact and byte-deterministic.

Schema violations raise :class:`ostk.errors.SchemaError` carrying the JSON
path of the offending field.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import AgentRecord, Scene, SensorTrajectory, TimeWindow, VisualTrajectory
from .errors import SchemaError, ValidationError
from .evaluation import EvaluationReport, WindowMetrics
from .geometry import (CameraExtrinsics, CameraIntrinsics, CameraMatrix,
                       CameraMatrixSequence, CameraTruth)

__all__ = [
    "load_scene",
    "write_scene",
    "scene_to_dict",
    "scene_from_dict",
    "write_report",
    "load_report",
    "report_to_dict",
    "write_matrix_sequence",
    "load_matrix_sequence",
    "save_model",
    "load_model",
]

MODEL_FORMAT_VERSION = 1


def _ensure(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise SchemaError(path, message)


def _float_rows(values, path: str, width: int, count: int | None = None,
                allow_null_rows: bool = False):
    _ensure(isinstance(values, list), path, "expected a list")
    if count is not None:
        _ensure(len(values) == count, path, f"expected {count} rows, got {len(values)}")
    rows, present = [], []
    for i, row in enumerate(values):
        if row is None:
            _ensure(allow_null_rows, f"{path}[{i}]", "null not allowed here")
            rows.append([np.nan] * width)
            present.append(False)
            continue
        _ensure(isinstance(row, list) and len(row) == width, f"{path}[{i}]",
                f"expected a {width}-element row")
        _ensure(all(isinstance(x, (int, float)) and not isinstance(x, bool)
                    for x in row), f"{path}[{i}]", "entries must be numbers")
        rows.append([float(x) for x in row])
        present.append(True)
    return np.array(rows, dtype=float), np.array(present, dtype=bool)


def scene_to_dict(scene: Scene) -> dict:
    camera = None
    if scene.camera_truth is not None:
        ct = scene.camera_truth
        camera = {
            "intrinsics": ct.intrinsics.as_matrix().tolist(),
            "extrinsics": [e.as_matrix().tolist() for e in ct.extrinsics],
            "scale": ct.scale,
        }
    agents = []
    for a in scene.agents:
        full = np.arange(scene.frame_count, dtype=np.int64)
        if not np.array_equal(a.sensor_noisy.frames, full):
            raise ValidationError(
                f"scene files require full-length trajectories; agent {a.agent_id!r} "
                "does not cover every frame")
        entry = {
            "agent_id": a.agent_id,
            "kind": a.kind,
            "sensor_noisy": a.sensor_noisy.points.tolist(),
            "sensor_clean": (a.sensor_clean.points.tolist()
                             if a.sensor_clean is not None else None),
            "visual": _visual_rows(a.visual),
        }
        if a.visual_gt_hidden is not None:
            entry["visual_gt_hidden"] = _visual_rows(a.visual_gt_hidden)
        agents.append(entry)
    return {
        "scene_id": scene.scene_id,
        "frame_hz": scene.frame_hz,
        "frame_count": scene.frame_count,
        "image_size": list(scene.image_size),
        "camera": camera,
        "agents": agents,
    }


def _visual_rows(traj: VisualTrajectory | None):
    if traj is None:
        return None
    return [row.tolist() if ok else None
            for row, ok in zip(traj.points, traj.present)]


def scene_from_dict(doc: dict) -> Scene:
    _ensure(isinstance(doc, dict), "$", "scene document must be an object")
    for key in ("scene_id", "frame_hz", "frame_count", "image_size", "agents"):
        _ensure(key in doc, "$", f"missing required field {key!r}")
    frame_count = doc["frame_count"]
    _ensure(isinstance(frame_count, int) and frame_count >= 1, "frame_count",
            "must be a positive integer")
    size = doc["image_size"]
    _ensure(isinstance(size, list) and len(size) == 2, "image_size",
            "expected [width, height]")

    camera = None
    if doc.get("camera") is not None:
        cam = doc["camera"]
        for key in ("intrinsics", "extrinsics", "scale"):
            _ensure(key in cam, "camera", f"missing field {key!r}")
        k, _ = _float_rows(cam["intrinsics"], "camera.intrinsics", 3, 3)
        _ensure(k[2][0] == 0 and k[2][1] == 0 and k[2][2] == 1, "camera.intrinsics",
                "bottom row must be [0, 0, 1]")
        try:
            intr = CameraIntrinsics(fx=k[0][0], fy=k[1][1], cx=k[0][2], cy=k[1][2],
                                    skew=k[0][1])
        except ValidationError as exc:
            raise SchemaError("camera.intrinsics", str(exc)) from exc
        _ensure(isinstance(cam["extrinsics"], list)
                and len(cam["extrinsics"]) == frame_count, "camera.extrinsics",
                f"expected {frame_count} per-frame poses")
        poses = []
        for f, pose in enumerate(cam["extrinsics"]):
            rt, _ = _float_rows(pose, f"camera.extrinsics[{f}]", 4, 3)
            try:
                poses.append(CameraExtrinsics(rt[:, :3], rt[:, 3]))
            except ValidationError as exc:
                raise SchemaError(f"camera.extrinsics[{f}]", str(exc)) from exc
        try:
            camera = CameraTruth(intr, tuple(poses), float(cam["scale"]))
        except ValidationError as exc:
            raise SchemaError("camera.scale", str(exc)) from exc

    frames = np.arange(frame_count, dtype=np.int64)
    agents = []
    _ensure(isinstance(doc["agents"], list), "agents", "expected a list")
    for i, a in enumerate(doc["agents"]):
        path = f"agents[{i}]"
        _ensure(isinstance(a, dict), path, "expected an object")
        for key in ("agent_id", "kind", "sensor_noisy", "visual"):
            _ensure(key in a, path, f"missing field {key!r}")
        noisy_pts, _ = _float_rows(a["sensor_noisy"], f"{path}.sensor_noisy", 3,
                                   frame_count)
        clean = None
        if a.get("sensor_clean") is not None:
            clean_pts, _ = _float_rows(a["sensor_clean"], f"{path}.sensor_clean", 3,
                                       frame_count)
            clean = SensorTrajectory(frames, clean_pts, "clean")
        visual = None
        if a["visual"] is not None:
            vis_pts, present = _float_rows(a["visual"], f"{path}.visual", 2,
                                           frame_count, allow_null_rows=True)
            visual = VisualTrajectory(frames, vis_pts, present)
        hidden = None
        if a.get("visual_gt_hidden") is not None:
            hid_pts, hid_present = _float_rows(a["visual_gt_hidden"],
                                               f"{path}.visual_gt_hidden", 2,
                                               frame_count, allow_null_rows=True)
            hidden = VisualTrajectory(frames, hid_pts, hid_present)
        try:
            agents.append(AgentRecord(
                agent_id=a["agent_id"], kind=a["kind"],
                sensor_noisy=SensorTrajectory(frames, noisy_pts, "noisy"),
                sensor_clean=clean, visual=visual, visual_gt_hidden=hidden))
        except ValidationError as exc:
            raise SchemaError(path, str(exc)) from exc
    try:
        return Scene(
            scene_id=doc["scene_id"], frame_hz=doc["frame_hz"],
            frame_count=frame_count, agents=tuple(agents),
            image_size=(size[0], size[1]), camera_truth=camera)
    except ValidationError as exc:
        raise SchemaError("$", str(exc)) from exc


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"malformed JSON: {exc}") from exc
    return scene_from_dict(doc)


def write_scene(scene: Scene, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, separators=(",", ":"))
        fh.write("\n")


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "mse_d": report.mse_d,
        "mse_p": report.mse_p,
        "sum": report.sum,
        "metric": report.metric,
        "fingerprint": report.fingerprint,
        "tool_version": report.tool_version,
        "per_agent": [
            {"scene_id": w.scene_id, "agent_id": w.agent_id, "mse_d": w.mse_d,
             "mse_p": w.mse_p, "sum": w.sum}
            for w in report.per_agent
        ],
    }


def write_report(report: EvaluationReport, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")


def load_report(path) -> EvaluationReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    windows = tuple(WindowMetrics(w["scene_id"], w["agent_id"], w["mse_d"],
                                  w["mse_p"], w["sum"])
                    for w in doc.get("per_agent", []))
    return EvaluationReport(doc["mse_d"], doc["mse_p"], doc["sum"], windows,
                            doc.get("fingerprint", ""), doc.get("tool_version", ""),
                            doc.get("metric", ""))


def write_matrix_sequence(seq: CameraMatrixSequence, diagnostics, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "window": [seq.window.t_s, seq.window.t_e, seq.window.t_p],
        "matrices": [m.m.tolist() for m in seq.matrices],
        "diagnostics": [
            {"condition": d.condition, "rms_reprojection": d.rms_reprojection,
             "n_correspondences": d.n_correspondences,
             "ill_conditioned": d.ill_conditioned,
             "huber_iterations": d.huber_iterations}
            for d in diagnostics
        ],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_matrix_sequence(path) -> CameraMatrixSequence:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    _ensure("window" in doc and "matrices" in doc, "$",
            "matrix sequence needs 'window' and 'matrices'")
    window = TimeWindow(*doc["window"])
    mats = []
    for i, rows in enumerate(doc["matrices"]):
        m, _ = _float_rows(rows, f"matrices[{i}]", 4, 3)
        try:
            mats.append(CameraMatrix(m))
        except ValidationError as exc:
            raise SchemaError(f"matrices[{i}]", str(exc)) from exc
    try:
        return CameraMatrixSequence(window, tuple(mats))
    except ValidationError as exc:
        raise SchemaError("matrices", str(exc)) from exc


def save_model(model, path) -> None:
    """Write a denoiser or predictor to JSON (row-major weight arrays)."""
    from .denoising import DenoiserModel
    from .prediction import PredictorModel

    if isinstance(model, DenoiserModel):
        kind, extra = "denoiser", {"residual": model.residual}
    elif isinstance(model, PredictorModel):
        kind, extra = "predictor", {"channels": model.channels}
    else:
        raise ValidationError(f"cannot serialize model of type {type(model).__name__}")
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "norm_state": (None if model.norm_state is None else
                       {"mean": model.norm_state.mean.tolist(),
                        "scale": model.norm_state.scale.tolist()}),
        **extra,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path):
    from .denoising import DenoiserModel, NormState
    from .prediction import PredictorModel

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    _ensure(doc.get("format_version") == MODEL_FORMAT_VERSION, "format_version",
            f"unsupported model format {doc.get('format_version')!r}")
    weights = [np.array(w, dtype=float) for w in doc["weights"]]
    biases = [np.array(b, dtype=float) for b in doc["biases"]]
    norm = None
    if doc.get("norm_state") is not None:
        norm = NormState(np.array(doc["norm_state"]["mean"], dtype=float),
                         np.array(doc["norm_state"]["scale"], dtype=float))
    if doc.get("kind") == "denoiser":
        model = DenoiserModel(tuple(doc["layer_sizes"]), weights, biases,
                              residual=bool(doc.get("residual", True)))
    elif doc.get("kind") == "predictor":
        model = PredictorModel(tuple(doc["layer_sizes"]), weights, biases,
                               channels=int(doc.get("channels", 2)))
    else:
        raise SchemaError("kind", f"unknown model kind {doc.get('kind')!r}")
    model.norm_state = norm
    return model
