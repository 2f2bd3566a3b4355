"""End-to-end pipelines, benchmark orchestration and experiment config.

Two pipelines share the same estimated camera matrices per scene:

- the projection-supervised pipeline denoises each out-of-sight sensor
  window, projects it through the per-frame matrices, and predicts the
  future directly in pixel space;
- the two-stage baseline denoises, predicts future positions in world
  space, and projects both windows, replaying the last observed frame's
  matrix over the prediction horizon (no per-frame matrices exist for
  future frames).

``run_benchmark`` generates or loads scenes, splits them by scene id,
trains any model-typed components on the train split with validation early
stopping, evaluates every configured method on the test split, and writes
per-method reports plus a comparison table. Everything derives from the
master seed, so a rerun with the same config is byte-identical.
"""

from __future__ import annotations

import csv
import glob
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import EstimatorConfig, estimate_matrix_sequence
from .core import (DEFAULT_WINDOW, Scene, SensorTrajectory, SightMask,
                   TimeWindow, sight_partition, slice_window)
from .denoising import (DenoiserModel, KalmanParams, TrainConfig, make_denoiser,
                        train_denoiser)
from .errors import ConfigError, OstkError, PipelineError
from .evaluation import WindowMetrics, aggregate, evaluate_window
from .geometry import CameraMatrixSequence, project_trajectory
from .prediction import (PredictorModel, constant_velocity_predict_world,
                         make_predictor, predict_world, train_predictor,
                         train_world_predictor)
from .scene_io import load_model, load_scene, report_to_dict, write_report
from .simulate import SimConfig, generate_scene

__all__ = [
    "MethodSpec",
    "SceneSource",
    "ExperimentConfig",
    "AgentPipelineResult",
    "PipelineOutput",
    "run_vpd_pipeline",
    "run_two_stage_baseline",
    "run_benchmark",
    "BenchmarkResult",
    "experiment_config_from_dict",
    "config_fingerprint",
]


@dataclass(frozen=True)
class SceneSource:
    """Where scenes come from: a simulator config with a count, or files."""

    kind: str                      # simulate | files
    sim: SimConfig | None = None
    count: int = 0
    glob: str = ""

    def __post_init__(self):
        if self.kind == "simulate":
            if self.sim is None or int(self.count) < 1:
                raise ConfigError("simulate source needs a sim config and count >= 1")
            object.__setattr__(self, "count", int(self.count))
        elif self.kind == "files":
            if not self.glob:
                raise ConfigError("files source needs a glob pattern")
        else:
            raise ConfigError(f"unknown scene source kind {self.kind!r}")


@dataclass(frozen=True)
class MethodSpec:
    """One benchmark row: a pipeline plus denoiser and predictor specs.

    ``denoiser``: "identity", "kalman", {"kalman": {...params}},
    {"model": path}, or "train". ``predictor``: "cv", {"model": path}, or
    "train". Two-stage methods interpret the predictor in world space.
    """

    name: str
    pipeline: str = "vpd"          # vpd | two_stage
    denoiser: object = "identity"
    predictor: object = "cv"

    def __post_init__(self):
        if not self.name:
            raise ConfigError("MethodSpec.name must be nonempty")
        if self.pipeline not in ("vpd", "two_stage"):
            raise ConfigError("MethodSpec.pipeline must be vpd or two_stage")
        if self.predictor is None:
            raise ConfigError(f"method {self.name!r}: missing predictor spec")
        if self.denoiser is None:
            raise ConfigError(f"method {self.name!r}: missing denoiser spec")


@dataclass(frozen=True)
class ExperimentConfig:
    sources: tuple
    methods: tuple
    window: TimeWindow = DEFAULT_WINDOW
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: tuple = (0.7, 0.15, 0.15)
    master_seed: int = 0
    matrix_source: str = "estimate"    # estimate | truth

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.sources:
            raise ConfigError("ExperimentConfig needs at least one scene source")
        if not self.methods:
            raise ConfigError("ExperimentConfig needs at least one method")
        names = [m.name for m in self.methods]
        if len(names) != len(set(names)):
            raise ConfigError("method names must be unique")
        split = tuple(float(r) for r in self.split)
        if len(split) != 3 or any(r < 0 for r in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError("split ratios must be three nonnegative numbers summing to 1")
        object.__setattr__(self, "split", split)
        if self.matrix_source not in ("estimate", "truth"):
            raise ConfigError("matrix_source must be estimate or truth")
        object.__setattr__(self, "master_seed", int(self.master_seed))


@dataclass(frozen=True)
class AgentPipelineResult:
    agent_id: str
    denoised: SensorTrajectory
    projected: object              # VisualTrajectory
    predicted: object              # VisualTrajectory


@dataclass(frozen=True)
class PipelineOutput:
    scene_id: str
    mask: SightMask
    matrices: CameraMatrixSequence
    agents: tuple
    diagnostics: tuple


def _resolve_matrices(scene: Scene, mask: SightMask, cfg: ExperimentConfig,
                      matrices=None):
    if matrices is not None:
        return matrices
    if cfg.matrix_source == "truth":
        if scene.camera_truth is None:
            raise PipelineError("estimation", f"scene {scene.scene_id!r} has no "
                                "camera_truth for matrix_source='truth'")
        return scene.camera_truth.matrix_sequence(cfg.window), ()
    try:
        return estimate_matrix_sequence(scene, mask, cfg.window, cfg.estimator)
    except OstkError as exc:
        raise PipelineError("estimation", f"scene {scene.scene_id!r}: {exc}") from exc


def _stage(stage: str, scene_id: str, fn):
    try:
        return fn()
    except PipelineError:
        raise
    except OstkError as exc:
        raise PipelineError(stage, f"scene {scene_id!r}: {exc}") from exc


def run_vpd_pipeline(scene: Scene, cfg: ExperimentConfig, denoiser=None,
                     predictor=None, matrices=None) -> PipelineOutput:
    """Estimate matrices, denoise, project, and predict in pixel space.

    ``denoiser``/``predictor`` override the config specs with resolved
    callables or fitted models (the benchmark passes its trained models
    here); "train" specs cannot be resolved scene-locally and raise
    ConfigError without an override. ``matrices`` short-circuits
    estimation with a precomputed ``(sequence, diagnostics)`` pair so
    several pipelines can share one solve.
    """
    mask = sight_partition(scene, cfg.window)
    if not mask.out_of_sight:
        raise PipelineError("partition", f"scene {scene.scene_id!r} has no "
                            "out-of-sight agents to process")
    denoise_fn = _resolve_denoiser(denoiser if denoiser is not None else
                                   _default_spec(cfg, "denoiser"))
    predict_fn = _resolve_predictor(predictor if predictor is not None else
                                    _default_spec(cfg, "predictor"),
                                    cfg.window.prediction_span)
    seq, diags = _resolve_matrices(scene, mask, cfg, matrices)
    results = []
    for agent_id in sorted(mask.out_of_sight):
        agent = scene.agent(agent_id)
        obs = slice_window(agent.sensor_noisy, cfg.window, "observation")
        denoised = _stage("denoising", scene.scene_id, lambda: denoise_fn(obs))
        projected = _stage("projection", scene.scene_id,
                           lambda: project_trajectory(seq, denoised))
        predicted = _stage("prediction", scene.scene_id,
                           lambda: predict_fn(projected))
        results.append(AgentPipelineResult(agent_id, denoised, projected, predicted))
    return PipelineOutput(scene.scene_id, mask, seq, tuple(results), tuple(diags))


def run_two_stage_baseline(scene: Scene, cfg: ExperimentConfig, denoiser=None,
                           predictor=None, matrices=None) -> PipelineOutput:
    """Denoise, predict in world space, then project both windows.

    The observation window is projected with the per-frame matrices; the
    predicted future reuses the last observed frame's matrix over the whole
    horizon. Unlike the projection-supervised pipeline, denoising here gets
    no projection-consistency signal and prediction runs in world space.
    """
    mask = sight_partition(scene, cfg.window)
    if not mask.out_of_sight:
        raise PipelineError("partition", f"scene {scene.scene_id!r} has no "
                            "out-of-sight agents to process")
    denoise_fn = _resolve_denoiser(denoiser if denoiser is not None else
                                   _default_spec(cfg, "denoiser"))
    predictor_spec = predictor if predictor is not None else _default_spec(cfg, "predictor")
    horizon = cfg.window.prediction_span
    seq, diags = _resolve_matrices(scene, mask, cfg, matrices)
    last = seq.matrices[-1]
    future_window = TimeWindow(cfg.window.t_e, cfg.window.t_p, cfg.window.t_p)
    future_seq = CameraMatrixSequence(future_window, tuple([last] * horizon))

    if predictor_spec == "cv":
        world_predict = lambda s: constant_velocity_predict_world(s, horizon)
    elif isinstance(predictor_spec, PredictorModel):
        if predictor_spec.channels != 3:
            raise ConfigError("two-stage predictor model must be world-space (channels=3)")
        world_predict = lambda s: predict_world(predictor_spec, s)
    elif callable(predictor_spec):
        world_predict = predictor_spec
    else:
        raise ConfigError(f"unsupported two-stage predictor spec {predictor_spec!r}")

    results = []
    for agent_id in sorted(mask.out_of_sight):
        agent = scene.agent(agent_id)
        obs = slice_window(agent.sensor_noisy, cfg.window, "observation")
        denoised = _stage("denoising", scene.scene_id, lambda: denoise_fn(obs))
        projected = _stage("projection", scene.scene_id,
                           lambda: project_trajectory(seq, denoised))
        future_world = _stage("prediction", scene.scene_id,
                              lambda: world_predict(denoised))
        predicted = _stage("projection", scene.scene_id,
                           lambda: project_trajectory(future_seq, future_world))
        results.append(AgentPipelineResult(agent_id, denoised, projected, predicted))
    return PipelineOutput(scene.scene_id, mask, seq, tuple(results), tuple(diags))


def _default_spec(cfg: ExperimentConfig, which: str):
    if len(cfg.methods) != 1:
        raise ConfigError(f"pipeline runs need an explicit {which} when the config "
                          "defines several methods")
    return getattr(cfg.methods[0], which)


def _resolve_denoiser(spec):
    if spec == "train":
        raise ConfigError("denoiser spec 'train' requires a trained model "
                          "(run via run_benchmark or pass a fitted model)")
    if isinstance(spec, dict):
        if "kalman" in spec:
            return make_denoiser(KalmanParams(**spec["kalman"]))
        if "model" in spec:
            model = load_model(spec["model"])
            if not isinstance(model, DenoiserModel):
                raise ConfigError(f"{spec['model']}: not a denoiser model file")
            return make_denoiser(model)
        raise ConfigError(f"unrecognized denoiser spec {spec!r}")
    return make_denoiser(spec)


def _resolve_predictor(spec, horizon: int):
    if spec == "train":
        raise ConfigError("predictor spec 'train' requires a trained model "
                          "(run via run_benchmark or pass a fitted model)")
    if isinstance(spec, dict):
        if "model" in spec:
            model = load_model(spec["model"])
            if not isinstance(model, PredictorModel):
                raise ConfigError(f"{spec['model']}: not a predictor model file")
            return make_predictor(model, horizon)
        raise ConfigError(f"unrecognized predictor spec {spec!r}")
    return make_predictor(spec, horizon)


def _derived_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def resolve_scenes(cfg: ExperimentConfig):
    """Generate and/or load every configured scene, in deterministic order."""
    scenes = []
    for si, source in enumerate(cfg.sources):
        if source.kind == "simulate":
            for i in range(source.count):
                seed = _derived_seed(cfg.master_seed, "scene", si, i)
                scenes.append(generate_scene(source.sim, seed))
        else:
            paths = sorted(glob.glob(source.glob))
            if not paths:
                raise ConfigError(f"scene glob {source.glob!r} matched no files")
            scenes.extend(load_scene(p) for p in paths)
    ids = [s.scene_id for s in scenes]
    if len(ids) != len(set(ids)):
        raise ConfigError("scene ids must be unique across sources")
    return scenes


def split_scenes(scenes, split, master_seed: int):
    """Deterministic by-scene train/val/test split; the sets are disjoint."""
    ordered = sorted(scenes, key=lambda s: s.scene_id)
    rng = np.random.default_rng(np.random.SeedSequence([master_seed & (2 ** 63 - 1),
                                                        0x5EED]))
    order = rng.permutation(len(ordered))
    n = len(ordered)
    n_train = int(np.floor(split[0] * n))
    n_val = int(np.floor(split[1] * n))
    idx_train = order[:n_train]
    idx_val = order[n_train:n_train + n_val]
    idx_test = order[n_train + n_val:]
    pick = lambda idx: [ordered[i] for i in idx]
    return pick(idx_train), pick(idx_val), pick(idx_test)


@dataclass
class BenchmarkResult:
    reports: dict
    table: list                      # rows: (method, sum, mse_d, mse_p)
    failures: dict
    split_ids: dict


def config_fingerprint(cfg: ExperimentConfig, scene_ids) -> str:
    """Stable hash of everything that determines a benchmark's outputs."""
    blob = json.dumps({
        "scene_ids": sorted(scene_ids),
        "master_seed": cfg.master_seed,
        "window": [cfg.window.t_s, cfg.window.t_e, cfg.window.t_p],
        "estimator": vars(cfg.estimator).copy(),
        "train": {k: v for k, v in vars(cfg.train).items()},
        "methods": [{"name": m.name, "pipeline": m.pipeline,
                     "denoiser": _spec_repr(m.denoiser),
                     "predictor": _spec_repr(m.predictor)} for m in cfg.methods],
        "split": list(cfg.split),
        "matrix_source": cfg.matrix_source,
        "tool_version": __version__,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _spec_repr(spec):
    if isinstance(spec, dict):
        return {k: (v if isinstance(v, (str, int, float)) else vars(v).copy()
                    if hasattr(v, "__dict__") else repr(v)) for k, v in spec.items()}
    return spec if isinstance(spec, str) else repr(spec)


def _resolve_method_components(method: MethodSpec, cfg: ExperimentConfig,
                               train_scenes, val_scenes):
    """Resolve (train if necessary) a method's denoiser and predictor."""
    seed = _derived_seed(cfg.master_seed, "train", method.name)
    train_cfg = TrainConfig(
        epochs=cfg.train.epochs, step_size=cfg.train.step_size,
        adam_beta1=cfg.train.adam_beta1, adam_beta2=cfg.train.adam_beta2,
        adam_eps=cfg.train.adam_eps, batch=cfg.train.batch, seed=seed,
        early_stop_patience=cfg.train.early_stop_patience)
    if method.denoiser == "train":
        denoiser, _ = train_denoiser(train_scenes, cfg.estimator, train_cfg,
                                     window=cfg.window, val_scenes=val_scenes)
    else:
        denoiser = _resolve_denoiser(method.denoiser)
    if method.predictor == "train":
        if method.pipeline == "vpd":
            predictor, _ = train_predictor(train_scenes, cfg.estimator, denoiser,
                                           train_cfg, window=cfg.window,
                                           val_scenes=val_scenes)
        else:
            predictor, _ = train_world_predictor(train_scenes, cfg.estimator, denoiser,
                                                 train_cfg, window=cfg.window,
                                                 val_scenes=val_scenes)
    elif method.pipeline == "two_stage":
        predictor = method.predictor      # resolved inside the two-stage runner
    else:
        predictor = _resolve_predictor(method.predictor, cfg.window.prediction_span)
    return denoiser, predictor


def _evaluate_method(method: MethodSpec, cfg: ExperimentConfig, test_scenes,
                     matrix_cache, denoiser, predictor, jobs: int = 1):
    runner = run_vpd_pipeline if method.pipeline == "vpd" else run_two_stage_baseline

    def one(scene: Scene):
        output = runner(scene, cfg, denoiser=denoiser, predictor=predictor,
                        matrices=matrix_cache.get(scene.scene_id))
        windows = []
        for result in output.agents:
            agent = scene.agent(result.agent_id)
            if agent.visual_gt_hidden is None:
                raise PipelineError("evaluation", f"scene {scene.scene_id!r} agent "
                                    f"{result.agent_id!r} has no visual_gt_hidden")
            gt_obs = slice_window(agent.visual_gt_hidden, cfg.window, "observation")
            gt_future = slice_window(agent.visual_gt_hidden, cfg.window, "prediction")
            mse_d, mse_p, total = evaluate_window(result.projected, result.predicted,
                                                  gt_obs, gt_future)
            windows.append(WindowMetrics(scene.scene_id, result.agent_id,
                                         mse_d, mse_p, total))
        return windows

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_scene = list(pool.map(one, test_scenes))
    else:
        per_scene = [one(s) for s in test_scenes]
    return [w for ws in per_scene for w in ws]


def run_benchmark(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> BenchmarkResult:
    """Run every configured method over the test split and write reports.

    Per-method failures are recorded in the manifest and do not abort the
    other methods; partial results are still written.
    """
    scenes = resolve_scenes(cfg)
    train_scenes, val_scenes, test_scenes = split_scenes(scenes, cfg.split,
                                                         cfg.master_seed)
    if not test_scenes:
        raise ConfigError("benchmark split produced an empty test set")
    fingerprint = config_fingerprint(cfg, [s.scene_id for s in scenes])

    matrix_cache = {}
    if cfg.matrix_source == "estimate":
        for scene in test_scenes:
            mask = sight_partition(scene, cfg.window)
            try:
                matrix_cache[scene.scene_id] = estimate_matrix_sequence(
                    scene, mask, cfg.window, cfg.estimator)
            except OstkError as exc:
                raise PipelineError("estimation",
                                    f"scene {scene.scene_id!r}: {exc}") from exc

    reports, failures = {}, {}
    for method in cfg.methods:
        try:
            denoiser, predictor = _resolve_method_components(
                method, cfg, train_scenes, val_scenes)
            windows = _evaluate_method(method, cfg, test_scenes, matrix_cache,
                                       denoiser, predictor, jobs=jobs)
            reports[method.name] = aggregate(windows, fingerprint=fingerprint,
                                             tool_version=__version__)
        except OstkError as exc:
            failures[method.name] = f"{type(exc).__name__}: {exc}"

    table = [(name, reports[name].sum, reports[name].mse_d, reports[name].mse_p)
             for name in (m.name for m in cfg.methods) if name in reports]
    result = BenchmarkResult(
        reports=reports, table=table, failures=failures,
        split_ids={"train": [s.scene_id for s in train_scenes],
                   "val": [s.scene_id for s in val_scenes],
                   "test": [s.scene_id for s in test_scenes]})
    if out_dir is not None:
        _write_benchmark_outputs(result, fingerprint, Path(out_dir))
    return result


def _write_benchmark_outputs(result: BenchmarkResult, fingerprint: str,
                             out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, report in sorted(result.reports.items()):
        write_report(report, out_dir / f"report_{name}.json")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "sum", "mse_d", "mse_p"])
    for name, total, mse_d, mse_p in result.table:
        writer.writerow([name, repr(total), repr(mse_d), repr(mse_p)])
    (out_dir / "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")
    comparison = {
        "fingerprint": fingerprint,
        "tool_version": __version__,
        "rows": [{"method": n, "sum": s, "mse_d": d, "mse_p": p}
                 for n, s, d, p in result.table],
    }
    (out_dir / "comparison.json").write_text(
        json.dumps(comparison, indent=2) + "\n", encoding="utf-8")
    manifest = {
        "fingerprint": fingerprint,
        "split": result.split_ids,
        "failures": dict(sorted(result.failures.items())),
        "status": "partial" if result.failures else "complete",
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    """Parse the benchmark config JSON (see README for the schema)."""
    if not isinstance(doc, dict):
        raise ConfigError("experiment config must be a JSON object")
    try:
        sources = []
        for s in doc.get("sources", []):
            if "simulate" in s:
                sim = _sim_config_from_dict(s["simulate"])
                sources.append(SceneSource("simulate", sim=sim,
                                           count=s.get("count", 1)))
            elif "files" in s:
                sources.append(SceneSource("files", glob=s["files"]))
            else:
                raise ConfigError(f"unrecognized scene source {s!r}")
        methods = [MethodSpec(name=m["name"], pipeline=m.get("pipeline", "vpd"),
                              denoiser=m.get("denoiser", "identity"),
                              predictor=m.get("predictor", "cv"))
                   for m in doc.get("methods", [])]
        window = TimeWindow(*doc.get("window", [DEFAULT_WINDOW.t_s, DEFAULT_WINDOW.t_e,
                                                DEFAULT_WINDOW.t_p]))
        estimator = EstimatorConfig(**doc.get("estimator", {}))
        train = TrainConfig(**doc.get("train", {}))
        return ExperimentConfig(
            sources=tuple(sources), methods=tuple(methods), window=window,
            estimator=estimator, train=train,
            split=tuple(doc.get("split", (0.7, 0.15, 0.15))),
            master_seed=doc.get("master_seed", 0),
            matrix_source=doc.get("matrix_source", "estimate"))
    except (TypeError, KeyError, OstkError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def _sim_config_from_dict(doc: dict) -> SimConfig:
    from .simulate import NoiseModel
    kwargs = dict(doc)
    if "noise" in kwargs and isinstance(kwargs["noise"], dict):
        kwargs["noise"] = NoiseModel(**kwargs["noise"])
    if "image_size" in kwargs:
        kwargs["image_size"] = tuple(kwargs["image_size"])
    try:
        return SimConfig(**kwargs)
    except (TypeError, OstkError) as exc:
        raise ConfigError(f"invalid simulate config: {exc}") from exc
