"""Out-of-sight trajectory toolkit.

Denoises noisy 3-D sensor trajectories of agents a camera cannot see and
predicts their noise-free 2-D pixel trajectories in that camera's frame.
Per-frame projection matrices are estimated from agents the camera does
see (paired sensor/visual trajectories, normalized-DLT least squares), and
projecting through them turns noise-free visual tracks into the training
signal for denoising, no clean sensor ground truth required.

Main entry points:

- :func:`ostk.simulate.generate_scene` for synthetic labeled scenes
- :func:`ostk.calibration.estimate_matrix_sequence` for camera matrices
- :func:`ostk.denoising.train_denoiser` / :func:`ostk.denoising.kalman_denoise`
- :func:`ostk.prediction.train_predictor` / constant-velocity baselines
- :func:`ostk.pipeline.run_benchmark` for full method comparisons
- the ``ostk`` command line for the same, file to file
"""

__version__ = "0.1.0"

from .core import (AGENT_KINDS, DEFAULT_WINDOW, PROVENANCES, AgentRecord,
                   PixelPoint, Scene, SensorTrajectory, SightMask, TimeWindow,
                   VisualTrajectory, WorldPoint, sight_partition, slice_window)
from .geometry import (DEPTH_EPSILON, CameraExtrinsics, CameraIntrinsics,
                       CameraMatrix, CameraMatrixSequence, CameraTruth,
                       compose_camera_matrix, project_point, project_points,
                       project_trajectory)
from .simulate import (NoiseModel, SimConfig, classify_sight, generate_scene,
                       inject_sensor_noise, point_visible)
from .calibration import (Correspondence, EstimatorConfig, FrameDiagnostics,
                          estimate_frame_matrix, estimate_matrix_sequence,
                          reprojection_report)
from .denoising import (DenoiserModel, KalmanParams, NormState, TrainConfig,
                        denoise, denoising_loss, kalman_denoise, make_denoiser,
                        train_denoiser)
from .prediction import (PredictorModel, constant_velocity_predict,
                         constant_velocity_predict_world, make_predictor,
                         predict, predict_world, prediction_loss,
                         train_predictor, train_world_predictor)
from .evaluation import (EvaluationReport, WindowMetrics, aggregate,
                         evaluate_window, mse_t)
from .pipeline import (BenchmarkResult, ExperimentConfig, MethodSpec,
                       PipelineOutput, SceneSource, run_benchmark,
                       run_two_stage_baseline, run_vpd_pipeline)
from .scene_io import (load_matrix_sequence, load_model, load_report,
                       load_scene, save_model, write_matrix_sequence,
                       write_report, write_scene)
from . import errors
