"""Guided diffusion on small point sets with time-corrected sampling."""
from .errors import *  # noqa: F401,F403
from .geometry import (
    RigidTransform, apply_rigid, project_zero_com, random_rigid, random_rotation,
    sample_subspace_gaussian, sphere_fit_distance, sphere_manifold_distance,
)
from .schedule import NoiseSchedule, build_linear_schedule, forward_perturb, toy_schedule, tweedie
from .score import Denoiser, ScoreModel, TrainConfig, cfg_score, dsm_loss, score_at, train_score
from .timepred import (
    TimePredConfig, TimePredictor, accuracy_profile, clip_time, featurize_invariant,
    predict_time, train_time_predictor,
)
from .guidance import GuidanceConfig, PropertyEstimator, clip_gradient, og_gradient, zeroth_order_gradient
from .samplers import (
    SamplerConfig, TrajectoryRecord, exposure_bias_probe, reverse_step, sample_ancestral,
    sample_og, sample_tacs, sample_tweedie_resample,
)
from .tasks import generate_ring_dataset, generate_sphere_dataset, get_task, surrogate_energy
from .eval import EvalReport, mae_to_target, run_sweep

__version__ = "0.1.0"
