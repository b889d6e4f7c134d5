"""trussfusion: state estimation for adaptive truss structures.

Truss FE assembly, modal order reduction, multi-rate EKF fusion of
strain-gauge forces with delayed camera position samples (one-step
l-lag OOSM update), observability-Gramian sensor placement, bounded
derivative-free self-tuning and a synthetic ground-truth harness.
"""

from .api import GreedyGaugeSelector, TrussStateEstimator
from .config import (ExperimentConfig, default_config, load_config,
                     save_config, tuning_config)
from .excitation import GroundMotion, band_limited_noise, chirp, kanai_tajimi
from .fusion import FusionFilter
from .model import (AssembledModel, StiffnessParams, TrussGeometry, assemble,
                    build_scale_model)
from .modal import ModalBasis, ModalStateSpace, build_state_space, discretize, \
    modal_damping, solve_modes
from .placement import PlacementResult, greedy_prune, observability_gramian
from .sensors import CameraModel, GaugeModel, HighpassFilter, StrainGaugeSet, \
    camera_output, distort_point, element_force, force_jacobian, project_point, \
    undistort_point
from .simulate import (ExperimentRecord, MetricsReport, SensorLog,
                       run_experiment, sample_sensors, simulate_truth)
from .tuning import TuningProblem, apply_params, cost, tune

__version__ = "0.1.0"

__all__ = [
    "AssembledModel", "CameraModel", "ExperimentConfig", "ExperimentRecord",
    "FusionFilter", "GaugeModel", "GreedyGaugeSelector", "GroundMotion",
    "HighpassFilter", "MetricsReport", "ModalBasis", "ModalStateSpace",
    "PlacementResult", "SensorLog", "StiffnessParams", "StrainGaugeSet",
    "TrussGeometry", "TrussStateEstimator", "TuningProblem", "apply_params",
    "assemble", "band_limited_noise", "build_scale_model", "build_state_space",
    "camera_output", "chirp", "cost", "default_config", "discretize",
    "distort_point", "element_force", "force_jacobian", "greedy_prune",
    "kanai_tajimi", "load_config", "modal_damping", "observability_gramian",
    "project_point", "run_experiment", "sample_sensors", "save_config",
    "simulate_truth", "solve_modes", "tune", "tuning_config", "undistort_point",
]
