"""Adjoint-state full waveform inversion of 2-D acoustic speed maps."""

import warnings as _warnings

# numba probes TBB first and complains when the installed one is too old
_warnings.filterwarnings("ignore", message="The TBB threading layer")

__version__ = "0.1.0"

from .grid import GridSpec, SpeedModel, TimeAxis, Field2D, model_mse  # noqa: E402
from .signals import RickerParams, ShotGather, Trace, ricker_trace  # noqa: E402
from .forward import (  # noqa: E402
    AbsorberSpec,
    SimConfig,
    SourceInjection,
    laplacian,
    max_stable_dt,
    simulate_forward,
    simulate_shots,
    stencil_coefficients,
)
from .misfit import OffsetRule, W2Config, l2_misfit, w2_misfit, w2_adjoint_source  # noqa: E402
from .adjoint import compute_gradient, finite_difference_check  # noqa: E402
from .optimize import OptimizerConfig, lbfgsb_minimize  # noqa: E402
from .dataset import ShotDataset  # noqa: E402
from .inversion import WaveformInversion, invert  # noqa: E402
from .specimens import SpecimenKind, build_acquisition, build_specimen  # noqa: E402
from .experiments import ExperimentConfig, run_forward_experiment, run_inversion_experiment  # noqa: E402

__all__ = [
    "GridSpec", "SpeedModel", "TimeAxis", "Field2D", "model_mse",
    "RickerParams", "ShotGather", "Trace", "ricker_trace",
    "AbsorberSpec", "SimConfig", "SourceInjection", "laplacian", "max_stable_dt",
    "simulate_forward", "simulate_shots", "stencil_coefficients",
    "OffsetRule", "W2Config", "l2_misfit", "w2_misfit", "w2_adjoint_source",
    "compute_gradient", "finite_difference_check",
    "OptimizerConfig", "lbfgsb_minimize",
    "ShotDataset", "WaveformInversion", "invert",
    "SpecimenKind", "build_acquisition", "build_specimen",
    "ExperimentConfig", "run_forward_experiment", "run_inversion_experiment",
]
