"""Planar traveling waves of a Keller-Segel type system on a periodic strip.

Wave profiles by shooting, finite-difference field operators, IMEX evolution of
the perturbation and primitive formulations, weighted energy diagnostics and a
config-driven experiment harness.
"""
from .energy import EnergyReport, EnergyTracker, poincare_check, weighted_sobolev_norm
from .errors import (BlowUpError, CFLError, ConfigError, CurlError, FormatError, GridMismatchError,
                     KSWaveError, ParameterError, PositivityError, ShootingError, StiffnessError)
from .evolution import SchemeConfig, Trajectory, run
from .field_ops import PerturbState, PrimitiveState, Representation, StripGrid
from .harness import ExperimentConfig, build_initial_perturbation, load_config, run_experiment, sweep
from .wave_profile import WaveParams, WaveProfile, explicit_wave_eps0, solve_wave, validate_profile

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "CFLError", "ConfigError", "CurlError", "EnergyReport", "EnergyTracker", "ExperimentConfig",
    "FormatError", "GridMismatchError", "KSWaveError", "ParameterError", "PerturbState", "PositivityError",
    "PrimitiveState", "Representation", "SchemeConfig", "ShootingError", "StiffnessError", "StripGrid",
    "Trajectory", "WaveParams", "WaveProfile", "build_initial_perturbation", "explicit_wave_eps0",
    "load_config", "poincare_check", "run", "run_experiment", "solve_wave", "sweep", "validate_profile",
    "weighted_sobolev_norm",
]
