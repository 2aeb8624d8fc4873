"""Integrated Bayesian tomography of plasma density from line and point data."""

__version__ = "0.1.0"

from .equilibrium import FluxMap, FluxModel, flux_map, normalized_flux
from .gp import GaussianField, Hyperparams, KernelKind, KernelSpec, gp_condition, prior_field
from .grid import Chord, ContributionMatrix, GeometryError, Grid, contribution_matrix, default_fir_chords
from .synthetic import MtanhParams, apply_measurement_model, sample_fmcw, synthesize_field
from .tomography import ModelTag, PosteriorResult, fuse, log_evidence, optimize_hyperparams
from .scenario import Scenario, reconstruct, simulate
from .evaluation import compute_metrics, grid_sweep, noise_ensemble, stddev_sweep

__all__ = [
    "Chord", "ContributionMatrix", "FluxMap", "FluxModel", "GaussianField", "GeometryError",
    "Grid", "Hyperparams", "KernelKind", "KernelSpec", "ModelTag", "MtanhParams",
    "PosteriorResult", "Scenario", "apply_measurement_model", "compute_metrics",
    "contribution_matrix", "default_fir_chords", "flux_map", "fuse", "gp_condition",
    "grid_sweep", "log_evidence", "noise_ensemble", "normalized_flux", "optimize_hyperparams",
    "prior_field", "reconstruct", "sample_fmcw", "simulate", "stddev_sweep", "synthesize_field",
]
