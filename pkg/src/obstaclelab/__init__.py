"""Discrete double obstacle problems with measure data and p(x)-growth, and estimate diagnostics."""

from .chain import build_window, comparison_metrics, solve_chain
from .config import ConfigError, load_config, parse_config
from .exponent import Flux, make_exponent, make_weight
from .fields import make_field
from .grid import build_grid, window
from .harness import approximation_study, energy_l1_estimate, level_set_decay, main_estimate_report
from .maximal import frac_maximal_1, hl_maximal, phi_trunc, truncate
from .measure import MeasureData, mollify, total_variation
from .quantities import psi_divergence, select_r0
from .solver import ObstacleProblem, SolverFailure, assemble, solve

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Flux",
    "MeasureData",
    "ObstacleProblem",
    "SolverFailure",
    "approximation_study",
    "assemble",
    "build_grid",
    "build_window",
    "comparison_metrics",
    "energy_l1_estimate",
    "frac_maximal_1",
    "hl_maximal",
    "level_set_decay",
    "load_config",
    "main_estimate_report",
    "make_exponent",
    "make_field",
    "make_weight",
    "mollify",
    "parse_config",
    "phi_trunc",
    "psi_divergence",
    "select_r0",
    "solve",
    "solve_chain",
    "total_variation",
    "truncate",
    "window",
]
