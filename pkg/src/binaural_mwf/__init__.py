"""Binaural multichannel Wiener filtering with cue-preserving penalties whose
weights follow the noise power."""

from .costs import FilterBank, PenaltyKind, WeightSchedule, j_mwf, j_penalty, j_total
from .designer import BetaProfile, DesignSpec, design_beta, resolve_alpha
from .errors import (BinauralError, ConfigError, DegenerateMeasureError, DesignFailure,
                     DimensionError, MetricUndefined, SolverError)
from .metrics import MetricReport, evaluate, k_s
from .scene import SceneConfig, build_scene
from .solver import Diagnostics, MethodSpec, SolverOptions, solve_mwf_closed_form, solve_scene
from .stats import SceneStats, scene_statistics
from .stft import StftConfig, stft_analyze, stft_synthesize

__version__ = "0.1.0"
