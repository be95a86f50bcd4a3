"""Dynamic visual complexity of scenes measured with a two-pathway angular
velocity decoding model (AVDM).

Modules
-------
stimulus   grating and texture stimuli, video and image files
avdm       the model itself and the decoding-parameter fit
metric     per-sequence profiles, SF-TF sweeps and ordering checks
arena      square arena simulator with a ray-cast robot camera
profiler   spatial density maps and threshold histograms of scores
collision  looming detector stand-in and the collision case study
cli        command-line entry point (``dyncomplex``)
"""
from ._validation import ArenaError, DyncomplexError, FitError, ModelError, StimulusError
from .avdm import AVDM, AngularVelocityDecoder, AvdmParams, fit_params, run_sequence
from .arena import ArenaConfig, GratingWall, NaturalWall, run_approach, run_navigation
from .collision import CollisionParams, run_case_study
from .metric import check_monotonicity, profile_sequence, spearman, sweep_frequencies
from .profiler import build_histogram, build_map
from .stimulus import GratingSpec, VideoSequence, generate_grating

__version__ = "0.1.0"

__all__ = [
    "AVDM",
    "AngularVelocityDecoder",
    "AvdmParams",
    "ArenaConfig",
    "ArenaError",
    "CollisionParams",
    "DyncomplexError",
    "FitError",
    "GratingSpec",
    "GratingWall",
    "ModelError",
    "NaturalWall",
    "StimulusError",
    "VideoSequence",
    "build_histogram",
    "build_map",
    "check_monotonicity",
    "fit_params",
    "generate_grating",
    "profile_sequence",
    "run_approach",
    "run_case_study",
    "run_navigation",
    "run_sequence",
    "spearman",
    "sweep_frequencies",
]
