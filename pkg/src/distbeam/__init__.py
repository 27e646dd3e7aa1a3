"""Linearly constrained and distributed acoustic beamforming simulator."""
from .beamform import (SEPARABLE, TABLE, BeamWeights, Beamformer, ConstraintSet, build_constraints,
                       directivity, make_beamformer, solve_lcqp)
from .estimation import CpsdmSet, TadLabeler, estimate_ratf, isotropic_matrix
from .scene import GroundTruth, NodeSpec, SceneConfig, SourceSpec, desk_scene, synthesize
from .stft import OlsConfig, analyze, synthesize_output

__version__ = "0.1.0"

__all__ = [
    "SEPARABLE", "TABLE", "BeamWeights", "Beamformer", "ConstraintSet", "build_constraints",
    "directivity", "make_beamformer", "solve_lcqp", "CpsdmSet", "TadLabeler", "estimate_ratf",
    "isotropic_matrix", "GroundTruth", "NodeSpec", "SceneConfig", "SourceSpec", "desk_scene",
    "synthesize", "OlsConfig", "analyze", "synthesize_output", "__version__",
]
