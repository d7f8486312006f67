"""Data generation, protocols, formats, experiments and the command line."""

from .classify import (
    ClassModel,
    ExactCoder,
    classify_group_energy,
    classify_min_objective,
    detection_accuracy,
    group_energies,
)
from .experiments import ExperimentReport, run_experiment
from .synth import SynthSpec, gen_synthetic

__all__ = [
    "ClassModel", "ExactCoder", "ExperimentReport", "SynthSpec", "classify_group_energy",
    "classify_min_objective", "detection_accuracy", "gen_synthetic", "group_energies",
    "run_experiment",
]
