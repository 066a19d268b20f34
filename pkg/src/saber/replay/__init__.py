"""Prioritized experience replay: sum-tree index, ring buffer and n-step assembly."""

from .buffer import PrioritizedReplay, ReplayConfig, ReplayError, ReplayStats, SampleBatch, Transition
from .nstep import NStepAssembler, NStepTransition, iter_assemble, n_step_assemble
from .store import ObservationStore, content_key
from .sumtree import BACKEND, CySumTree, PySumTree, SumTree

__all__ = [
    "BACKEND",
    "CySumTree",
    "NStepAssembler",
    "NStepTransition",
    "ObservationStore",
    "PrioritizedReplay",
    "PySumTree",
    "ReplayConfig",
    "ReplayError",
    "ReplayStats",
    "SampleBatch",
    "SumTree",
    "Transition",
    "content_key",
    "iter_assemble",
    "n_step_assemble",
]
