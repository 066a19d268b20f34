"""Distributed actor/learner/replay topology over a length-prefixed binary protocol."""

from . import wire
from .client import Client, FabricError, parse_address
from .roles import ActorConfig, ActorResult, LearnerConfig, LearnerResult, ParamServer, actor_run, learner_run, toy_spec
from .service import LockstepGate, ReplayService, serve_replay

__all__ = [
    "ActorConfig", "ActorResult", "Client", "FabricError", "LearnerConfig", "LearnerResult", "LockstepGate",
    "ParamServer", "ReplayService", "actor_run", "learner_run", "parse_address", "serve_replay", "toy_spec",
    "wire",
]
