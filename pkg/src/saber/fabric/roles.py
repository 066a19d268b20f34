"""Actor and learner loops for the distributed topology."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import toy_ale
from ..env import EpisodeLog, SaberConfig, SaberEnv
from ..iqn import AdamConfig, Batch, IQNAgent, LossConfig, NetworkSpec, NumericalError
from ..iqn import checkpoint as ckpt
from ..replay import NStepAssembler, content_key
from ..train import feature_dim, observation_features
from . import wire
from .client import Client, FabricError
from .service import start_server

log = logging.getLogger(__name__)


def toy_spec(hidden=(64, 64), head_hidden: int = 64) -> NetworkSpec:
    return NetworkSpec(input_kind="flat", input_shape=(feature_dim(),), hidden=hidden,
                       head_hidden=head_hidden, n_actions=toy_ale.N_ACTIONS)


# ---------------------------------------------------------------- actor

@dataclass
class ActorConfig:
    game_params: dict = field(default_factory=dict)
    env_steps: int = 5_000
    flush_size: int = 64
    param_interval: int = 400
    n_step: int = 3
    gamma: float = 0.99
    epsilon: float = 0.0
    poll: float = 0.002
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class ActorResult:
    env_steps: int = 0
    transitions: int = 0
    batches: int = 0
    throttle_waits: int = 0
    episodes: list = field(default_factory=list)
    versions: list = field(default_factory=list)


def _fetch_params(client: Client):
    reply = client.call(wire.ParamRequest(), wire.ParamResponse)
    params, spec, version, _ = ckpt.deserialize(reply.blob)
    return params, spec, reply.version


def actor_run(game_id: str, replay_address, learner_address, saber: SaberConfig, cfg: ActorConfig,
              stop: threading.Event | None = None) -> ActorResult:
    """Play until ``cfg.env_steps`` environment steps, shipping prioritized n-step transitions.

    Priorities are computed locally with the actor's parameter copy (used as
    both online and target network). Exploration is the network's own
    parameter noise, plus optional epsilon-random actions.
    """
    rng = np.random.default_rng([cfg.seed, 2])
    replay = Client(replay_address)
    learner = Client(learner_address) if learner_address is not None else None
    result = ActorResult()
    agent = None
    version = -1

    def refresh():
        nonlocal agent, version
        if learner is None:
            if agent is None:
                agent = IQNAgent(toy_spec(), cfg.loss, seed=cfg.seed)
                version = 0
                result.versions.append(0)
            return
        params, spec, v = _fetch_params(learner)
        if v < version:
            return  # never move backwards
        if agent is None or agent.spec != spec:
            agent = IQNAgent(spec, cfg.loss, seed=cfg.seed)
        agent.params = params
        agent.target_params = params
        version = v
        result.versions.append(v)

    env = SaberEnv(toy_ale.make_game(game_id, **cfg.game_params), saber, rng)
    asm = NStepAssembler(cfg.n_step, cfg.gamma)
    blobs: dict[bytes, np.ndarray] = {}
    pending: list = []
    steps_since_flush = 0

    def observe(obs):
        x = observation_features(obs)
        k = content_key(x)
        blobs[k] = x
        return k

    def flush():
        nonlocal steps_since_flush
        if not pending and not steps_since_flush:
            return
        batch = Batch(np.stack([blobs[t.obs_key] for t in pending]) if pending else None,
                      np.array([t.action for t in pending]), np.array([t.n_step_return for t in pending]),
                      np.array([t.discount_pow_n for t in pending]),
                      np.stack([blobs[t.next_obs_key] for t in pending]) if pending else None)
        prios = agent.priorities(batch, rng) if pending else []
        used = {k for t in pending for k in (t.obs_key, t.next_obs_key)}
        msg = wire.PutBatch(
            steps_since_flush,
            [wire.Blob(k, blobs[k]) for k in used],
            [wire.WireTransition(t.obs_key, t.action, t.n_step_return, t.discount_pow_n, t.next_obs_key, float(p))
             for t, p in zip(pending, prios)],
        )
        ack = replay.call(msg, wire.Ack)
        result.transitions += len(pending)
        result.batches += 1
        pending.clear()
        steps_since_flush = 0
        live = {obs_key, *asm.pending_keys()}
        for k in list(blobs):
            if k not in live:
                del blobs[k]
        throttled = ack.throttled
        while throttled and not (stop and stop.is_set()):
            result.throttle_waits += 1
            time.sleep(cfg.poll)
            throttled = replay.stats()["actor_throttled"]
        return ack

    try:
        refresh()
        obs_key = observe(env.reset(cfg.seed))
        episode = 0
        for step in range(1, cfg.env_steps + 1):
            if stop is not None and stop.is_set():
                break
            if cfg.epsilon > 0 and rng.random() < cfg.epsilon:
                action = int(rng.integers(toy_ale.N_ACTIONS))
            else:
                action = agent.act(blobs[obs_key], rng)
            obs, res = env.step(action)
            next_key = observe(obs)
            last = step == cfg.env_steps
            done = res.done or last
            terminal = res.done and res.termination is not None and res.termination.value == "game_over"
            pending.extend(asm.push(obs_key, action, res.clipped_reward, next_key, done, terminal))
            steps_since_flush += 1
            result.env_steps += 1
            obs_key = next_key
            if res.done:
                result.episodes.append(env.episode_log())
                episode += 1
                asm.reset()
                if not last:
                    obs_key = observe(env.reset(cfg.seed + episode))
            if len(pending) >= cfg.flush_size or steps_since_flush >= cfg.flush_size or last:
                flush()
            if step % cfg.param_interval == 0:
                refresh()
        flush()
    finally:
        replay.close()
        if learner is not None:
            learner.close()
    return result


# -------------------------------------------------------------- learner

@dataclass
class LearnerConfig:
    batch_size: int = 32
    min_fill: int = 1_000
    max_steps: int | None = None
    publish_interval: int = 100
    target_sync: int = 8_000
    checkpoint_interval: int = 100_000
    checkpoint_dir: str | None = None
    lr: float = 5e-5
    adam_eps: float = 3.125e-4
    beta_start: float = 0.4
    beta_horizon: int = 1_000_000
    poll: float = 0.002
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    spec: NetworkSpec = field(default_factory=toy_spec)

    def beta_at(self, step: int) -> float:
        frac = min(step / max(1, self.beta_horizon), 1.0)
        return self.beta_start + frac * (1.0 - self.beta_start)

    def echo(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class LearnerResult:
    steps: int = 0
    version: int = 0
    waits: int = 0
    checkpoints: list = field(default_factory=list)
    last_losses: np.ndarray | None = None
    last_priorities: np.ndarray | None = None


class ParamServer:
    """Serves the latest published parameter blob on the learner address."""

    def __init__(self, bind, spec: NetworkSpec):
        self.spec = spec
        self.lock = threading.Lock()
        self.version = 0
        self.blob = b""
        self.learner_steps = 0
        self.server = start_server(bind, self.handle, "params")

    @property
    def address(self):
        return self.server.server_address[:2]

    def publish(self, params, version: int, steps: int) -> None:
        blob = ckpt.serialize(params, self.spec, version)
        with self.lock:
            if version < self.version:
                raise ValueError("parameter versions must not decrease")
            self.version, self.blob, self.learner_steps = version, blob, steps

    def handle(self, msg):
        with self.lock:
            if isinstance(msg, wire.ParamRequest):
                return wire.ParamResponse(self.version, self.blob)
            if isinstance(msg, wire.StatsRequest):
                return wire.Stats({"version": self.version, "learner_steps": self.learner_steps})
        return wire.Error(wire.E_UNSUPPORTED, f"learner does not handle {type(msg).__name__}")

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def batch_from_response(resp: wire.SampleResponse) -> Batch:
    obs = {b.key: b.array for b in resp.blobs}
    return Batch(
        states=np.stack([obs[t.obs_key] for t in resp.transitions]),
        actions=np.array([t.action for t in resp.transitions], dtype=np.int64),
        returns=np.array([t.n_step_return for t in resp.transitions]),
        discounts=np.array([t.discount_pow_n for t in resp.transitions]),
        next_states=np.stack([obs[t.next_obs_key] for t in resp.transitions]),
        weights=np.array(resp.is_weights),
    )


def learner_run(replay_address, cfg: LearnerConfig, bind=("127.0.0.1", 0), stop: threading.Event | None = None,
                on_ready=None, step_hook=None) -> LearnerResult:
    """Sample, learn and feed priorities back until ``max_steps`` or ``stop``.

    ``on_ready(param_address)`` fires once the parameter server is up;
    ``step_hook(agent, batch, info, reply)`` sees every completed step.
    """
    agent = IQNAgent(cfg.spec, cfg.loss, AdamConfig(lr=cfg.lr, eps=cfg.adam_eps), seed=cfg.seed,
                     target_sync=cfg.target_sync)
    params_srv = ParamServer(bind, cfg.spec)
    params_srv.publish(agent.params, 0, 0)
    if on_ready:
        on_ready(params_srv.address)
    replay = Client(replay_address)
    result = LearnerResult()

    def stopped():
        return stop is not None and stop.is_set()

    def checkpoint():
        if not cfg.checkpoint_dir:
            return
        path = Path(cfg.checkpoint_dir) / f"ckpt_{agent.learner_steps:08d}.bin"
        ckpt.save(path, agent.params, cfg.spec, params_srv.version,
                  {"learner_steps": agent.learner_steps, "config": _jsonable(cfg.echo())})
        result.checkpoints.append(str(path))

    try:
        while not stopped() and replay.stats()["size"] < cfg.min_fill:
            result.waits += 1
            time.sleep(cfg.poll)
        while not stopped() and (cfg.max_steps is None or agent.learner_steps < cfg.max_steps):
            reply = replay.request(wire.SampleRequest(cfg.batch_size, cfg.beta_at(agent.learner_steps)))
            if isinstance(reply, wire.Error):
                if reply.code in (wire.E_GATE, wire.E_EMPTY):
                    result.waits += 1
                    time.sleep(cfg.poll)
                    continue
                raise FabricError(f"replay error {reply.code}: {reply.message}")
            batch = batch_from_response(reply)
            try:
                info = agent.train_step(batch)
            except NumericalError as e:
                where = ckpt.write_nan_dump(cfg.checkpoint_dir, agent, batch, e)
                raise NumericalError(f"{e}; diagnostics in {where}") from e
            replay.call(wire.PriorityUpdate(reply.slots, reply.generations, info.priorities.tolist()), wire.Ack)
            result.last_losses, result.last_priorities = info.per_transition, info.priorities
            if step_hook:
                step_hook(agent, batch, info, reply)
            if agent.learner_steps % cfg.publish_interval == 0:
                params_srv.publish(agent.params, agent.learner_steps // cfg.publish_interval, agent.learner_steps)
            if agent.learner_steps % cfg.checkpoint_interval == 0:
                checkpoint()
    finally:
        replay.close()
        params_srv.close()
    result.steps = agent.learner_steps
    result.version = params_srv.version
    if cfg.checkpoint_dir and (not result.checkpoints or not result.checkpoints[-1].endswith(f"{agent.learner_steps:08d}.bin")):
        checkpoint()
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj
