"""Single-process toy training: actor and learner interleaved under the 4:1 lockstep."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import toy_ale
from .env import EpisodeLog, SaberConfig, SaberEnv, run_episode
from .iqn import AdamConfig, Batch, IQNAgent, LossConfig, NetworkSpec, NumericalError
from .iqn.checkpoint import write_nan_dump
from .replay import NStepAssembler, ObservationStore, PrioritizedReplay, ReplayConfig, Transition
from .scoring import training_curve_score

POOL = 7


def observation_features(obs: np.ndarray, block: int = POOL) -> np.ndarray:
    """Block-average a ``(stack, 84, 84)`` observation into a flat vector in [0, 1]."""
    c, h, w = obs.shape
    pooled = obs.reshape(c, h // block, block, w // block, block).mean(axis=(2, 4))
    return (pooled.ravel() / 255.0).astype(np.float32)


def feature_dim(frame_stack: int = 4, size: int = 84, block: int = POOL) -> int:
    return frame_stack * (size // block) ** 2


@dataclass
class ToyTrainConfig:
    game: str = "toy:chain"
    game_params: dict = field(default_factory=dict)
    env_steps: int = 50_000
    sticky_xi: float = 0.25
    ratio: int = 4
    batch_size: int = 32
    min_fill: int = 1_000
    capacity: int = 50_000
    omega: float = 0.2
    beta_start: float = 0.4
    n_step: int = 3
    gamma: float = 0.99
    n_tau: int = 8
    n_tau_prime: int = 8
    k_policy: int = 32
    kappa: float = 1.0
    lr: float = 1e-3
    adam_eps: float = 3.125e-4
    target_sync: int = 500
    hidden: tuple = (64, 64)
    head_hidden: int = 64
    sigma0: float = 0.5
    priority_batch: int = 64
    # uniform-random actions, annealed linearly to epsilon_end over epsilon_steps
    epsilon_start: float = 1.0
    epsilon_end: float = 0.0
    epsilon_steps: int = 5_000
    checkpoints: tuple = (0.05, 0.25, 0.5, 1.0)
    eval_episodes: int = 3
    seed: int = 0

    def replay_config(self) -> ReplayConfig:
        return ReplayConfig(capacity=self.capacity, omega=self.omega, beta_start=self.beta_start,
                            beta_horizon=max(1, self.env_steps // self.ratio), n_step=self.n_step,
                            gamma=self.gamma)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.n_tau, self.n_tau_prime, self.k_policy, self.kappa, self.gamma, self.n_step)

    def saber_config(self, sticky: float | None = None) -> SaberConfig:
        return SaberConfig(sticky_xi=self.sticky_xi if sticky is None else sticky, seed=self.seed)

    def epsilon_at(self, step: int) -> float:
        if self.epsilon_steps <= 0 or step >= self.epsilon_steps:
            return self.epsilon_end
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * step / self.epsilon_steps

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CurvePoint:
    env_steps: int
    frames: int
    learner_steps: int
    score: float
    fraction: float | None


@dataclass
class TrainResult:
    config: ToyTrainConfig
    agent: IQNAgent
    curve: list[CurvePoint]
    optimum: float | None
    seconds: float
    episodes: list[EpisodeLog]

    @property
    def final_fraction(self) -> float | None:
        return self.curve[-1].fraction if self.curve else None

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["env_steps", "frames", "learner_steps", "score", "fraction_of_optimum"])
        for p in self.curve:
            w.writerow([p.env_steps, p.frames, p.learner_steps, f"{p.score:.6f}",
                        "" if p.fraction is None else f"{p.fraction:.6f}"])
        return buf.getvalue()


def make_agent(cfg: ToyTrainConfig, n_actions: int = toy_ale.N_ACTIONS) -> IQNAgent:
    spec = NetworkSpec(input_kind="flat", input_shape=(feature_dim(),), hidden=cfg.hidden,
                       head_hidden=cfg.head_hidden, n_actions=n_actions, sigma0=cfg.sigma0)
    return IQNAgent(spec, cfg.loss_config(), AdamConfig(lr=cfg.lr, eps=cfg.adam_eps),
                    seed=cfg.seed, target_sync=cfg.target_sync)


def greedy_policy(agent: IQNAgent):
    return lambda obs: agent.act(observation_features(obs), None, noisy=False)


def evaluate(agent: IQNAgent, cfg: ToyTrainConfig, episodes: int, seed: int) -> list[EpisodeLog]:
    """Noise-free greedy play under the training SABER settings."""
    logs = []
    for i in range(episodes):
        game = toy_ale.make_game(cfg.game, **cfg.game_params)
        rng = np.random.default_rng([seed, i])
        logs.append(run_episode(greedy_policy(agent), cfg.saber_config(), game, rng, seed=seed + i))
    return logs


def optimum_for(cfg: ToyTrainConfig) -> float | None:
    if cfg.game != "toy:chain":
        return None
    params = {"length": 5, **{k: v for k, v in cfg.game_params.items() if k != "seed"}}
    return toy_ale.chain_optimal_return(**params)


def batch_from(transitions, store: ObservationStore, weights=None) -> Batch:
    return Batch(
        states=np.stack([store.get(t.obs_key) for t in transitions]),
        actions=np.array([t.action for t in transitions], dtype=np.int64),
        returns=np.array([t.n_step_return for t in transitions]),
        discounts=np.array([t.discount_pow_n for t in transitions]),
        next_states=np.stack([store.get(t.next_obs_key) for t in transitions]),
        weights=weights,
    )


def train_toy(cfg: ToyTrainConfig, progress=None, dump_dir=None) -> TrainResult:
    """Train on a toy game; evaluate at ``checkpoints`` fractions of the step budget.

    A non-finite loss writes a dump under ``dump_dir`` and re-raises.
    """
    t0 = time.process_time()
    agent = make_agent(cfg)
    store = ObservationStore()
    replay = PrioritizedReplay(cfg.replay_config(), store=store)
    rng = np.random.default_rng([cfg.seed, 1])
    env = SaberEnv(toy_ale.make_game(cfg.game, **cfg.game_params), cfg.saber_config(), rng)
    asm = NStepAssembler(cfg.n_step, cfg.gamma)
    marks = sorted({max(1, int(round(f * cfg.env_steps))) for f in cfg.checkpoints})
    optimum = optimum_for(cfg)
    curve: list[CurvePoint] = []
    episodes: list[EpisodeLog] = []
    pending: list = []
    frames = 0
    episode = 0

    def flush():
        if not pending:
            return
        batch = batch_from(pending, store)
        prios = agent.priorities(batch, rng)
        replay.push_many([Transition(t.obs_key, t.action, t.n_step_return, t.discount_pow_n,
                                     t.next_obs_key, float(p)) for t, p in zip(pending, prios)])
        pending.clear()
        store.collect()

    obs_key = store.add(observation_features(env.reset(cfg.seed)))
    for step in range(1, cfg.env_steps + 1):
        if rng.random() < cfg.epsilon_at(step - 1):
            action = int(rng.integers(toy_ale.N_ACTIONS))
        else:
            action = agent.act(store.get(obs_key), rng)
        obs, res = env.step(action)
        next_key = store.add(observation_features(obs))
        terminal = res.done and res.termination is not None and res.termination.value == "game_over"
        pending.extend(asm.push(obs_key, action, res.clipped_reward, next_key, res.done, terminal))
        if len(pending) >= cfg.priority_batch or res.done:
            flush()
        obs_key = next_key
        if res.done:
            frames += env.frames
            episodes.append(env.episode_log())
            episode += 1
            asm.reset()
            obs_key = store.add(observation_features(env.reset(cfg.seed + episode)))
        if step % cfg.ratio == 0 and len(replay) >= cfg.min_fill:
            beta = cfg.replay_config().beta_at(agent.learner_steps)
            sample = replay.sample(cfg.batch_size, beta, agent.rng)
            batch = batch_from(sample.transitions, store, sample.is_weights)
            try:
                info = agent.train_step(batch)
            except NumericalError as e:
                e.dump_path = write_nan_dump(dump_dir, agent, batch, e)
                raise
            replay.update_priorities(sample.slots, info.priorities, sample.generations)
        if step in marks:
            logs = evaluate(agent, cfg, cfg.eval_episodes, seed=10_000 + step)
            score = training_curve_score([l.raw_score for l in logs], k=cfg.eval_episodes)
            point = CurvePoint(step, frames + (env.frames if env.active else 0), agent.learner_steps, score,
                               None if not optimum else score / optimum)
            curve.append(point)
            if progress:
                progress(point)
    return TrainResult(cfg, agent, curve, optimum, time.process_time() - t0, episodes)
