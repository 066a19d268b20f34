"""Online/target parameter pair with the full training update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adam import AdamConfig, AdamState, NumericalError, adam_step
from .loss import LossConfig, build_target, priority_of, quantile_huber_loss
from .network import NetworkSpec, QuantileNetwork, copy_params, sample_taus


@dataclass
class Batch:
    """Dense arrays for a batch of n-step transitions."""

    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    discounts: np.ndarray
    next_states: np.ndarray
    weights: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class StepInfo:
    loss: float
    per_transition: np.ndarray
    priorities: np.ndarray
    grad_norm: float
    synced: bool = False


@dataclass
class IQNAgent:
    spec: NetworkSpec
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    adam_cfg: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    target_sync: int = 8000
    dtype: type = np.float32

    def __post_init__(self):
        self.net = QuantileNetwork(self.spec)
        self.rng = np.random.default_rng(self.seed)
        self.params = self.net.init_params(self.rng, self.dtype)
        self.target_params = copy_params(self.params)
        self.opt_state = AdamState()
        self.learner_steps = 0

    # -- acting --

    def act(self, state, rng: np.random.Generator, noisy: bool = True) -> int:
        noise = self.net.noisy_resample(rng) if noisy else None
        q = self.net.q_values(self.params, np.asarray(state)[None], noise=noise,
                              k=self.loss_cfg.k_policy, rng=rng if noisy else None)
        return int(q[0].argmax())

    # -- learning --

    def evaluate(self, batch: Batch, rng: np.random.Generator, params=None, target_params=None,
                 with_grads: bool = False):
        params = self.params if params is None else params
        target_params = self.target_params if target_params is None else target_params
        cfg = self.loss_cfg
        B = len(batch)
        online_noise = self.net.noisy_resample(rng)
        target_noise = self.net.noisy_resample(rng)
        y, _ = build_target(self.net, params, target_params, batch.next_states, batch.returns,
                            batch.discounts, cfg, rng, online_noise, target_noise)
        taus = sample_taus(cfg.n_tau, rng, batch=B)
        theta, cache = self.net.forward(params, batch.states, taus, online_noise)
        actions = np.asarray(batch.actions, dtype=np.int64)
        chosen = theta[np.arange(B), :, actions]
        res = quantile_huber_loss(chosen, taus, y, cfg.kappa, batch.weights)
        if not np.isfinite(res.loss):
            bad = int((~np.isfinite(y)).any(axis=1).sum())
            raise NumericalError(f"non-finite loss {res.loss} ({bad} of {B} transitions have non-finite targets)")
        grads = None
        if with_grads:
            dtheta = np.zeros(theta.shape, dtype=np.float64)
            dtheta[np.arange(B), :, actions] = res.dtheta
            grads = self.net.backward(params, cache, dtheta)
        return res, grads

    def priorities(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        res, _ = self.evaluate(batch, rng)
        return priority_of(res.per_transition)

    def train_step(self, batch: Batch) -> StepInfo:
        res, grads = self.evaluate(batch, self.rng, with_grads=True)
        gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        adam_step(self.params, grads, self.opt_state, self.adam_cfg)
        self.learner_steps += 1
        synced = self.learner_steps % self.target_sync == 0
        if synced:
            self.sync_target()
        return StepInfo(res.loss, res.per_transition, priority_of(res.per_transition), gnorm, synced)

    def sync_target(self) -> None:
        self.target_params = copy_params(self.params)
