"""Quantile Huber loss, distributional double-Q targets and loss-derived priorities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import QuantileNetwork, sample_taus

PRIORITY_FLOOR = 1e-6


@dataclass
class LossConfig:
    n_tau: int = 8
    n_tau_prime: int = 8
    k_policy: int = 32
    kappa: float = 1.0
    gamma: float = 0.99
    n_step: int = 3

    def __post_init__(self):
        if min(self.n_tau, self.n_tau_prime, self.k_policy, self.n_step) < 1:
            raise ValueError("sample counts and n_step must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


@dataclass
class LossResult:
    loss: float
    per_transition: np.ndarray
    dtheta: np.ndarray  # d loss / d theta, same shape as theta


def huber(u, kappa: float = 1.0):
    a = np.abs(u)
    return np.where(a <= kappa, 0.5 * u * u, kappa * (a - 0.5 * kappa))


def quantile_huber_loss(theta, taus, targets, kappa: float = 1.0, weights=None) -> LossResult:
    """Pairwise asymmetric Huber loss between online quantiles and target samples.

    ``theta`` and ``taus`` are ``(B, N)``, ``targets`` is ``(B, N')``. For each
    transition the pairwise penalty ``|tau - 1{u<0}| * L_kappa(u) / kappa`` with
    ``u = target_j - theta_i`` is averaged over ``i`` and summed over ``j``.
    The scalar loss is the batch mean of ``weights * per_transition``.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    B, N = theta.shape
    u = targets[:, None, :] - theta[:, :, None]  # B, N, N'
    neg = (u < 0).astype(np.float64)
    scale = np.abs(taus[:, :, None] - neg)
    rho = scale * huber(u, kappa) / kappa
    per = rho.sum(axis=2).mean(axis=1)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float((w * per).mean())
    dhuber = np.clip(u, -kappa, kappa)
    drho_du = scale * dhuber / kappa
    dtheta = -drho_du.sum(axis=2) / N * (w / B)[:, None]
    return LossResult(loss, per, dtheta)


def priority_of(per_transition_loss) -> np.ndarray:
    loss = np.asarray(per_transition_loss, dtype=np.float64)
    if np.any(loss < 0) or np.any(np.isnan(loss)):
        raise ValueError("per-transition losses must be non-negative")
    return loss + PRIORITY_FLOOR


def build_target(net: QuantileNetwork, online, target, next_states, returns, discounts,
                 cfg: LossConfig, rng: np.random.Generator, online_noise=None, target_noise=None,
                 policy_taus=None, target_taus=None):
    """Target quantile samples ``(B, N')`` for a batch of n-step transitions.

    The bootstrap action comes from the online parameters' mean quantile
    value; the samples themselves come from the target parameters.
    """
    next_states = np.asarray(next_states)
    B = next_states.shape[0]
    if policy_taus is None:
        policy_taus = sample_taus(cfg.k_policy, rng, batch=B)
    if target_taus is None:
        target_taus = sample_taus(cfg.n_tau_prime, rng, batch=B)
    q_next = net.q_values(online, next_states, taus=policy_taus, noise=online_noise)
    a_star = q_next.argmax(axis=1)
    theta_t, _ = net.forward(target, next_states, target_taus, target_noise)
    chosen = theta_t[np.arange(B), :, a_star].astype(np.float64)
    y = np.asarray(returns, dtype=np.float64)[:, None] + np.asarray(discounts, dtype=np.float64)[:, None] * chosen
    return y, a_star
