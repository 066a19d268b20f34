"""n-step transition assembly from a stream of single environment steps."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence


@dataclass(frozen=True)
class NStepTransition:
    obs_key: Hashable
    action: int
    n_step_return: float
    discount_pow_n: float
    next_obs_key: Hashable


class NStepAssembler:
    """Turns (obs, action, reward, next_obs) steps into n-step transitions.

    A transition for step ``t`` is emitted once ``n`` later steps are known or
    the episode ends. On a terminal end the bootstrap discount is 0; on a
    truncation (time limit, stuck timeout) the episode is bootstrapped from
    the last observation with ``gamma**m`` for the ``m`` steps available.
    """

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.n = n
        self.gamma = gamma
        self._window: deque = deque()

    def _emit_front(self, next_obs_key, discount: float) -> NStepTransition:
        ret = 0.0
        g = 1.0
        for _, _, r in self._window:
            ret += g * r
            g *= self.gamma
        obs, action, _ = self._window.popleft()
        return NStepTransition(obs, action, ret, discount, next_obs_key)

    def push(self, obs_key, action: int, reward: float, next_obs_key,
             done: bool = False, terminal: bool = True) -> list[NStepTransition]:
        self._window.append((obs_key, int(action), float(reward)))
        out = []
        if done:
            while self._window:
                m = len(self._window)
                out.append(self._emit_front(next_obs_key, 0.0 if terminal else self.gamma ** m))
        elif len(self._window) == self.n:
            out.append(self._emit_front(next_obs_key, self.gamma ** self.n))
        return out

    def reset(self) -> None:
        self._window.clear()

    def pending_keys(self) -> list:
        """Observation keys of steps still waiting for their n-step window."""
        return [obs for obs, _, _ in self._window]

    def __len__(self) -> int:
        return len(self._window)


def n_step_assemble(observations: Sequence, actions: Sequence[int], rewards: Sequence[float],
                    n: int, gamma: float, terminal: bool = True) -> list[NStepTransition]:
    """Assemble a whole episode. ``observations`` has one more entry than ``actions``."""
    if not (len(observations) == len(actions) + 1 == len(rewards) + 1):
        raise ValueError("need len(observations) == len(actions) + 1 == len(rewards) + 1")
    asm = NStepAssembler(n, gamma)
    out: list[NStepTransition] = []
    T = len(actions)
    for t in range(T):
        out.extend(asm.push(observations[t], actions[t], rewards[t], observations[t + 1],
                            done=(t == T - 1), terminal=terminal))
    return out


def iter_assemble(steps: Iterable[tuple], n: int, gamma: float):
    """Streaming form: ``steps`` yields ``(obs, action, reward, next_obs, done, terminal)``."""
    asm = NStepAssembler(n, gamma)
    for obs, action, reward, next_obs, done, terminal in steps:
        yield from asm.push(obs, action, reward, next_obs, done, terminal)
        if done:
            asm.reset()
