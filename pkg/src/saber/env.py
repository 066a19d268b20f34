"""SABER environment rules layered over any frame-level emulator.

The wrapper owns everything the benchmark standardizes: sticky actions,
the full 18-action set, game-over-only termination, the stuck-time and
episode-length caps, reward clipping with a rollover guard, and the usual
grayscale / 84x84 / max-pool / frame-stack preprocessing.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

FPS = 60
ROLLOVER_THRESHOLD = -1000.0
FULL_ACTION_SET = 18
OBS_SIZE = 84
LUMA = np.array([0.299, 0.587, 0.114])


class ContractViolation(RuntimeError):
    """The wrapper was used outside its call sequence (e.g. stepping a finished episode)."""


class EmulatorFault(RuntimeError):
    def __init__(self, frame: int, cause: BaseException):
        super().__init__(f"emulator fault at frame {frame}: {cause!r}")
        self.frame = frame
        self.__cause__ = cause


class Emulator(Protocol):
    """What a game backend must provide.

    Call sequence: ``reset(seed)`` once, then ``advance_one_frame(action)``
    until the returned bundle has ``game_over`` set. The backend must be
    deterministic given the seed and action sequence.
    """

    frame_shape: tuple[int, int, int]

    def reset(self, seed: int | None = None): ...

    def advance_one_frame(self, action: int): ...


@dataclass
class SaberConfig:
    sticky_xi: float = 0.25
    action_set_size: int = FULL_ACTION_SET
    max_stuck_frames: int = 5 * 60 * FPS
    max_episode_frames: int = 100 * 3600 * FPS
    action_repeat: int = 4
    frame_stack: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sticky_xi <= 1.0:
            raise ValueError(f"sticky_xi must lie in [0, 1], got {self.sticky_xi}")
        if self.action_set_size != FULL_ACTION_SET:
            raise ValueError("SABER requires the full 18-action set")
        if self.max_stuck_frames < 1 or self.max_episode_frames < 1:
            raise ValueError("frame limits must be positive")
        if self.max_stuck_frames > self.max_episode_frames:
            raise ValueError("max_stuck_frames cannot exceed max_episode_frames")
        if self.action_repeat < 1 or self.frame_stack < 1:
            raise ValueError("action_repeat and frame_stack must be >= 1")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_mapping(cls, values: dict) -> "SaberConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                kwargs[f.name] = float(values[f.name]) if f.type == "float" else int(values[f.name])
        return cls(**kwargs)


class Termination(str, enum.Enum):
    GAME_OVER = "game_over"
    STUCK_TIMEOUT = "stuck_timeout"
    WALL_CAP_REACHED = "wall_cap_reached"
    INFINITE_FLAG = "infinite_flag"


@dataclass
class EpisodeLog:
    raw_score: float
    clipped_return: float
    frames: int
    termination: Termination
    rollover_events: int = 0
    seed: int = 0
    agent_steps: int = 0

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["termination"] = self.termination.value
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EpisodeLog":
        d = json.loads(line)
        d["termination"] = Termination(d["termination"])
        return cls(**d)


def write_episode_logs(path: str | Path, logs: Iterable[EpisodeLog]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(log.to_json() + "\n")


def read_episode_logs(path: str | Path) -> list[EpisodeLog]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeLog.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class ClippedReward:
    clipped: float
    rollover: bool


def clip_reward(raw: float) -> ClippedReward:
    """Clip to [-1, 1]; rewards at or below -1000 are counter rollovers and count as 0."""
    if raw <= ROLLOVER_THRESHOLD:
        return ClippedReward(0.0, True)
    return ClippedReward(min(1.0, max(-1.0, float(raw))), False)


@lru_cache(maxsize=16)
def _resize_plan(n_in: int, n_out: int):
    # half-pixel centres (align_corners=False), edge-clamped
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    return lo, hi, w


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D array.

    Output pixel ``i`` samples input coordinate ``(i + 0.5) * in / out - 0.5``,
    clamped to ``[0, in - 1]``, interpolating linearly between the two
    neighbouring input pixels. This is the OpenCV ``INTER_LINEAR``
    convention; same-size resizes are exact identities.
    """
    h, w = img.shape
    rlo, rhi, rw = _resize_plan(h, out_h)
    clo, chi, cw = _resize_plan(w, out_w)
    rows = img[rlo] * (1.0 - rw)[:, None] + img[rhi] * rw[:, None]
    return rows[:, clo] * (1.0 - cw) + rows[:, chi] * cw


def preprocess_frame(rgb: np.ndarray, size: int = OBS_SIZE) -> np.ndarray:
    """RGB uint8 frame -> ``size x size`` float64 luminance in [0, 255]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise ValueError(f"expected an HxWx3 frame, got shape {rgb.shape}")
    if rgb.shape[0] < 2 or rgb.shape[1] < 2:
        raise ValueError(f"frame too small to resize: {rgb.shape}")
    gray = rgb.astype(np.float64) @ LUMA
    if gray.shape == (size, size):
        return gray
    return bilinear_resize(gray, size, size)


class FrameStack:
    """Ring of the most recent preprocessed frames, oldest first."""

    def __init__(self, depth: int = 4):
        self.depth = depth
        self._ring: deque[np.ndarray] = deque(maxlen=depth)

    def clear(self) -> None:
        self._ring.clear()

    def push(self, frame: np.ndarray) -> None:
        self._ring.append(frame)

    def __len__(self) -> int:
        return len(self._ring)

    def observation(self) -> np.ndarray:
        return stack_frames(list(self._ring), self.depth)


def stack_frames(frames: list[np.ndarray], depth: int = 4) -> np.ndarray:
    """Last ``depth`` frames, oldest first, padding with the earliest seen frame."""
    if not frames:
        raise ValueError("need at least one frame to stack")
    recent = frames[-depth:]
    pad = [recent[0]] * (depth - len(recent))
    return np.stack(pad + recent)


@dataclass
class StepResult:
    pooled_frame: np.ndarray
    clipped_reward: float
    raw_reward: float
    done: bool
    frames: int = 0
    termination: Termination | None = None


class SaberEnv:
    """One episode at a time over an emulator, enforcing the SABER rules.

    ``step`` advances ``action_repeat`` emulator frames. Sticky actions are
    drawn per emulator frame: with probability ``sticky_xi`` the previously
    executed action runs again instead of the requested one. The first frame
    of an episode always executes the requested action.
    """

    def __init__(self, emulator: Emulator, config: SaberConfig | None = None,
                 rng: np.random.Generator | None = None, preprocess: bool = True):
        self.emulator = emulator
        self.config = config or SaberConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.preprocess = preprocess
        self.stack = FrameStack(self.config.frame_stack)
        self.executed_actions: list[int] | None = None
        self._active = False
        self._pool_cache: dict = {}

    def _pooled(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        # read-only frames are immutable, so the identity pair is a valid key;
        # the entry keeps both frames alive so their ids cannot be reused
        key = None
        if not a.flags.writeable and not b.flags.writeable:
            key = (id(a), id(b))
            hit = self._pool_cache.get(key)
            if hit is not None:
                return hit[2]
        pooled = np.maximum(a, b) if a is not b else a
        value = preprocess_frame(pooled) if self.preprocess else pooled
        if key is not None:
            if len(self._pool_cache) >= 1024:
                self._pool_cache.clear()
            self._pool_cache[key] = (a, b, value)
        return value

    def reset(self, seed: int | None = None) -> np.ndarray:
        seed = self.config.seed if seed is None else seed
        bundle = self.emulator.reset(seed)
        self.frames = 0
        self.raw_score = 0.0
        self.clipped_return = 0.0
        self.rollover_events = 0
        self.frames_since_reward = 0
        self.frames_since_positive = 0
        self.agent_steps = 0
        self.termination: Termination | None = None
        self.prev_action: int | None = None
        self._last_raw = [bundle.rgb_frame, bundle.rgb_frame]
        self.stack.clear()
        self.stack.push(self._pooled(*self._last_raw))
        self._active = True
        return self.stack.observation()

    @property
    def active(self) -> bool:
        return self._active

    def observation(self) -> np.ndarray:
        return self.stack.observation()

    def step_sticky(self, requested_action: int) -> StepResult:
        if not self._active:
            raise ContractViolation("step after the episode terminated; call reset()")
        cfg = self.config
        if not 0 <= requested_action < cfg.action_set_size:
            raise ContractViolation(f"action {requested_action} outside the full action set")
        raw_total = 0.0
        xi = cfg.sticky_xi
        draws = self.rng.random(cfg.action_repeat) if 0.0 < xi < 1.0 else None
        for k in range(cfg.action_repeat):
            if self.prev_action is None:
                action = requested_action
            elif xi >= 1.0 or (draws is not None and draws[k] < xi):
                action = self.prev_action
            else:
                action = requested_action
            self.prev_action = action
            if self.executed_actions is not None:
                self.executed_actions.append(action)
            try:
                bundle = self.emulator.advance_one_frame(action)
            except Exception as exc:
                self._active = False
                raise EmulatorFault(self.frames, exc) from exc
            self.frames += 1
            self._last_raw = [self._last_raw[1], bundle.rgb_frame]
            r = bundle.raw_reward
            cr = clip_reward(r)
            if cr.rollover:
                self.rollover_events += 1
            else:
                raw_total += r
            if r != 0.0 and not cr.rollover:
                self.frames_since_reward = 0
            else:
                self.frames_since_reward += 1
            if r > 0.0 and not cr.rollover:
                self.frames_since_positive = 0
            else:
                self.frames_since_positive += 1
            if bundle.game_over:
                self.termination = Termination.GAME_OVER
            elif self.frames_since_reward >= cfg.max_stuck_frames:
                self.termination = Termination.STUCK_TIMEOUT
            elif self.frames >= cfg.max_episode_frames:
                self.termination = (
                    Termination.INFINITE_FLAG
                    if self.frames_since_positive < cfg.max_stuck_frames
                    else Termination.WALL_CAP_REACHED
                )
            if self.termination is not None:
                self._active = False
                break
        # rollover frames are already excluded from raw_total
        clipped = clip_reward(raw_total).clipped
        self.raw_score += raw_total
        self.clipped_return += clipped
        self.agent_steps += 1
        pooled = self._pooled(*self._last_raw)
        self.stack.push(pooled)
        return StepResult(pooled, clipped, raw_total, not self._active, self.frames, self.termination)

    def step(self, action: int) -> tuple[np.ndarray, StepResult]:
        result = self.step_sticky(action)
        return self.stack.observation(), result

    def episode_log(self) -> EpisodeLog:
        if self.termination is None:
            raise ContractViolation("episode still running")
        return EpisodeLog(self.raw_score, self.clipped_return, self.frames, self.termination,
                          self.rollover_events, self.config.seed, self.agent_steps)


Policy = Callable[[np.ndarray], int]


def run_episode(policy: Policy, config: SaberConfig, emulator: Emulator,
                rng: np.random.Generator | None = None, seed: int | None = None) -> EpisodeLog:
    """Play one full episode under the SABER rules and return its log.

    ``policy`` receives the ``frame_stack``-deep observation (oldest frame
    first) and returns an action index in 0..17.
    """
    env = SaberEnv(emulator, config, rng)
    obs = env.reset(seed)
    done = False
    while not done:
        obs, result = env.step(int(policy(obs)))
        done = result.done
    return env.episode_log()


def random_policy(rng: np.random.Generator, n_actions: int = FULL_ACTION_SET) -> Policy:
    return lambda obs: int(rng.integers(n_actions))


def constant_policy(action: int) -> Policy:
    return lambda obs: action


def frames_for(minutes: float = 0.0, hours: float = 0.0) -> int:
    return int(round((minutes * 60 + hours * 3600) * FPS))

