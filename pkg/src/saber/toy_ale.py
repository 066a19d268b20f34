"""Deterministic miniature emulators for exercising the SABER wrapper.

Each game implements the emulator contract used by :mod:`saber.env`:
``reset(seed)`` and ``advance_one_frame(action)`` returning a
:class:`FrameBundle`, plus ``frame_shape``. Actions follow the 18-entry
Atari joystick layout; actions a game does not use are no-ops.

Every frame is 210x160 RGB. Common layout:

* rows 0-9: timer/status bar (game specific, may be empty)
* rows 10-19: one 10x10 block per remaining life, starting at column 4,
  spaced 14 columns apart, colour ``LIFE``
* rows 60-150: the play field, described per game

Frames are returned read-only and reused while the visible state is
unchanged, so callers may key caches on object identity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable

import numpy as np

FRAME_H, FRAME_W = 210, 160
N_ACTIONS = 18

NOOP, FIRE, UP, RIGHT, LEFT, DOWN = 0, 1, 2, 3, 4, 5
ACTION_NAMES = (
    "NOOP", "FIRE", "UP", "RIGHT", "LEFT", "DOWN",
    "UPRIGHT", "UPLEFT", "DOWNRIGHT", "DOWNLEFT",
    "UPFIRE", "RIGHTFIRE", "LEFTFIRE", "DOWNFIRE",
    "UPRIGHTFIRE", "UPLEFTFIRE", "DOWNRIGHTFIRE", "DOWNLEFTFIRE",
)

ROLLOVER_POINTS = 1_000_000

BACKGROUND = (0, 0, 0)
LIFE = (200, 72, 72)
PLAYER = (236, 236, 236)
CELL = (45, 50, 184)
GOAL = (110, 156, 66)
TIMER = (252, 188, 116)
ACCENT = (214, 214, 42)


_BLANK = np.zeros((FRAME_H, FRAME_W, 3), dtype=np.uint8)
_BLANK.flags.writeable = False


class EmulatorContractError(RuntimeError):
    """The emulator was driven outside its documented call sequence."""


def horizontal(action: int) -> int:
    name = ACTION_NAMES[action]
    if "RIGHT" in name:
        return 1
    if "LEFT" in name:
        return -1
    return 0


def vertical(action: int) -> int:
    name = ACTION_NAMES[action]
    if name.startswith("UP"):
        return -1
    if name.startswith("DOWN"):
        return 1
    return 0


def is_fire(action: int) -> bool:
    return "FIRE" in ACTION_NAMES[action]


@dataclass(frozen=True)
class FrameBundle:
    raw_reward: float
    rgb_frame: np.ndarray
    lives: int
    game_over: bool


_FRAME_CACHE = 512


class ToyGame:
    """Base class: frame bookkeeping, life bar and frame caching."""

    game_id = "toy:base"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.frame_index = 0
        self.lives = 1
        self.game_over = False
        # visual state -> read-only frame; identical states return the same object
        self._frames: dict = {}
        self._headless = False

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (FRAME_H, FRAME_W, 3)

    @property
    def action_count(self) -> int:
        return N_ACTIONS

    # subclass hooks
    def _reset_state(self) -> None:
        raise NotImplementedError

    def _advance(self, action: int) -> float:
        raise NotImplementedError

    def _visual_state(self) -> tuple:
        raise NotImplementedError

    def _draw(self, canvas: np.ndarray) -> None:
        raise NotImplementedError

    def reset(self, seed: int | None = None) -> FrameBundle:
        if seed is not None:
            self.seed = seed
        self.frame_index = 0
        self.game_over = False
        self._reset_state()
        return FrameBundle(0.0, self.render(), self.lives, False)

    def advance_one_frame(self, action: int) -> FrameBundle:
        if self.game_over:
            raise EmulatorContractError(f"{self.game_id}: advance_one_frame after game over")
        if not 0 <= int(action) < N_ACTIONS:
            raise EmulatorContractError(f"{self.game_id}: action {action} outside 0..17")
        reward = float(self._advance(int(action)))
        self.frame_index += 1
        return FrameBundle(reward, self.render(), self.lives, self.game_over)

    def render(self) -> np.ndarray:
        if self._headless:
            return _BLANK
        key = (self.lives, self._visual_state())
        frame = self._frames.get(key)
        if frame is None:
            if len(self._frames) >= _FRAME_CACHE:
                self._frames.clear()
            frame = np.zeros((FRAME_H, FRAME_W, 3), dtype=np.uint8)
            for i in range(self.lives):
                frame[10:20, 4 + 14 * i: 14 + 14 * i] = LIFE
            self._draw(frame)
            frame.flags.writeable = False
            self._frames[key] = frame
        return frame

    def clone_state(self) -> "ToyGame":
        """Independent copy of the game state, for search oracles.

        State attributes are immutable scalars and cached frames are
        read-only, so a shallow copy is enough.
        """
        return copy.copy(self)


class ChainGame(ToyGame):
    """A corridor of ``length`` cells with a distant big reward and a nearby trap.

    The player moves one cell on every ``move_period``-th frame (frames whose
    index is ``move_period - 1`` modulo ``move_period``) according to the
    joystick's horizontal component. Reaching the right end pays +10 and
    sends the player back to cell 0. Pressing plain DOWN (or DOWNFIRE) in
    cell 0 pays +1 and freezes the player for ``loop_period`` moves, a
    repeatable but worse loop. The game ends after ``horizon_frames``.

    Layout: cells are ``160 // length`` wide on rows 80-119, colour ``CELL``,
    rightmost cell ``GOAL``; the player fills its cell with ``PLAYER``. While
    frozen in the loop a ``ACCENT`` block covers rows 130-149 under cell 0.
    Row band 0-9 is a ``TIMER`` bar whose width shrinks with remaining time.
    """

    game_id = "toy:chain"

    def __init__(self, length: int = 5, horizon_frames: int = 500, move_period: int = 4,
                 loop_period: int = 8, goal_reward: float = 10.0, loop_reward: float = 1.0,
                 seed: int = 0):
        if length < 2:
            raise ValueError("chain length must be >= 2")
        if horizon_frames > 500:
            raise ValueError("chain horizon is capped at 500 frames")
        super().__init__(seed)
        self.length = length
        self.horizon_frames = horizon_frames
        self.move_period = move_period
        self.loop_period = loop_period
        self.goal_reward = goal_reward
        self.loop_reward = loop_reward
        self._reset_state()

    def _reset_state(self) -> None:
        self.position = 0
        self.frozen = 0
        self.lives = 1

    def _advance(self, action: int) -> float:
        reward = 0.0
        if self.frame_index % self.move_period == self.move_period - 1:
            if self.frozen:
                self.frozen -= 1
            elif self.position == 0 and ACTION_NAMES[action] in ("DOWN", "DOWNFIRE"):
                reward = self.loop_reward
                self.frozen = self.loop_period - 1
            else:
                self.position = max(0, self.position + horizontal(action))
                if self.position == self.length - 1:
                    reward = self.goal_reward
                    self.position = 0
        if self.frame_index + 1 >= self.horizon_frames:
            self.game_over = True
        return reward

    def _visual_state(self) -> tuple:
        # timer bar quantised to 16 steps so the cache stays useful
        remaining = (self.horizon_frames - self.frame_index) * 16 // self.horizon_frames
        return (self.position, self.frozen > 0, remaining)

    def _draw(self, canvas: np.ndarray) -> None:
        remaining = (self.horizon_frames - self.frame_index) * 16 // self.horizon_frames
        canvas[0:10, 0: remaining * FRAME_W // 16] = TIMER
        w = FRAME_W // self.length
        for i in range(self.length):
            color = GOAL if i == self.length - 1 else CELL
            canvas[80:120, i * w + 1: (i + 1) * w - 1] = color
        canvas[80:120, self.position * w + 1: (self.position + 1) * w - 1] = PLAYER
        if self.frozen:
            canvas[130:150, 1: w - 1] = ACCENT

    @property
    def agent_ticks(self) -> int:
        return self.horizon_frames // self.move_period


def chain_optimal_return(length: int, horizon_frames: int = 500, move_period: int = 4,
                         loop_period: int = 8, goal_reward: float = 10.0, loop_reward: float = 1.0) -> float:
    """Closed-form best raw return of :class:`ChainGame`.

    A lap costs ``length - 1`` move ticks; a loop pays on its first tick and
    then blocks for ``loop_period - 1`` more. Laps and loops both start and
    end in cell 0, so only their counts matter.
    """
    ticks = horizon_frames // move_period
    lap = length - 1
    best = 0.0
    for laps in range(ticks // lap + 1):
        left = ticks - laps * lap
        loops = -(-left // loop_period)
        best = max(best, laps * goal_reward + loops * loop_reward)
    return best


def exhaustive_optimal_return(game: ToyGame, action_repeat: int = 4, max_steps: int | None = None,
                              actions: range = range(N_ACTIONS)) -> float:
    """Best undiscounted raw return over all agent-level action sequences.

    Exhaustive search over every action at every agent step (each held for
    ``action_repeat`` frames, no sticky actions). Game states reached by
    different prefixes are merged when their full state matches, which keeps
    the search exact while making it tractable.
    """
    start = game.clone_state()
    start._headless = True
    start.reset(game.seed)
    frontier: dict[tuple, tuple[float, ToyGame]] = {_state_key(start): (0.0, start)}
    best = 0.0
    step = 0
    while frontier and (max_steps is None or step < max_steps):
        nxt: dict[tuple, tuple[float, ToyGame]] = {}
        for ret, g in frontier.values():
            for a in actions:
                child = g.clone_state()
                total = ret
                for _ in range(action_repeat):
                    total += child.advance_one_frame(a).raw_reward
                    if child.game_over:
                        break
                best = max(best, total)
                if child.game_over:
                    continue
                key = _state_key(child)
                if key not in nxt or nxt[key][0] < total:
                    nxt[key] = (total, child)
        frontier = nxt
        step += 1
    return best


def _state_key(g: ToyGame) -> tuple:
    return tuple(sorted((k, v) for k, v in vars(g).items() if not k.startswith("_")))


class LivesGame(ToyGame):
    """Pays +1 every ``reward_period`` frames; the hazard action costs a life.

    The game is over only when the last life is lost. Layout: life blocks in
    the status row; a ``PLAYER`` block at rows 100-119, columns 70-89.
    """

    game_id = "toy:lives"

    def __init__(self, lives: int = 3, hazard_action: int = DOWN, reward_period: int = 30, seed: int = 0):
        super().__init__(seed)
        self.start_lives = lives
        self.hazard_action = hazard_action
        self.reward_period = reward_period
        self._reset_state()

    def _reset_state(self) -> None:
        self.lives = self.start_lives

    def _advance(self, action: int) -> float:
        if action == self.hazard_action:
            self.lives -= 1
            if self.lives <= 0:
                self.lives = 0
                self.game_over = True
            return 0.0
        return 1.0 if (self.frame_index + 1) % self.reward_period == 0 else 0.0

    def _visual_state(self) -> tuple:
        return ()

    def _draw(self, canvas: np.ndarray) -> None:
        canvas[100:120, 70:90] = PLAYER


class StuckGame(ToyGame):
    """Animates for ``freeze_frame`` frames, then freezes forever without reward.

    ``reward_frames`` optionally lists frame numbers (1-based, at most
    ``freeze_frame``) that pay +1 before the freeze. Layout: a ``PLAYER``
    block whose column tracks ``frame_index`` until the freeze.
    """

    game_id = "toy:stuck"

    def __init__(self, freeze_frame: int = 100, reward_frames: tuple[int, ...] = (), seed: int = 0):
        super().__init__(seed)
        if any(f > freeze_frame for f in reward_frames):
            raise ValueError("rewards must come before the freeze")
        self.freeze_frame = freeze_frame
        self.reward_frames = frozenset(reward_frames)
        self._reset_state()

    def _reset_state(self) -> None:
        self.lives = 1

    def _advance(self, action: int) -> float:
        return 1.0 if (self.frame_index + 1) in self.reward_frames else 0.0

    def _visual_state(self) -> tuple:
        return (min(self.frame_index, self.freeze_frame) % 140,)

    def _draw(self, canvas: np.ndarray) -> None:
        x = min(self.frame_index, self.freeze_frame) % 140
        canvas[100:120, x: x + 20] = PLAYER


class RolloverGame(ToyGame):
    """Scores ``points`` every ``period`` frames with a 6-digit score counter.

    On the frame the internal score passes a multiple of 1,000,000 the
    emulator reports a raw reward of exactly -1,000,000 (the counter
    wrapping), as observed on real cartridges. The game ends after
    ``total_frames``. Layout: a ``TIMER`` bar on rows 0-9 whose width tracks
    the displayed counter.
    """

    game_id = "toy:rollover"

    def __init__(self, points: float = 10_000.0, period: int = 4, total_frames: int = 600, seed: int = 0):
        super().__init__(seed)
        self.points = points
        self.period = period
        self.total_frames = total_frames
        self._reset_state()

    def _reset_state(self) -> None:
        self.score = 0.0
        self.lives = 1

    def _advance(self, action: int) -> float:
        reward = 0.0
        if (self.frame_index + 1) % self.period == 0:
            before = self.score
            self.score += self.points
            if self.score // ROLLOVER_POINTS > before // ROLLOVER_POINTS:
                reward = -float(ROLLOVER_POINTS)
            else:
                reward = self.points
        if self.frame_index + 1 >= self.total_frames:
            self.game_over = True
        return reward

    def _visual_state(self) -> tuple:
        return (int(self.score % ROLLOVER_POINTS) * 16 // ROLLOVER_POINTS,)

    def _draw(self, canvas: np.ndarray) -> None:
        shown = int(self.score % ROLLOVER_POINTS) * 16 // ROLLOVER_POINTS
        canvas[0:10, 0: shown * FRAME_W // 16] = TIMER


class FireStartGame(ToyGame):
    """Nothing happens until FIRE (action 1) is pressed, again after every lost life.

    While running it pays +1 every ``reward_period`` frames; the hazard
    action loses a life and returns to the waiting state. Layout: an
    ``ACCENT`` block at rows 60-79 while waiting for FIRE; ``PLAYER`` block
    at rows 100-119 while running.
    """

    game_id = "toy:fire"

    def __init__(self, lives: int = 3, hazard_action: int = DOWN, reward_period: int = 8, seed: int = 0):
        super().__init__(seed)
        self.start_lives = lives
        self.hazard_action = hazard_action
        self.reward_period = reward_period
        self._reset_state()

    def _reset_state(self) -> None:
        self.lives = self.start_lives
        self.running = False
        self.run_frames = 0

    def _advance(self, action: int) -> float:
        if not self.running:
            if action == FIRE:
                self.running = True
                self.run_frames = 0
            return 0.0
        if action == self.hazard_action:
            self.lives -= 1
            self.running = False
            if self.lives <= 0:
                self.lives = 0
                self.game_over = True
            return 0.0
        self.run_frames += 1
        return 1.0 if self.run_frames % self.reward_period == 0 else 0.0

    def _visual_state(self) -> tuple:
        return (self.running,)

    def _draw(self, canvas: np.ndarray) -> None:
        if self.running:
            canvas[100:120, 70:90] = PLAYER
        else:
            canvas[60:80, 60:100] = ACCENT


class LoopGame(ToyGame):
    """Pays +1 every ``period`` frames forever and never ends.

    Stands in for agents that never die. Layout: a ``PLAYER`` block at rows
    100-119 whose column cycles with the reward period.
    """

    game_id = "toy:loop"

    def __init__(self, period: int = 60, seed: int = 0):
        super().__init__(seed)
        self.period = period
        self._reset_state()

    def _reset_state(self) -> None:
        self.lives = 1

    def _advance(self, action: int) -> float:
        return 1.0 if (self.frame_index + 1) % self.period == 0 else 0.0

    def _visual_state(self) -> tuple:
        return ((self.frame_index % self.period) * 8 // self.period,)

    def _draw(self, canvas: np.ndarray) -> None:
        x = (self.frame_index % self.period) * 8 // self.period * 17
        canvas[100:120, x: x + 20] = PLAYER


REGISTRY: dict[str, Callable[..., ToyGame]] = {
    "toy:chain": ChainGame,
    "toy:lives": LivesGame,
    "toy:stuck": StuckGame,
    "toy:rollover": RolloverGame,
    "toy:fire": FireStartGame,
    "toy:loop": LoopGame,
}


def make_game(game_id: str, **params) -> ToyGame:
    try:
        factory = REGISTRY[game_id]
    except KeyError:
        raise KeyError(f"unknown game {game_id!r}; known: {', '.join(sorted(REGISTRY))}") from None
    return factory(**params)
