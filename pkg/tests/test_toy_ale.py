import numpy as np
import pytest

from saber import toy_ale
from saber.toy_ale import (
    FIRE,
    ChainGame,
    EmulatorContractError,
    chain_optimal_return,
    exhaustive_optimal_return,
    make_game,
)


def test_chain_default_optimum():
    assert chain_optimal_return(5) == 311.0


@pytest.mark.parametrize("length,horizon,loop", [(2, 40, 8), (3, 64, 4), (4, 100, 3), (5, 120, 8), (8, 200, 2)])
def test_closed_form_matches_exhaustive_search(length, horizon, loop):
    game = ChainGame(length=length, horizon_frames=horizon, loop_period=loop)
    exact = exhaustive_optimal_return(game)
    assert exact == chain_optimal_return(length, horizon, loop_period=loop)


def test_exhaustive_default_chain():
    assert exhaustive_optimal_return(ChainGame(5), actions=range(6)) == 311.0


def test_always_right_is_near_optimal_but_not_optimal():
    g = ChainGame(5)
    g.reset()
    total = 0.0
    while not g.game_over:
        total += g.advance_one_frame(toy_ale.RIGHT).raw_reward
    assert total == 310.0


@pytest.mark.parametrize("game_id", sorted(toy_ale.REGISTRY))
def test_determinism_and_frame_contract(game_id):
    def trace():
        g = make_game(game_id)
        b = g.reset(3)
        frames, rewards = [b.rgb_frame.copy()], []
        rng = np.random.default_rng(0)
        for _ in range(300):
            if g.game_over:
                break
            b = g.advance_one_frame(int(rng.integers(18)))
            frames.append(b.rgb_frame.copy())
            rewards.append(b.raw_reward)
        return np.stack(frames), rewards

    (f1, r1), (f2, r2) = trace(), trace()
    assert np.array_equal(f1, f2) and r1 == r2
    assert f1.shape[1:] == (210, 160, 3) and f1.dtype == np.uint8


def test_frames_read_only_and_reused():
    g = toy_ale.LoopGame(period=60)
    a = g.reset().rgb_frame
    assert not a.flags.writeable
    for _ in range(60):
        b = g.advance_one_frame(0).rgb_frame
    assert b is a


@pytest.mark.parametrize("bad", [-1, 18])
def test_action_out_of_range(bad):
    g = ChainGame()
    g.reset()
    with pytest.raises(EmulatorContractError):
        g.advance_one_frame(bad)


def test_advance_after_game_over():
    g = ChainGame(horizon_frames=4)
    g.reset()
    for _ in range(4):
        g.advance_one_frame(0)
    assert g.game_over
    with pytest.raises(EmulatorContractError):
        g.advance_one_frame(0)


def test_unknown_game():
    with pytest.raises(KeyError, match="toy:chain"):
        make_game("toy:nope")


def test_lives_drawn_and_lost():
    g = toy_ale.LivesGame(lives=3)
    f = g.reset().rgb_frame
    assert (f[15, 4:146:14] == toy_ale.LIFE).all(axis=-1).sum() == 3
    b = g.advance_one_frame(toy_ale.DOWN)
    assert b.lives == 2 and not b.game_over
    assert (b.rgb_frame[15, 4:146:14] == toy_ale.LIFE).all(axis=-1).sum() == 2
    g.advance_one_frame(toy_ale.DOWN)
    assert g.advance_one_frame(toy_ale.DOWN).game_over


def test_fire_start_needs_fire():
    g = toy_ale.FireStartGame(reward_period=2)
    g.reset()
    assert sum(g.advance_one_frame(0).raw_reward for _ in range(50)) == 0
    g.advance_one_frame(FIRE)
    assert sum(g.advance_one_frame(0).raw_reward for _ in range(10)) == 5
    g.advance_one_frame(toy_ale.DOWN)
    assert sum(g.advance_one_frame(0).raw_reward for _ in range(10)) == 0


def test_stuck_game_freezes_visually():
    g = toy_ale.StuckGame(freeze_frame=10)
    g.reset()
    frames = [g.advance_one_frame(0).rgb_frame for _ in range(30)]
    assert all(f is frames[10] for f in frames[10:])
    assert frames[3] is not frames[4]
    with pytest.raises(ValueError):
        toy_ale.StuckGame(freeze_frame=10, reward_frames=(11,))


def test_rollover_emits_single_wrap():
    g = toy_ale.RolloverGame()
    g.reset()
    rewards = []
    while not g.game_over:
        rewards.append(g.advance_one_frame(0).raw_reward)
    assert rewards.count(-1_000_000.0) == 1
    assert rewards.index(-1_000_000.0) == 4 * 100 - 1


def test_chain_loop_freezes_player():
    g = ChainGame(loop_period=3)
    g.reset()
    rewards = [g.advance_one_frame(toy_ale.DOWN).raw_reward for _ in range(24)]
    # one loop payment per loop_period move ticks
    assert sum(rewards) == 2.0
    with pytest.raises(ValueError):
        ChainGame(length=1)
