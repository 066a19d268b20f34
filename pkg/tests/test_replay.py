import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from saber.replay import (
    CySumTree,
    NStepAssembler,
    ObservationStore,
    PrioritizedReplay,
    PySumTree,
    ReplayConfig,
    ReplayError,
    Transition,
    n_step_assemble,
)

BACKENDS = [PySumTree] + ([CySumTree] if CySumTree is not None else [])


@pytest.fixture(params=BACKENDS, ids=lambda c: c.__module__.rsplit(".", 1)[-1])
def tree_cls(request):
    return request.param


def tr(priority, i=0):
    return Transition(i, 0, 0.0, 0.99, i + 1, priority)


def brute_leaf(values, u):
    c = 0.0
    for i, v in enumerate(values):
        if u < c + v:
            return i
        c += v
    raise AssertionError("u outside total")


# ---- sum-tree ----

def test_internal_nodes_are_child_sums(tree_cls):
    t = tree_cls(13)
    rng = np.random.default_rng(0)
    for i in range(13):
        t.set(i, float(rng.integers(0, 50)))
    tree = t.tree
    for node in range(1, t.leaves):
        assert tree[node] == tree[2 * node] + tree[2 * node + 1]
    assert t.total == sum(t.leaf_values())


@pytest.mark.parametrize("n_leaves", [1, 2, 3, 7, 16, 33, 64])
def test_inverse_cdf_is_exact_on_integer_trees(tree_cls, n_leaves):
    rng = np.random.default_rng(n_leaves)
    values = rng.integers(0, 9, size=n_leaves).astype(float)
    values[rng.integers(n_leaves)] += 1  # at least one positive leaf
    t = tree_cls(n_leaves)
    t.set_many(np.arange(n_leaves), values)
    total = int(values.sum())
    hits = np.zeros(n_leaves)
    for k in range(total):
        for frac in (0.0, 0.5):
            leaf = t.find(k + frac)
            assert leaf == brute_leaf(values, k + frac)
        hits[t.find(k + 0.5)] += 1
    # each leaf owns exactly value-many unit intervals, so its mass is exact
    np.testing.assert_array_equal(hits, values)


def test_find_never_returns_zero_leaf_at_right_edge(tree_cls):
    t = tree_cls(8)
    t.set(2, 0.1)
    t.set(3, 0.2)
    assert t.find(t.total) == 3
    assert t.find(math.nextafter(t.total, 0.0)) == 3
    assert t.find(-1.0) == 2


def test_find_many_matches_find(tree_cls):
    t = tree_cls(50)
    rng = np.random.default_rng(1)
    t.set_many(np.arange(50), rng.random(50))
    us = rng.random(200) * t.total
    np.testing.assert_array_equal(t.find_many(us), [t.find(u) for u in us])


def test_set_rejects_negative_and_nan(tree_cls):
    t = tree_cls(4)
    with pytest.raises(ValueError):
        t.set(0, -1.0)
    with pytest.raises(ValueError):
        t.set(0, float("nan"))
    with pytest.raises(IndexError):
        t.set(4, 1.0)


def test_backends_agree():
    if CySumTree is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(5)
    a, b = PySumTree(100), CySumTree(100)
    for _ in range(500):
        i, v = int(rng.integers(100)), float(rng.random())
        a.set(i, v)
        b.set(i, v)
    np.testing.assert_array_equal(a.tree, b.tree)
    us = rng.random(1000) * a.total
    np.testing.assert_array_equal(a.find_many(us), b.find_many(us))


# ---- buffer ----

def test_push_into_empty_store():
    r = PrioritizedReplay(ReplayConfig(capacity=4, omega=0.2))
    assert r.push_with_priority(tr(3.0)) == 0
    assert r.tree.total == pytest.approx(3.0 ** 0.2, rel=1e-15)


def test_ring_overwrites_oldest():
    r = PrioritizedReplay(ReplayConfig(capacity=4))
    slots = [r.push_with_priority(tr(1.0, i)) for i in range(5)]
    assert slots == [0, 1, 2, 3, 0]
    assert r.transition(0).obs_key == 4
    assert len(r) == 4 and r.overwrites == 1


def test_nan_and_negative_priorities_rejected():
    r = PrioritizedReplay(ReplayConfig(capacity=4))
    with pytest.raises(ReplayError):
        r.push_with_priority(tr(float("nan")))
    with pytest.raises(ReplayError):
        tr(-1.0)
    r.push_with_priority(tr(1.0))
    with pytest.raises(ReplayError):
        r.update_priorities([0], [-0.5])
    with pytest.raises(ReplayError):
        r.update_priorities([0], [float("nan")])


def test_zero_priority_never_sampled():
    r = PrioritizedReplay(ReplayConfig(capacity=8, omega=0.5))
    r.push_with_priority(tr(0.0, 0))
    r.push_with_priority(tr(2.0, 1))
    r.push_with_priority(tr(0.0, 2))
    b = r.sample(256, rng=np.random.default_rng(0))
    assert set(b.slots.tolist()) == {1}


def test_empty_store_sample_raises():
    with pytest.raises(ReplayError):
        PrioritizedReplay(ReplayConfig(capacity=4)).sample(1)


def test_probabilities_direct_normalisation():
    r = PrioritizedReplay(ReplayConfig(capacity=2, omega=1.0))
    r.push_with_priority(tr(1.0))
    r.push_with_priority(tr(3.0))
    b = r.sample(4, rng=np.random.default_rng(0))  # one stratum per unit of mass
    probs = dict(zip(b.slots.tolist(), b.probabilities.tolist()))
    assert probs == {0: 0.25, 1: 0.75}


def test_omega_zero_is_uniform():
    r = PrioritizedReplay(ReplayConfig(capacity=4, omega=0.0))
    for p in (0.1, 5.0, 100.0, 1e-6):
        r.push_with_priority(tr(p))
    b = r.sample(4, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(b.probabilities, 0.25)
    np.testing.assert_array_equal(b.is_weights, 1.0)


@pytest.mark.parametrize("beta", [0.0, 0.4, 1.0])
def test_uniform_priorities_give_unit_weights(beta):
    r = PrioritizedReplay(ReplayConfig(capacity=16, omega=0.7))
    for i in range(10):
        r.push_with_priority(tr(2.0, i))
    b = r.sample(32, beta=beta, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(b.is_weights, 1.0)


def test_is_weights_formula_and_range():
    rng = np.random.default_rng(2)
    r = PrioritizedReplay(ReplayConfig(capacity=32, omega=0.6))
    pr = rng.random(20) + 0.01
    for i, p in enumerate(pr):
        r.push_with_priority(tr(float(p), i))
    b = r.sample(64, beta=0.5, rng=rng)
    leaf = pr ** 0.6
    P = leaf[b.slots] / leaf.sum()
    w = (20 * P) ** -0.5
    np.testing.assert_allclose(b.is_weights, w / w.max(), rtol=1e-12)
    assert b.is_weights.max() == 1.0
    assert np.all(b.is_weights > 0) and np.all(b.is_weights <= 1.0)


def test_chi_square_sampling_distribution():
    rng = np.random.default_rng(3)
    r = PrioritizedReplay(ReplayConfig(capacity=40, omega=0.2))
    pr = rng.exponential(size=40) * 10
    for i, p in enumerate(pr):
        r.push_with_priority(tr(float(p), i))
    counts = np.zeros(40)
    for _ in range(100):
        b = r.sample(1000, rng=rng)
        np.add.at(counts, b.slots, 1)
    leaf = pr ** 0.2
    expected = leaf / leaf.sum() * counts.sum()
    # stratification reduces variance, which only raises the p-value
    assert sps.chisquare(counts, expected).pvalue > 0.001


def test_update_then_uniform():
    r = PrioritizedReplay(ReplayConfig(capacity=8, omega=1.0))
    for i in range(8):
        r.push_with_priority(tr(float(i + 1), i))
    r.update_priorities(np.arange(8), np.full(8, 0.3))
    b = r.sample(8, rng=np.random.default_rng(0))
    np.testing.assert_allclose(b.probabilities, 1 / 8, rtol=1e-12)


def test_stale_slot_skipped():
    r = PrioritizedReplay(ReplayConfig(capacity=2, omega=1.0))
    r.push_with_priority(tr(1.0, 0))
    r.push_with_priority(tr(1.0, 1))
    b = r.sample(2, rng=np.random.default_rng(0))
    r.push_with_priority(tr(7.0, 2))  # overwrites slot 0
    applied = r.update_priorities(b.slots, [5.0, 5.0], b.generations)
    assert applied == 1 and r.stale_updates == 1
    assert r.tree.get(0) == 7.0 and r.tree.get(1) == 5.0


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda c: c.__module__.rsplit(".", 1)[-1])
def test_fuzz_root_matches_flat_sum(backend):
    rng = np.random.default_rng(4)
    cap = 97
    r = PrioritizedReplay(ReplayConfig(capacity=cap, omega=0.2), tree_cls=backend)
    flat = np.zeros(cap)
    for _ in range(10_000):
        if len(r) == 0 or rng.random() < 0.5:
            p = float(rng.exponential() * 100)
            s = r.push_with_priority(tr(p))
            flat[s] = p ** 0.2
        else:
            k = int(rng.integers(1, 5))
            slots = rng.integers(0, len(r), size=k)
            pr = rng.exponential(size=k) * 100
            r.update_priorities(slots, pr)
            for s, p in zip(slots, pr):
                flat[s] = p ** 0.2
        assert abs(r.tree.total - flat.sum()) <= 1e-9 * flat.sum()


def test_beta_schedule():
    cfg = ReplayConfig(beta_horizon=100)
    assert cfg.beta_at(0) == 0.4
    assert cfg.beta_at(50) == pytest.approx(0.7)
    assert cfg.beta_at(100) == 1.0 and cfg.beta_at(10**9) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        ReplayConfig(omega=1.5)
    with pytest.raises(ValueError):
        ReplayConfig(beta_start=-0.1)


def test_observation_refcounts_follow_ring():
    store = ObservationStore()
    r = PrioritizedReplay(ReplayConfig(capacity=2), store=store)
    keys = [store.add(np.full(3, i, dtype=np.uint8)) for i in range(4)]
    for i in range(3):
        r.push_with_priority(Transition(keys[i], 0, 0.0, 0.9, keys[i + 1], 1.0))
    assert keys[0] not in store  # first transition overwritten
    assert store.refcount(keys[1]) == 1 and store.refcount(keys[2]) == 2
    assert store.add(np.full(3, 2, dtype=np.uint8)) == keys[2]  # dedup by content


# ---- n-step ----

def brute_nstep(rewards, n, gamma, terminal):
    T = len(rewards)
    out = []
    for t in range(T):
        m = min(n, T - t)
        ret = sum(gamma ** k * rewards[t + k] for k in range(m))
        if t + n < T:
            disc, nxt = gamma ** n, t + n
        else:
            disc, nxt = (0.0 if terminal else gamma ** m), T
        out.append((t, ret, disc, nxt))
    return out


def test_nstep_hand_examples():
    out = n_step_assemble([0, 1, 2, 3], [0, 0, 0], [1.0, 0.0, 1.0], 3, 0.5, terminal=False)
    assert out[0].n_step_return == 1.25 and out[0].discount_pow_n == 0.125
    out = n_step_assemble([0, 1, 2], [0, 0], [1.0, 2.0], 3, 0.9, terminal=True)
    assert out[0].n_step_return == pytest.approx(2.8) and out[0].discount_pow_n == 0.0
    out = n_step_assemble([0, 1, 2, 3], [0, 0, 0], [4.0, 5.0, 6.0], 1, 0.9)
    assert [t.n_step_return for t in out] == [4.0, 5.0, 6.0]


def test_nstep_matches_bruteforce_on_random_episodes():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        T = int(rng.integers(1, 101))
        n = int(rng.integers(1, 6))
        gamma = float(rng.uniform(0.5, 1.0))
        terminal = bool(rng.random() < 0.5)
        rewards = rng.choice([-1.0, 0.0, 1.0], size=T).tolist()
        got = n_step_assemble(list(range(T + 1)), [0] * T, rewards, n, gamma, terminal)
        want = brute_nstep(rewards, n, gamma, terminal)
        assert len(got) == T
        for g, (t, ret, disc, nxt) in zip(got, want):
            assert g.obs_key == t and g.next_obs_key == nxt
            assert g.n_step_return == pytest.approx(ret, abs=1e-12)
            assert g.discount_pow_n == pytest.approx(disc, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30), st.integers(1, 5))
def test_nstep_streaming_emits_in_order(rewards, n):
    asm = NStepAssembler(n, 0.99)
    emitted = []
    for t, r in enumerate(rewards):
        emitted += asm.push(t, 0, r, t + 1, done=(t == len(rewards) - 1))
    assert [e.obs_key for e in emitted] == list(range(len(rewards)))
    assert len(asm) == 0
