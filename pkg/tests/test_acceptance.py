"""The ten acceptance criteria, one test each, each reporting a PASS/FAIL line."""

import threading
import time

import numpy as np
import pytest
from scipy import stats as sps

from saber import scoring, toy_ale
from saber.env import SaberConfig, SaberEnv, Termination, constant_policy, random_policy, run_episode
from saber.fabric import ActorConfig, LearnerConfig, LockstepGate, actor_run, learner_run, serve_replay, wire
from saber.iqn import Dense, NetworkSpec, QuantileNetwork, copy_params, f_noise, quantile_huber_loss
from saber.iqn.gradcheck import check
from saber.replay import PrioritizedReplay, PySumTree, ReplayConfig, SumTree, Transition, n_step_assemble
from saber.tables import TableSet, checkpoint_reports, verify_tables
from saber.train import ToyTrainConfig, train_toy
from test_wire import rand_message


@pytest.fixture(scope="module")
def verification():
    t0 = time.perf_counter()
    result = verify_tables(TableSet.load())
    return result, time.perf_counter() - t0


def _diffs(result, prefix):
    return [d for d in result.diffs if d.label.startswith(prefix)]


def test_criterion_01_eval_time_table(verification, acceptance_line):
    result, seconds = verification
    diffs = [d for d in result.diffs if d.label.split()[-1] in ("5min", "30min", "unlimited")
             and not d.label.endswith("(re-evaluation)")]
    assert len(diffs) == 6
    medians = ", ".join(f"{d.label}={100 * d.fields[0].actual:.2f}%" for d in diffs)
    ok = all(d.passed for d in diffs) and seconds < 1.0
    acceptance_line(1, "200M medians/means/superhuman counts by eval time", ok, f"{medians}; {seconds:.2f}s")


def test_criterion_02_beginner_scale(verification, acceptance_line):
    result, seconds = verification
    (diff,) = _diffs(result, "world records on beginner scale")
    med, mean = (f.actual for f in diff.fields)
    print("included games:", ", ".join(result.beginner.included))
    ok = diff.passed and seconds < 1.0 and len(result.beginner.included) > 0
    acceptance_line(2, "world records on beginner scale", ok,
                    f"median {med:.1f}x, mean {mean:.0f}x over {len(result.beginner.included)} games")


def test_criterion_03_checkpoint_curves(verification, acceptance_line):
    result, _ = verification
    diffs = [d for d in result.diffs if "checkpoint curve" in d.label]
    tables = TableSet.load()
    monotone = all(
        all(b.median >= a.median for a, b in zip(r, r[1:]))
        for r in (checkpoint_reports(tables, lim) for lim in ("5min", "30min", "unlimited"))
    )
    series = {lim: "/".join(f"{100 * r.median:.2f}" for r in reps) for lim, reps in result.curves.items()}
    ok = len(diffs) == 3 and all(d.passed for d in diffs) and monotone
    acceptance_line(3, "checkpoint median curves monotone and at printed precision", ok,
                    "; ".join(f"{k}: {v}%" for k, v in series.items()))


def test_criterion_04_sticky_actions(acceptance_line):
    t0 = time.perf_counter()
    cfg = SaberConfig(sticky_xi=0.25)
    env = SaberEnv(toy_ale.LoopGame(), cfg, np.random.default_rng(2024), preprocess=False)
    env.executed_actions = []
    env.reset()
    requested = []
    for t in range(100_000 // cfg.action_repeat):
        requested += [t % 18] * cfg.action_repeat
        env.step_sticky(t % 18)
    ex, req = np.array(env.executed_actions), np.array(requested)
    eligible = req[1:] != ex[:-1]
    rate = float(np.mean(ex[1:][eligible] == ex[:-1][eligible]))

    def zero_sticky_run():
        c = SaberConfig(sticky_xi=0.0, max_stuck_frames=20_000, max_episode_frames=20_000)
        e = SaberEnv(toy_ale.ChainGame(), c, np.random.default_rng(5))
        e.executed_actions = []
        obs = [e.reset(9)]
        pol = random_policy(np.random.default_rng(9))
        done = False
        while not done:
            o, r = e.step(pol(None))
            obs.append(o)
            done = r.done
        return e.episode_log(), e.executed_actions, np.stack(obs).tobytes()

    deterministic = zero_sticky_run() == zero_sticky_run()
    seconds = time.perf_counter() - t0
    ok = 0.24 <= rate <= 0.26 and deterministic and len(ex) == 100_000
    acceptance_line(4, "sticky actions", ok,
                    f"repeat rate {rate:.4f} over {len(ex)} frames; xi=0 identical={deterministic}; {seconds:.1f}s")


def test_criterion_05_stuck_and_cap(acceptance_line):
    stuck = run_episode(constant_policy(0), SaberConfig(), toy_ale.StuckGame())
    logs = []
    for scale in (1000, 100):
        cap = 21_600_000 // scale
        logs.append(run_episode(constant_policy(0), SaberConfig(max_episode_frames=cap, max_stuck_frames=18_000),
                                toy_ale.LoopGame()))
    small, large = logs
    proportional = (large.frames == 10 * small.frames and large.raw_score == 10 * small.raw_score
                    and large.frames * 100 == 21_600_000)
    ok = (stuck.termination is Termination.STUCK_TIMEOUT and stuck.frames == 18_000
          and all(l.termination is Termination.INFINITE_FLAG for l in logs) and proportional)
    acceptance_line(5, "stuck timeout and scaled wall cap", ok,
                    f"stuck at {stuck.frames} ({stuck.termination.value}); loop at {large.frames} "
                    f"({large.termination.value}, score {large.raw_score:g}) = 1/100 of the unlimited cap")


def test_criterion_06_rollover(acceptance_line):
    env = SaberEnv(toy_ale.RolloverGame(), SaberConfig(), preprocess=False)
    env.reset()
    scores, done = [], False
    while not done:
        _, r = env.step(0)
        scores.append(env.raw_score)
        done = r.done
    log = env.episode_log()
    monotone = all(b >= a for a, b in zip(scores, scores[1:]))
    ok = monotone and log.rollover_events == 1
    acceptance_line(6, "rollover guard", ok,
                    f"monotone={monotone}, rollover_events={log.rollover_events}, raw_score={log.raw_score:g}")


def _brute_leaf(values, u):
    c = 0.0
    for i, v in enumerate(values):
        if u < c + v:
            return i
        c += v
    return None


def _brute_nstep(rewards, n, gamma, terminal):
    T = len(rewards)
    out = []
    for t in range(T):
        m = min(n, T - t)
        ret = sum(gamma ** k * rewards[t + k] for k in range(m))
        if t + n < T:
            out.append((t, ret, gamma ** n, t + n))
        else:
            out.append((t, ret, 0.0 if terminal else gamma ** m, T))
    return out


def test_criterion_07_replay(acceptance_line):
    rng = np.random.default_rng(7)
    exact = True
    for tree_cls in {SumTree, PySumTree}:
        for n in range(1, 65):
            values = rng.integers(0, 6, size=n).astype(float)
            values[rng.integers(n)] += 1
            tree = tree_cls(n)
            tree.set_many(np.arange(n), values)
            hits = np.zeros(n)
            for k in range(int(values.sum())):
                leaf = tree.find(k + 0.5)
                exact &= leaf == _brute_leaf(values, k + 0.5) and tree.find(float(k)) == _brute_leaf(values, k)
                hits[leaf] += 1
            exact &= bool(np.array_equal(hits, values))

    replay = PrioritizedReplay(ReplayConfig(capacity=50, omega=0.2))
    prios = rng.exponential(size=50) * 10
    for i, p in enumerate(prios):
        replay.push_with_priority(Transition(i, 0, 0.0, 0.99, i + 1, float(p)))
    counts = np.zeros(50)
    for _ in range(100):
        np.add.at(counts, replay.sample(1000, rng=rng).slots, 1)
    leaf = prios ** 0.2
    pvalue = float(sps.chisquare(counts, leaf / leaf.sum() * counts.sum()).pvalue)

    cap = 97
    fuzz = PrioritizedReplay(ReplayConfig(capacity=cap, omega=0.2))
    flat = np.zeros(cap)
    worst = 0.0
    for _ in range(10_000):
        if len(fuzz) == 0 or rng.random() < 0.5:
            p = float(rng.exponential() * 100)
            flat[fuzz.push_with_priority(Transition(0, 0, 0.0, 0.99, 1, p))] = p ** 0.2
        else:
            slots = rng.integers(0, len(fuzz), size=int(rng.integers(1, 5)))
            pr = rng.exponential(size=len(slots)) * 100
            fuzz.update_priorities(slots, pr)
            flat[slots] = pr ** 0.2
        worst = max(worst, abs(fuzz.tree.total - flat.sum()) / flat.sum())

    nstep_ok = True
    for _ in range(1000):
        T, n = int(rng.integers(1, 101)), int(rng.integers(1, 6))
        gamma, terminal = float(rng.uniform(0.5, 1.0)), bool(rng.random() < 0.5)
        rewards = rng.choice([-1.0, 0.0, 1.0], size=T).tolist()
        got = n_step_assemble(list(range(T + 1)), [0] * T, rewards, n, gamma, terminal)
        want = _brute_nstep(rewards, n, gamma, terminal)
        nstep_ok &= len(got) == T and all(
            g.obs_key == t and g.next_obs_key == nxt and abs(g.n_step_return - ret) <= 1e-12
            and abs(g.discount_pow_n - disc) <= 1e-15
            for g, (t, ret, disc, nxt) in zip(got, want))

    ok = exact and pvalue > 0.001 and worst <= 1e-9 and nstep_ok
    acceptance_line(7, "replay sampling, fuzz and n-step", ok,
                    f"exact<=64 leaves={exact}, chi2 p={pvalue:.3g} over 1e5 draws, fuzz max rel {worst:.1e}, "
                    f"n-step 1000 episodes={nstep_ok}")


def _composite_check():
    rng = np.random.default_rng(8)
    spec = NetworkSpec(input_kind="flat", input_shape=(5,), hidden=(6, 7), head_hidden=5, n_actions=4)
    net = QuantileNetwork(spec)
    p = net.init_params(rng)
    for k in p:
        if k.endswith("sigma"):
            p[k] = p[k] + rng.normal(0, 0.1, p[k].shape)
    noise = net.noisy_resample(rng)
    x, taus = rng.normal(size=(3, 5)), rng.random((3, 4))
    actions, y, w = np.array([0, 3, 1]), rng.normal(size=(3, 6)), rng.random(3)

    def loss(q):
        theta, _ = net.forward(q, x, taus, noise)
        return quantile_huber_loss(theta[np.arange(3), :, actions], taus, y, 1.0, w).loss

    theta, cache = net.forward(p, x, taus, noise)
    r = quantile_huber_loss(theta[np.arange(3), :, actions], taus, y, 1.0, w)
    d = np.zeros_like(theta)
    d[np.arange(3), :, actions] = r.dtheta
    return check(loss, net.backward(p, cache, d), p)


def test_criterion_08_numerical_core(acceptance_line):
    rng = np.random.default_rng(0)
    layer = Dense("l", 4, 3, noisy=True)
    p = {}
    layer.init(rng, p, 0.5, np.float64)
    p = {k: v + rng.normal(0, 0.1, v.shape) for k, v in p.items()}
    noise = {"l": (f_noise(rng.normal(size=4)), f_noise(rng.normal(size=3)))}
    x, R = rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 5, 3))
    _, cache = layer.forward(p, x, noise)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    layer.backward(p, cache, R, grads)
    noisy_ok, noisy_errs = check(lambda q: float((layer.forward(q, x, noise)[0] * R).sum()), grads, p)

    comp_ok, errs = _composite_check()
    head = max(v for k, v in errs.items() if k.startswith(("value", "adv")))
    embed = max(v for k, v in errs.items() if k.startswith("embed"))

    huber_err = 0.0
    for _ in range(500):
        th, yv = rng.normal(scale=3, size=2)
        u = yv - th
        oracle = 0.5 * (0.5 * u * u if abs(u) <= 1.0 else abs(u) - 0.5)
        huber_err = max(huber_err, abs(quantile_huber_loss([[th]], [[0.5]], [[yv]], 1.0).loss - oracle))

    net = QuantileNetwork(NetworkSpec(input_kind="flat", input_shape=(5,), hidden=(6,), head_hidden=5, n_actions=4))
    params = net.init_params(rng)
    xs, ts = rng.normal(size=(4, 5)), rng.random((4, 8))
    nz = net.noisy_resample(rng)
    a, _ = net.forward(params, xs, ts, nz)
    shifted = copy_params(params)
    shifted["adv1.b_mu"] = shifted["adv1.b_mu"] + 3.5
    b, _ = net.forward(shifted, xs, ts, nz)
    shift = float(np.abs(a - b).max())

    ok = noisy_ok and comp_ok and head <= 1e-4 and embed <= 1e-4 and huber_err <= 1e-12 and shift <= 1e-12
    acceptance_line(8, "gradient checks, Huber reduction, dueling invariance", ok,
                    f"noisy layer {max(noisy_errs.values()):.1e}, dueling head {head:.1e}, embedding {embed:.1e}, "
                    f"composite {max(errs.values()):.1e}; huber |d| {huber_err:.1e}; shift |d| {shift:.1e}")


def test_criterion_09_toy_learning(acceptance_line):
    rows, ok = [], True
    for seed in range(5):
        res = train_toy(ToyTrainConfig(seed=seed))
        frac = res.final_fraction
        passed = frac is not None and frac >= 0.95 and res.seconds < 600
        ok &= passed
        rows.append(f"seed {seed}: {res.curve[-1].score:g}/{res.optimum:g}={frac:.3f} in {res.seconds:.0f} CPU-s")
    acceptance_line(9, "ChainGame(5) >= 95% of optimum at 50k steps, 5 seeds", ok, "; ".join(rows))


def test_criterion_10_distributed_fabric(acceptance_line, tmp_path):
    # two free-running actors against one service and one learner
    server, service = serve_replay(("127.0.0.1", 0), ReplayConfig(capacity=20_000), LockstepGate(min_fill=500))
    addr = server.server_address[:2]
    box, ready, halt = {}, threading.Event(), threading.Event()

    def learner():
        box["learner"] = learner_run(addr, LearnerConfig(min_fill=500, publish_interval=25), stop=halt,
                                     on_ready=lambda a: (box.setdefault("addr", a), ready.set()))

    lt = threading.Thread(target=learner)
    lt.start()
    ready.wait(30)
    results = []
    actors = [threading.Thread(target=lambda i=i: results.append(
        actor_run("toy:chain", addr, box["addr"], SaberConfig(seed=i), ActorConfig(env_steps=5000, seed=i))))
        for i in range(2)]
    for t in actors:
        t.start()
    for t in actors:
        t.join(600)
    halt.set()
    lt.join(60)
    s = service.stats()
    server.shutdown()
    server.server_close()
    sent = sum(r.transitions for r in results)
    reconciled = sent == s["put_transitions"] == s["insertions"] == s["size"] == 10_000 and s["rejected"] == 0

    # single actor in lockstep
    server, service = serve_replay(("127.0.0.1", 0), ReplayConfig(capacity=20_000),
                                   LockstepGate(enabled=True, min_fill=64))
    addr = server.server_address[:2]
    box2, ready2 = {}, threading.Event()

    def learner2():
        box2["learner"] = learner_run(addr, LearnerConfig(min_fill=64, max_steps=1000, publish_interval=50),
                                      on_ready=lambda a: (box2.setdefault("addr", a), ready2.set()))

    lt = threading.Thread(target=learner2)
    lt.start()
    ready2.wait(30)
    a = actor_run("toy:chain", addr, box2["addr"], SaberConfig(seed=3), ActorConfig(env_steps=4000, seed=3))
    lt.join(600)
    server.shutdown()
    server.server_close()
    steps = box2["learner"].steps
    lockstep = abs(steps - a.env_steps / 4) <= 1

    rng = np.random.default_rng(10)
    failures = 0
    for _ in range(10_000):
        msg = rand_message(rng)
        try:
            if wire.decode(wire.encode(msg)) != msg:
                failures += 1
        except wire.WireError:
            failures += 1

    ok = reconciled and lockstep and failures == 0
    acceptance_line(10, "distributed fabric", ok,
                    f"2 actors sent {sent}, service inserted {s['insertions']} (rejected {s['rejected']}); "
                    f"lockstep {a.env_steps} env steps -> {steps} learner steps; wire fuzz failures {failures}/10000")
