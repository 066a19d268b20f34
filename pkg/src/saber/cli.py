"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 missing or invalid data,
3 numerical abort, 4 distributed peer unreachable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import threading
import time
from pathlib import Path

import numpy as np

from . import scoring, toy_ale
from .config import ConfigError, format_config, read_config

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_PEER = 4


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------- parser

def _add_saber_flags(p):
    g = p.add_argument_group("SABER settings")
    g.add_argument("--sticky", dest="sticky_xi", type=float, default=0.25, help="sticky-action probability")
    g.add_argument("--max-stuck-frames", dest="max_stuck_frames", type=int, default=18_000)
    g.add_argument("--max-episode-frames", dest="max_episode_frames", type=int, default=21_600_000)
    g.add_argument("--action-repeat", dest="action_repeat", type=int, default=4)
    g.add_argument("--frame-stack", dest="frame_stack", type=int, default=4)


def _add_replay_flags(p):
    g = p.add_argument_group("replay")
    g.add_argument("--capacity", type=int, default=50_000)
    g.add_argument("--omega", type=float, default=0.2, help="priority exponent")
    g.add_argument("--n-step", dest="n_step", type=int, default=3)
    g.add_argument("--gamma", type=float, default=0.99)


def _add_loss_flags(p):
    g = p.add_argument_group("loss")
    g.add_argument("--n-tau", dest="n_tau", type=int, default=8)
    g.add_argument("--n-tau-prime", dest="n_tau_prime", type=int, default=8)
    g.add_argument("--k-policy", dest="k_policy", type=int, default=32)
    g.add_argument("--kappa", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="run directory (config.echo, episodes.jsonl, report.json, figures/)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="saber", description="Atari-style evaluation protocol toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common], help="normalize a raw-score table against world records")
    p.add_argument("table", help="CSV path or shipped dataset name (riqn_5min, riqn_30min, riqn_saber, eval_time)")
    p.add_argument("--limit", choices=[e.value for e in scoring.EvalTimeLimit],
                   help="evaluation time limit for frame-count columns")
    p.add_argument("--baselines", help="baseline CSV (default: shipped)")
    p.add_argument("--mean-cap", dest="mean_cap", type=float, default=scoring.DEFAULT_MEAN_CAP)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("report", parents=[common], help="write report.json and figure data for a score table")
    p.add_argument("table")
    p.add_argument("--limit", choices=[e.value for e in scoring.EvalTimeLimit])
    p.add_argument("--baselines")
    p.add_argument("--mean-cap", dest="mean_cap", type=float, default=scoring.DEFAULT_MEAN_CAP)

    p = sub.add_parser("verify-tables", parents=[common], help="recompute the published summary statistics")
    p.add_argument("--json", action="store_true")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--mean-cap", dest="mean_cap", type=float, default=scoring.DEFAULT_MEAN_CAP)

    p = sub.add_parser("eval", parents=[common], help="play episodes on a registered game")
    p.add_argument("--game", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--policy", default="random", help="random | noop | constant:K | checkpoint:PATH")
    _add_saber_flags(p)

    p = sub.add_parser("train-toy", parents=[common], help="single-process Rainbow-IQN training on a toy game")
    p.add_argument("--game", default="toy:chain")
    p.add_argument("--steps", type=int, default=50_000, help="environment steps")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--adam-eps", dest="adam_eps", type=float, default=3.125e-4)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--target-sync", dest="target_sync", type=int, default=500)
    p.add_argument("--min-fill", dest="min_fill", type=int, default=1_000)
    p.add_argument("--ratio", type=int, default=4)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=3)
    p.add_argument("--checkpoints", type=_floats, default=(0.05, 0.25, 0.5, 1.0),
                   help="evaluation points as fractions of --steps")
    p.add_argument("--sticky", dest="sticky_xi", type=float, default=0.25)
    _add_replay_flags(p)
    _add_loss_flags(p)

    p = sub.add_parser("sweep-omega", parents=[common], help="train-toy over several priority exponents")
    p.add_argument("--game", default="toy:chain")
    p.add_argument("--omegas", type=_floats, default=(0.1, 0.15, 0.2, 0.25))
    p.add_argument("--seeds", type=_ints, default=(0,))
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--target-sync", dest="target_sync", type=int, default=500)
    p.add_argument("--sticky", dest="sticky_xi", type=float, default=0.25)

    p = sub.add_parser("serve-replay", parents=[common], help="run the replay service")
    p.add_argument("--bind", default="127.0.0.1:7070")
    p.add_argument("--lockstep", action="store_true")
    p.add_argument("--ratio", type=int, default=4)
    p.add_argument("--lead", type=int, default=64)
    p.add_argument("--min-fill", dest="min_fill", type=int, default=1_000)
    p.add_argument("--duration", type=float, default=0.0, help="seconds to serve (0 = until interrupted)")
    _add_replay_flags(p)

    p = sub.add_parser("actor", parents=[common], help="run one actor")
    p.add_argument("--game", default="toy:chain")
    p.add_argument("--replay", required=True, help="replay host:port")
    p.add_argument("--learner", help="learner host:port (omit to act with local initial parameters)")
    p.add_argument("--env-steps", dest="env_steps", type=int, default=5_000)
    p.add_argument("--flush-size", dest="flush_size", type=int, default=64)
    p.add_argument("--param-interval", dest="param_interval", type=int, default=400)
    p.add_argument("--epsilon", type=float, default=0.0, help="extra epsilon-random actions (default noisy-only)")
    p.add_argument("--n-step", dest="n_step", type=int, default=3)
    p.add_argument("--gamma", type=float, default=0.99)
    _add_saber_flags(p)

    p = sub.add_parser("learner", parents=[common], help="run the learner")
    p.add_argument("--replay", required=True)
    p.add_argument("--bind", default="127.0.0.1:7071", help="parameter server address")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--min-fill", dest="min_fill", type=int, default=1_000)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--adam-eps", dest="adam_eps", type=float, default=3.125e-4)
    p.add_argument("--publish-interval", dest="publish_interval", type=int, default=100)
    p.add_argument("--target-sync", dest="target_sync", type=int, default=8_000)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int, default=100_000)
    _add_loss_flags(p)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, filling unset options from ``--config``."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    sub = next(a for a in ap._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, text in values.items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise ConfigError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        if action.nargs == 0:  # store_true
            defaults[key] = text.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = text
    sp.set_defaults(**defaults)
    return ap.parse_args(argv)


# -------------------------------------------------------------- helpers

def _prepare_out(args, echo: dict) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(format_config({"command": args.command, **echo}))
    return out


def _echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("command", "config", "out", "verbose", "json")}


def _load_table(args):
    limit = scoring.EvalTimeLimit(args.limit) if args.limit else None
    path = Path(args.table)
    if not path.exists():
        if args.table in scoring.DATASETS:
            path = scoring.dataset_path(args.table)
            if limit is None and args.table.startswith("riqn_"):
                limit = {"riqn_5min": scoring.EvalTimeLimit.FIVE_MIN, "riqn_30min": scoring.EvalTimeLimit.THIRTY_MIN,
                         "riqn_saber": scoring.EvalTimeLimit.UNLIMITED}[args.table]
        else:
            raise FileNotFoundError(args.table)
    table = scoring.load_score_table(path, limit)
    baselines = scoring.load_baseline_table(args.baselines) if args.baselines else scoring.load_shipped_baselines()
    return table, baselines


def _reports(table, baselines, mean_cap):
    return [
        scoring.aggregate(scoring.normalize_scores(col, baselines), mean_cap=mean_cap,
                          checkpoint_frames=next(iter(col.values())).train_frames, label=name)
        for name, col in table.items()
    ]


def _pct(x: float) -> str:
    return "inf" if math.isinf(x) else f"{100 * x:.2f}%"


# -------------------------------------------------------------- commands

def cmd_score(args) -> int:
    table, baselines = _load_table(args)
    reports = _reports(table, baselines, args.mean_cap)
    _prepare_out(args, _echo(args))
    if args.json:
        print(json.dumps([r.to_dict() for r in reports], indent=1))
    else:
        print(f"{'column':<14} {'frames':>12} {'median':>9} {'mean':>9} {'superhuman':>10}")
        for r in reports:
            print(f"{r.label:<14} {r.checkpoint_frames:>12} {_pct(r.median):>9} {_pct(r.mean):>9} "
                  f"{r.superhuman_count:>10}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .figures import emit_figure_data

    table, baselines = _load_table(args)
    reports = _reports(table, baselines, args.mean_cap)
    out = _prepare_out(args, _echo(args)) or Path(".")
    (out / "report.json").write_text(json.dumps({"reports": [r.to_dict() for r in reports]}, indent=1) + "\n")
    for path in emit_figure_data(reports, out / "figures"):
        print(path)
    return EXIT_OK


def cmd_verify_tables(args) -> int:
    from .tables import TableSet, verify_tables

    t0 = time.perf_counter()
    try:
        tables = TableSet.load(args.data_dir)
    except (FileNotFoundError, scoring.DatasetError) as e:
        print(f"missing or invalid dataset: {e}", file=sys.stderr)
        return EXIT_DATA
    result = verify_tables(tables, args.mean_cap)
    if args.json:
        d = result.to_dict()
        d["meta"] = {"seconds": time.perf_counter() - t0}
        print(json.dumps(d, indent=1))
    else:
        for line in result.lines():
            print(line)
        print("verify-tables:", "PASS" if result.passed else "FAIL")
    out = _prepare_out(args, _echo(args))
    if out:
        (out / "report.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    return EXIT_OK if result.passed else EXIT_VERIFY


def _saber_config(args):
    from .env import SaberConfig

    return SaberConfig(sticky_xi=args.sticky_xi, max_stuck_frames=args.max_stuck_frames,
                       max_episode_frames=args.max_episode_frames, action_repeat=args.action_repeat,
                       frame_stack=args.frame_stack, seed=args.seed)


def _policy(spec: str, rng):
    from .env import constant_policy, random_policy

    if spec == "random":
        return random_policy(rng), False
    if spec == "noop":
        return constant_policy(toy_ale.NOOP), False
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return constant_policy(int(arg)), False
    if kind == "checkpoint":
        from .iqn import IQNAgent, checkpoint
        from .train import observation_features

        params, spec_, _, _ = checkpoint.load(arg)
        agent = IQNAgent(spec_)
        agent.params = params
        return (lambda obs: agent.act(observation_features(obs), None, noisy=False)), True
    raise ValueError(f"unknown policy {spec!r}")


def cmd_eval(args) -> int:
    from .env import SaberEnv, write_episode_logs

    if args.game not in toy_ale.REGISTRY:
        print(f"unknown game {args.game!r}; registered: {', '.join(sorted(toy_ale.REGISTRY))}", file=sys.stderr)
        return EXIT_DATA
    cfg = _saber_config(args)
    rng = np.random.default_rng(args.seed)
    policy, needs_obs = _policy(args.policy, np.random.default_rng([args.seed, 1]))
    logs = []
    for i in range(args.episodes):
        env = SaberEnv(toy_ale.make_game(args.game), cfg, rng, preprocess=needs_obs)
        obs = env.reset(args.seed + i)
        done = False
        while not done:
            obs, res = env.step(int(policy(obs)))
            done = res.done
        log = env.episode_log()
        logs.append(log)
        print(log.to_json())
    scores = [l.raw_score for l in logs]
    summary = {
        "game": args.game,
        "episodes": len(logs),
        "mean_raw_score": float(np.mean(scores)),
        "terminations": {t: sum(l.termination.value == t for l in logs) for t in sorted({l.termination.value for l in logs})},
    }
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    out = _prepare_out(args, {**_echo(args), **{"saber." + k: v for k, v in cfg.__dict__.items()}})
    if out:
        write_episode_logs(out / "episodes.jsonl", logs)
        (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _toy_config(args, **over):
    from .train import ToyTrainConfig

    fields = ToyTrainConfig.__dataclass_fields__
    values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    values["env_steps"] = args.steps
    if "checkpoints" in values:
        values["checkpoints"] = tuple(values["checkpoints"])
    values.update(over)
    return ToyTrainConfig(**values)


def cmd_train_toy(args) -> int:
    from .iqn import NumericalError, checkpoint
    from .train import train_toy

    if not args.game.startswith("toy:") or args.game not in toy_ale.REGISTRY:
        print(f"train-toy needs a registered toy game, got {args.game!r}", file=sys.stderr)
        return EXIT_DATA
    cfg = _toy_config(args)
    out = _prepare_out(args, cfg.to_dict())
    try:
        result = train_toy(cfg, dump_dir=out, progress=lambda p: print(
            f"steps={p.env_steps} learner={p.learner_steps} score={p.score:.1f}"
            + (f" fraction={p.fraction:.3f}" if p.fraction is not None else ""), flush=True))
    except NumericalError as e:
        where = getattr(e, "dump_path", None)
        print(f"numerical abort: {e}" + (f"; state dumped to {where}" if where else ""), file=sys.stderr)
        return EXIT_NUMERIC
    if out:
        (out / "curve.csv").write_text(result.curve_csv())
        checkpoint.save(out / "checkpoint.bin", result.agent.params, result.agent.spec,
                        result.agent.learner_steps, {"config": cfg.to_dict()})
        from .env import write_episode_logs

        write_episode_logs(out / "episodes.jsonl", result.episodes)
        report = {
            "optimum": result.optimum,
            "final_score": result.curve[-1].score if result.curve else None,
            "final_fraction": result.final_fraction,
            "learner_steps": result.agent.learner_steps,
            "meta": {"cpu_seconds": result.seconds},
        }
        (out / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    else:
        sys.stdout.write(result.curve_csv())
    return EXIT_OK


def cmd_sweep_omega(args) -> int:
    from .iqn import NumericalError
    from .train import train_toy

    rows = ["omega,seed,final_score,final_fraction"]
    for omega in args.omegas:
        if not 0.0 <= omega <= 1.0:
            print(f"omega must lie in [0, 1], got {omega}", file=sys.stderr)
            return EXIT_DATA
        for seed in args.seeds:
            cfg = _toy_config(args, omega=omega, seed=seed)
            try:
                res = train_toy(cfg)
            except NumericalError as e:
                print(f"numerical abort at omega={omega} seed={seed}: {e}", file=sys.stderr)
                return EXIT_NUMERIC
            p = res.curve[-1]
            frac = "" if p.fraction is None else f"{p.fraction:.6f}"
            rows.append(f"{omega},{seed},{p.score:.6f},{frac}")
            print(rows[-1], flush=True)
    out = _prepare_out(args, _echo(args))
    if out:
        (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


def cmd_serve_replay(args) -> int:
    from .fabric import LockstepGate, parse_address, serve_replay
    from .replay import ReplayConfig

    cfg = ReplayConfig(capacity=args.capacity, omega=args.omega, n_step=args.n_step, gamma=args.gamma)
    gate = LockstepGate(enabled=args.lockstep, ratio=args.ratio, lead=args.lead, min_fill=args.min_fill)
    server, service = serve_replay(parse_address(args.bind), cfg, gate, args.seed)
    host, port = server.server_address[:2]
    print(f"replay listening on {host}:{port}", flush=True)
    _prepare_out(args, _echo(args))
    try:
        if args.duration > 0:
            time.sleep(args.duration)
        else:
            threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
        print(json.dumps(service.stats(), sort_keys=True), flush=True)
    return EXIT_OK


def cmd_actor(args) -> int:
    from .fabric import ActorConfig, FabricError, actor_run, parse_address

    cfg = ActorConfig(env_steps=args.env_steps, flush_size=args.flush_size, param_interval=args.param_interval,
                      n_step=args.n_step, gamma=args.gamma, epsilon=args.epsilon, seed=args.seed)
    _prepare_out(args, _echo(args))
    try:
        res = actor_run(args.game, parse_address(args.replay),
                        parse_address(args.learner) if args.learner else None, _saber_config(args), cfg)
    except FabricError as e:
        print(f"actor: {e}", file=sys.stderr)
        return EXIT_PEER
    print(json.dumps({"env_steps": res.env_steps, "transitions": res.transitions, "batches": res.batches,
                      "episodes": len(res.episodes), "last_version": res.versions[-1] if res.versions else None}))
    return EXIT_OK


def cmd_learner(args) -> int:
    from .fabric import FabricError, LearnerConfig, learner_run, parse_address
    from .iqn import LossConfig, NumericalError

    cfg = LearnerConfig(batch_size=args.batch_size, min_fill=args.min_fill, max_steps=args.max_steps,
                        publish_interval=args.publish_interval, target_sync=args.target_sync,
                        checkpoint_interval=args.checkpoint_interval,
                        checkpoint_dir=str(Path(args.out) / "checkpoints") if args.out else None,
                        lr=args.lr, adam_eps=args.adam_eps, seed=args.seed,
                        loss=LossConfig(args.n_tau, args.n_tau_prime, args.k_policy, args.kappa))
    _prepare_out(args, _echo(args))
    try:
        res = learner_run(parse_address(args.replay), cfg, parse_address(args.bind),
                          on_ready=lambda a: print(f"parameters served on {a[0]}:{a[1]}", flush=True))
    except NumericalError as e:
        print(f"learner: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FabricError as e:
        print(f"learner: {e}", file=sys.stderr)
        return EXIT_PEER
    print(json.dumps({"steps": res.steps, "version": res.version, "checkpoints": res.checkpoints}))
    return EXIT_OK


COMMANDS = {
    "score": cmd_score,
    "report": cmd_report,
    "verify-tables": cmd_verify_tables,
    "eval": cmd_eval,
    "train-toy": cmd_train_toy,
    "sweep-omega": cmd_sweep_omega,
    "serve-replay": cmd_serve_replay,
    "actor": cmd_actor,
    "learner": cmd_learner,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (ConfigError, FileNotFoundError) as e:
        print(f"saber: {e}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, scoring.DatasetError) as e:
        print(f"saber: missing or invalid data: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, scoring.ScoringError) as e:
        print(f"saber: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
