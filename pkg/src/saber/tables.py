"""Recompute the published summary statistics from the shipped raw tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from . import scoring
from .scoring import (
    DiffReport,
    EvalTimeLimit,
    EvaluationReport,
    FieldDiff,
    aggregate,
    beginner_baseline_stats,
    dataset_path,
    expected_triple,
    load_baseline_table,
    load_expectations,
    load_score_table,
    normalize_scores,
    verify_published,
)

CHECKPOINTS = ("10M", "50M", "100M", "200M")
TIME_LIMITS = ("5min", "30min", "unlimited")
AGENTS = {"riqn": "Rainbow-IQN", "rainbow": "Rainbow"}
# eval-time table column suffixes
_EVAL_COLUMN = {"5min": "5min", "30min": "30min", "unlimited": "saber"}
# per-checkpoint tables, by evaluation time
_CURVE_TABLE = {"5min": "riqn_5min", "30min": "riqn_30min", "unlimited": "riqn_saber"}
_CURVE_LIMIT = {
    "5min": EvalTimeLimit.FIVE_MIN,
    "30min": EvalTimeLimit.THIRTY_MIN,
    "unlimited": EvalTimeLimit.UNLIMITED,
}

BEGINNER_REL_TOL = 0.10
MEAN_TOL = 0.01
MEDIAN_TOL = 0.0005


@dataclass
class TableSet:
    baselines: dict
    eval_time: dict
    curves: dict
    expectations: dict

    @classmethod
    def load(cls, data_dir: str | Path | None = None) -> "TableSet":
        def path(name):
            if data_dir is None:
                return dataset_path(name)
            return Path(data_dir) / scoring.DATASETS[name]

        baselines = load_baseline_table(path("baselines"))
        eval_time = load_score_table(path("eval_time"))
        curves = {
            limit: load_score_table(path(name), _CURVE_LIMIT[limit])
            for limit, name in _CURVE_TABLE.items()
        }
        return cls(baselines, eval_time, curves, load_expectations(path("expectations")))


def eval_time_report(tables: TableSet, agent: str, limit: str, mean_cap: float = 2.0) -> EvaluationReport:
    column = tables.eval_time[f"{agent}_{_EVAL_COLUMN[limit]}"]
    return aggregate(
        normalize_scores(column, tables.baselines),
        mean_cap=mean_cap,
        checkpoint_frames=200_000_000,
        label=f"{AGENTS[agent]} {limit}",
    )


def checkpoint_reports(tables: TableSet, limit: str, mean_cap: float = 2.0) -> list[EvaluationReport]:
    table = tables.curves[limit]
    out = []
    for ckpt in CHECKPOINTS:
        column = table[ckpt]
        frames = next(iter(column.values())).train_frames
        out.append(
            aggregate(
                normalize_scores(column, tables.baselines),
                mean_cap=mean_cap,
                checkpoint_frames=frames,
                label=f"Rainbow-IQN {limit} @{ckpt}",
            )
        )
    return out


def consistency_failures(tables: TableSet, rel_tol: float = 1e-9) -> list[str]:
    """Cross-check the 200M column of each checkpoint table against the eval-time table.

    Both tables report the same Rainbow-IQN agent, so any disagreement names a
    corrupted game.
    """
    failures = []
    for limit, suffix in _EVAL_COLUMN.items():
        summary = tables.eval_time[f"riqn_{suffix}"]
        curve = tables.curves[limit]["200M"]
        for game in sorted(set(summary) | set(curve)):
            a, b = summary.get(game), curve.get(game)
            if a is None or b is None:
                failures.append(f"{game}: present in only one Rainbow-IQN {limit} table")
                continue
            if a.infinite or b.infinite:
                if a.infinite != b.infinite:
                    failures.append(f"{game}: infinite gameplay mismatch ({limit})")
                continue
            if abs(a.raw_score - b.raw_score) > rel_tol * max(1.0, abs(a.raw_score), abs(b.raw_score)):
                failures.append(
                    f"{game}: Rainbow-IQN {limit} raw score {a.raw_score:g} != {b.raw_score:g} in checkpoint table"
                )
    return failures


@dataclass
class VerificationResult:
    diffs: list[DiffReport] = field(default_factory=list)
    consistency: list[str] = field(default_factory=list)
    beginner: scoring.BeginnerStats | None = None
    curves: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.consistency and all(d.passed for d in self.diffs)

    def lines(self) -> list[str]:
        out = []
        for d in self.diffs:
            out.extend(d.lines())
        if self.consistency:
            out.extend(f"FAIL consistency {msg}" for msg in self.consistency)
        else:
            out.append("PASS consistency Rainbow-IQN tables agree at 200M")
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "diffs": [d.to_dict() for d in self.diffs],
            "consistency": list(self.consistency),
            "beginner_subset": {
                "included": self.beginner.included if self.beginner else [],
                "skipped": self.beginner.skipped if self.beginner else [],
            },
            "curves": {
                limit: [r.median for r in reports] for limit, reports in self.curves.items()
            },
        }


def _outlier_notes(report: EvaluationReport, failed: set[str]) -> list[str]:
    notes = []
    if "superhuman" in failed:
        games = [s.game_id for s in report.per_game if scoring.classify(s) is scoring.ScoreClass.SUPERHUMAN]
        notes.append("superhuman games: " + ", ".join(games))
    if "mean" in failed:
        top = sorted(report.per_game, key=lambda s: -min(s.value, 1e300))[:3]
        notes.append("largest contributions to mean: " + ", ".join(
            f"{s.game_id} ({'inf' if math.isinf(s.value) else f'{100 * s.value:.2f}%'})" for s in top))
    if "median" in failed:
        ordered = sorted(report.per_game, key=lambda s: s.value)
        mid = len(ordered) // 2
        notes.append("median neighbours: " + ", ".join(s.game_id for s in ordered[max(0, mid - 1): mid + 1]))
    return notes


def verify_tables(tables: TableSet | None = None, mean_cap: float = 2.0) -> VerificationResult:
    tables = tables or TableSet.load()
    exp = tables.expectations
    result = VerificationResult()
    tolerances = {"median": MEDIAN_TOL, "mean": MEAN_TOL, "superhuman": 0}

    for agent in ("rainbow", "riqn"):
        for limit in TIME_LIMITS:
            report = eval_time_report(tables, agent, limit, mean_cap)
            diff = verify_published(report, expected_triple(exp, f"eval_time.{agent}.{limit}"), tolerances)
            mean_dev = next((f.deviation for f in diff.fields if f.field == "mean"), 0.0)
            if mean_dev > 0.0:
                diff.notes.append(
                    f"mean residual {100 * mean_dev:.2f}pp under the {100 * mean_cap:.0f}% infinite-gameplay cap"
                )
            failed = {f.field for f in diff.fields if not f.passed}
            diff.notes.extend(_outlier_notes(report, failed))
            result.diffs.append(diff)
            if agent == "rainbow" and limit == "30min":
                t2 = verify_published(report, expected_triple(exp, "reeval.rainbow.30min"), tolerances,
                                      label="Rainbow 30min (re-evaluation)")
                result.diffs.append(t2)

    stats = beginner_baseline_stats(tables.baselines)
    result.beginner = stats
    fields = []
    for name, actual in (("median", stats.median), ("mean", stats.mean)):
        expected = exp[f"beginner.{name}"]
        rel = abs(actual - expected) / abs(expected)
        fields.append(FieldDiff(name, expected, actual, rel, BEGINNER_REL_TOL, rel <= BEGINNER_REL_TOL, "ratio"))
    result.diffs.append(DiffReport(
        "world records on beginner scale",
        fields,
        [f"subset: {len(stats.included)} games with both baselines; skipped: {', '.join(stats.skipped)}"],
    ))

    for limit in TIME_LIMITS:
        reports = checkpoint_reports(tables, limit, mean_cap)
        result.curves[limit] = reports
        fields = []
        for ckpt, report in zip(CHECKPOINTS, reports):
            key = f"curve.riqn.{limit}.{ckpt}.median"
            if key not in exp:
                continue
            d = verify_published(report, scoring.PublishedTriple(median=exp[key]), {"median": 0.0})
            f = d.fields[0]
            f.field = f"median@{ckpt}"
            fields.append(f)
        medians = [r.median for r in reports]
        monotone = all(b >= a for a, b in zip(medians, medians[1:]))
        fields.append(FieldDiff("monotone", 1.0, float(monotone), 0.0 if monotone else 1.0, 0.0, monotone, "count"))
        result.diffs.append(DiffReport(f"Rainbow-IQN {limit} checkpoint curve", fields))

    result.consistency = consistency_failures(tables)
    return result
