"""World-record score normalization and SABER-style reporting.

All internal values are fractions (1.0 means the agent matched the
baseline); percentages only appear in rendered output.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

INFINITE_GAMEPLAY = math.inf
DEFAULT_MEAN_CAP = 2.0
NA = "NA"

_INFINITE_LITERALS = {"infinite gameplay", "inf", "infinite"}
_CELL_RE = re.compile(
    r"^(?P<value>[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)\s*(?P<star>\*)?\s*(?:\((?P<std>[-+]?\d+(?:\.\d*)?)\))?$"
)
_FRAMES_RE = re.compile(r"^(\d+)([MK]?)$")


class DatasetError(ValueError):
    """A dataset file is malformed or violates a table invariant."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ScoringError(ValueError):
    pass


class EvalTimeLimit(str, enum.Enum):
    FIVE_MIN = "five_min"
    THIRTY_MIN = "thirty_min"
    UNLIMITED = "unlimited"


class BaselineKind(str, enum.Enum):
    WORLD_RECORD = "world_record"
    BEGINNER_HUMAN = "beginner_human"
    RAINBOW_REFERENCE = "rainbow_reference"


class ScoreClass(str, enum.Enum):
    FAILING = "failing"
    POOR = "poor"
    MEDIUM = "medium"
    FAIR = "fair"
    SUPERHUMAN = "superhuman"


SCORE_CLASSES = tuple(ScoreClass)


@dataclass(frozen=True)
class GameBaseline:
    game_id: str
    random_score: float
    human_beginner: float | None
    world_record: float | None
    extrapolated: bool = False


@dataclass(frozen=True)
class AgentScore:
    game_id: str
    raw_score: float
    eval_time_limit: EvalTimeLimit
    train_frames: int
    std_dev: float | None = None

    def __post_init__(self):
        if math.isinf(self.raw_score) and self.eval_time_limit is not EvalTimeLimit.UNLIMITED:
            raise ScoringError(
                f"{self.game_id}: infinite gameplay is only legal without an evaluation time limit"
            )

    @property
    def infinite(self) -> bool:
        return math.isinf(self.raw_score)


@dataclass(frozen=True)
class NormalizedScore:
    game_id: str
    value: float
    baseline_kind: BaselineKind = BaselineKind.WORLD_RECORD


@dataclass
class EvaluationReport:
    checkpoint_frames: int
    median: float
    mean: float
    superhuman_count: int
    histogram: dict[ScoreClass, int]
    per_game: list[NormalizedScore] = field(default_factory=list)
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "checkpoint_frames": self.checkpoint_frames,
            "median": self.median,
            "mean": self.mean,
            "superhuman_count": self.superhuman_count,
            "histogram": {c.value: self.histogram[c] for c in SCORE_CLASSES},
            "per_game": [
                {"game": s.game_id, "value": _json_float(s.value), "baseline": s.baseline_kind.value}
                for s in self.per_game
            ],
        }


def _json_float(x: float):
    return "inf" if math.isinf(x) and x > 0 else x


def canonical_game_id(name: str) -> str:
    return " ".join(name.strip().lower().replace("_", " ").split())


def parse_cell(cell: str) -> tuple[float | None, float | None, bool]:
    """Parse one table cell into ``(value, std_dev, extrapolated)``.

    ``NA`` gives a ``None`` value; ``Infinite gameplay`` gives ``inf``.
    """
    text = cell.strip()
    if text == NA:
        return None, None, False
    if text.lower() in _INFINITE_LITERALS:
        return INFINITE_GAMEPLAY, None, False
    m = _CELL_RE.match(text)
    if m is None:
        raise ValueError(f"cannot parse cell {cell!r}")
    std = float(m["std"]) if m["std"] is not None else None
    return float(m["value"]), std, m["star"] is not None


def _read_rows(path: Path) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield lineno, row


def load_baseline_table(path: str | Path) -> dict[str, GameBaseline]:
    """Load a ``game,random,human_beginner,world_record`` table."""
    path = Path(path)
    table: dict[str, GameBaseline] = {}
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DatasetError("empty baseline table", path) from None
    if [h.strip() for h in header] != ["game", "random", "human_beginner", "world_record"]:
        raise DatasetError(f"unexpected header {header}", path, 1)
    for lineno, row in rows:
        if len(row) != 4:
            raise DatasetError(f"expected 4 columns, got {len(row)}", path, lineno)
        game = canonical_game_id(row[0])
        try:
            random_score, _, _ = parse_cell(row[1])
            human, _, _ = parse_cell(row[2])
            record, _, extrapolated = parse_cell(row[3])
        except ValueError as exc:
            raise DatasetError(str(exc), path, lineno) from None
        if random_score is None or math.isinf(random_score):
            raise DatasetError(f"{game}: random score must be a finite number", path, lineno)
        if game in table:
            raise DatasetError(f"duplicate game_id {game!r}", path, lineno)
        if record is not None and record == random_score:
            raise DatasetError(f"{game}: world record equals random score", path, lineno)
        table[game] = GameBaseline(game, random_score, human, record, extrapolated)
    return table


def _column_meta(name: str, default_limit: EvalTimeLimit | None) -> tuple[EvalTimeLimit, int]:
    name = name.strip()
    m = _FRAMES_RE.match(name)
    if m:
        scale = {"M": 1_000_000, "K": 1_000, "": 1}[m.group(2)]
        return default_limit or EvalTimeLimit.UNLIMITED, int(m.group(1)) * scale
    suffix = name.rsplit("_", 1)[-1]
    limit = {
        "5min": EvalTimeLimit.FIVE_MIN,
        "30min": EvalTimeLimit.THIRTY_MIN,
        "saber": EvalTimeLimit.UNLIMITED,
        "unlimited": EvalTimeLimit.UNLIMITED,
    }.get(suffix)
    if limit is None:
        raise ValueError(f"cannot infer evaluation time limit from column {name!r}")
    return limit, 200_000_000


def load_score_table(
    path: str | Path, eval_time_limit: EvalTimeLimit | None = None
) -> dict[str, dict[str, AgentScore]]:
    """Load an agent raw-score table keyed ``column -> game -> AgentScore``.

    Frame columns (``10M``, ``200M``) take ``eval_time_limit``; named columns
    (``riqn_30min``) carry their own limit in the suffix.
    """
    path = Path(path)
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DatasetError("empty score table", path) from None
    if header[0].strip() != "game" or len(header) < 2:
        raise DatasetError(f"unexpected header {header}", path, 1)
    columns = [h.strip() for h in header[1:]]
    try:
        metas = [_column_meta(c, eval_time_limit) for c in columns]
    except ValueError as exc:
        raise DatasetError(str(exc), path, 1) from None
    out: dict[str, dict[str, AgentScore]] = {c: {} for c in columns}
    for lineno, row in rows:
        if len(row) != len(header):
            raise DatasetError(f"expected {len(header)} columns, got {len(row)}", path, lineno)
        game = canonical_game_id(row[0])
        if game in out[columns[0]]:
            raise DatasetError(f"duplicate game_id {game!r}", path, lineno)
        for col, (limit, frames), cell in zip(columns, metas, row[1:]):
            try:
                value, std, _ = parse_cell(cell)
                if value is None:
                    raise ValueError(f"missing agent score for {game}")
                out[col][game] = AgentScore(game, value, limit, frames, std)
            except ValueError as exc:
                raise DatasetError(str(exc), path, lineno) from None
    return out


def normalize_record(agent: float, random: float, record: float, game: str = "?") -> float:
    """``(agent - random) / |record - random|``; negative when worse than random."""
    denom = abs(record - random)
    if denom == 0:
        raise ScoringError(f"{game}: world record equals random score, normalization undefined")
    return (agent - random) / denom


def normalize_reference(agent: float, random: float, reference: float, game: str = "?") -> float:
    """Normalize against another agent's score instead of the world record."""
    denom = abs(reference - random)
    if denom == 0:
        raise ScoringError(f"{game}: reference score equals random score, normalization undefined")
    return (agent - random) / denom


def classify(s: float | NormalizedScore) -> ScoreClass:
    value = s.value if isinstance(s, NormalizedScore) else s
    if math.isnan(value):
        raise ScoringError("cannot classify NaN score")
    if value < 0.01:
        return ScoreClass.FAILING
    if value < 0.10:
        return ScoreClass.POOR
    if value < 0.50:
        return ScoreClass.MEDIUM
    if value < 1.00:
        return ScoreClass.FAIR
    # exact 1.0 ties go upward
    return ScoreClass.SUPERHUMAN


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    lo, hi = ordered[mid - 1], ordered[mid]
    if math.isinf(hi):
        return hi if math.isinf(lo) else math.inf
    return (lo + hi) / 2.0


def aggregate(
    scores: Sequence[NormalizedScore | float],
    mean_cap: float = DEFAULT_MEAN_CAP,
    checkpoint_frames: int = 0,
    label: str = "",
) -> EvaluationReport:
    """Median, capped mean, superhuman count and class histogram.

    Infinite-gameplay entries sort last for the median and are replaced by
    ``mean_cap`` in the mean. Finite superhuman values are not capped.
    """
    if not scores:
        raise ScoringError("cannot aggregate an empty score list")
    per_game = [
        s if isinstance(s, NormalizedScore) else NormalizedScore(f"game{i}", float(s))
        for i, s in enumerate(scores)
    ]
    values = [s.value for s in per_game]
    if any(math.isnan(v) for v in values):
        raise ScoringError("NaN normalized score")
    capped = [mean_cap if math.isinf(v) and v > 0 else v for v in values]
    histogram = {c: 0 for c in SCORE_CLASSES}
    for v in values:
        histogram[classify(v)] += 1
    return EvaluationReport(
        checkpoint_frames=checkpoint_frames,
        median=_median(values),
        mean=math.fsum(capped) / len(capped),
        superhuman_count=histogram[ScoreClass.SUPERHUMAN],
        histogram=histogram,
        per_game=per_game,
        label=label,
    )


def normalize_scores(
    agent: Mapping[str, AgentScore | float],
    baselines: Mapping[str, GameBaseline],
) -> list[NormalizedScore]:
    """World-record normalize every game that has a record; others are dropped."""
    out = []
    for game, base in baselines.items():
        if base.world_record is None:
            continue
        if game not in agent:
            raise ScoringError(f"no agent score for {game}")
        entry = agent[game]
        raw = entry.raw_score if isinstance(entry, AgentScore) else float(entry)
        value = INFINITE_GAMEPLAY if math.isinf(raw) else normalize_record(
            raw, base.random_score, base.world_record, game
        )
        out.append(NormalizedScore(game, value, BaselineKind.WORLD_RECORD))
    return out


def normalize_against_reference(
    agent: Mapping[str, AgentScore],
    reference: Mapping[str, AgentScore],
    baselines: Mapping[str, GameBaseline],
) -> list[NormalizedScore]:
    """Per-game scores relative to a reference agent; games where either side is infinite are skipped."""
    out = []
    for game, base in baselines.items():
        a, ref = agent.get(game), reference.get(game)
        if a is None or ref is None or a.infinite or ref.infinite:
            continue
        if ref.raw_score == base.random_score:
            continue
        value = normalize_reference(a.raw_score, base.random_score, ref.raw_score, game)
        out.append(NormalizedScore(game, value, BaselineKind.RAINBOW_REFERENCE))
    return out


def training_curve_score(episode_scores: Sequence[float], k: int = 100) -> float:
    """Mean of the last ``k`` episode scores; no partial windows."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(episode_scores) < k:
        raise ScoringError(f"need at least {k} episodes, have {len(episode_scores)}")
    window = list(episode_scores)[-k:]
    return math.fsum(window) / k


@dataclass
class BeginnerStats:
    median: float
    mean: float
    included: list[str]
    skipped: list[str]


def beginner_baseline_stats(table: Mapping[str, GameBaseline]) -> BeginnerStats:
    """How far world records sit above the beginner-human baseline.

    Each game contributes ``(record - random) / |beginner - random|``. Games
    missing either baseline are skipped and listed.
    """
    ratios, included, skipped = [], [], []
    for game, b in table.items():
        if b.human_beginner is None or b.world_record is None:
            skipped.append(game)
            continue
        ratios.append(normalize_record(b.world_record, b.random_score, b.human_beginner, game))
        included.append(game)
    if not ratios:
        return BeginnerStats(math.nan, math.nan, included, skipped)
    return BeginnerStats(_median(ratios), math.fsum(ratios) / len(ratios), included, skipped)


# --- published-value regression gate ---------------------------------------

DEFAULT_TOLERANCES = {"median": 0.0005, "mean": 0.01, "superhuman": 0, "value": 0.10}


@dataclass(frozen=True)
class PublishedTriple:
    median: float | None = None
    mean: float | None = None
    superhuman: int | None = None


@dataclass
class FieldDiff:
    field: str
    expected: float
    actual: float
    deviation: float
    tolerance: float
    passed: bool
    unit: str = "pp"


@dataclass
class DiffReport:
    label: str
    fields: list[FieldDiff]
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.fields)

    def lines(self) -> list[str]:
        out = []
        for f in self.fields:
            status = "PASS" if f.passed else "FAIL"
            if f.unit == "count":
                out.append(f"{status} {self.label} {f.field}: expected {f.expected:g} got {f.actual:g}")
            elif f.unit == "ratio":
                out.append(
                    f"{status} {self.label} {f.field}: expected {f.expected:g}x got {f.actual:.2f}x "
                    f"(rel dev {100 * f.deviation:.2f}%, tol {100 * f.tolerance:.0f}%)"
                )
            else:
                out.append(
                    f"{status} {self.label} {f.field}: expected {100 * f.expected:.2f}% "
                    f"got {100 * f.actual:.2f}% (|d|={100 * f.deviation:.2f}pp, tol {100 * f.tolerance:.2f}pp)"
                )
        out.extend(f"  note: {n}" for n in self.notes)
        return out

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "passed": self.passed,
            "fields": [vars(f) for f in self.fields],
            "notes": list(self.notes),
        }


def _printed(x: float) -> float:
    """Round a fraction to two decimals of percent, the printed precision."""
    if math.isinf(x):
        return x
    return round(100.0 * x, 2) / 100.0


def verify_published(
    report: EvaluationReport | PublishedTriple,
    expected: PublishedTriple,
    tolerances: Mapping[str, float] | None = None,
    label: str = "",
) -> DiffReport:
    tol = dict(DEFAULT_TOLERANCES)
    if tolerances:
        tol.update(tolerances)
    if isinstance(report, EvaluationReport):
        actual = PublishedTriple(report.median, report.mean, report.superhuman_count)
        label = label or report.label
    else:
        actual = report
    fields = []
    for name in ("median", "mean"):
        exp = getattr(expected, name)
        if exp is None:
            continue
        act = _printed(getattr(actual, name))
        dev = abs(act - exp)
        # float slack below the printed precision
        fields.append(FieldDiff(name, exp, act, dev, tol[name], dev <= tol[name] + 1e-12))
    if expected.superhuman is not None:
        dev = abs(actual.superhuman - expected.superhuman)
        fields.append(
            FieldDiff("superhuman", expected.superhuman, actual.superhuman, dev, tol["superhuman"],
                      dev <= tol["superhuman"], unit="count")
        )
    return DiffReport(label, fields)


def load_expectations(path: str | Path) -> dict[str, float]:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"expected 'key = value', got {line!r}", path, lineno)
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise DatasetError(f"bad number {value.strip()!r}", path, lineno) from None
    return out


def expected_triple(expectations: Mapping[str, float], prefix: str) -> PublishedTriple:
    def get(name):
        return expectations.get(f"{prefix}.{name}")

    sh = get("superhuman")
    return PublishedTriple(get("median"), get("mean"), None if sh is None else int(sh))


# --- shipped datasets --------------------------------------------------------

DATASETS = {
    "baselines": "baselines.csv",
    "riqn_saber": "riqn_saber.csv",
    "eval_time": "eval_time.csv",
    "riqn_5min": "riqn_5min.csv",
    "riqn_30min": "riqn_30min.csv",
    "expectations": "expectations.txt",
}


def dataset_path(name: str) -> Path:
    fname = DATASETS.get(name, name)
    return Path(str(resources.files("saber") / "data" / fname))


def load_shipped_baselines() -> dict[str, GameBaseline]:
    table = load_baseline_table(dataset_path("baselines"))
    check_shipped_baselines(table)
    return table


def check_shipped_baselines(table: Mapping[str, GameBaseline]) -> None:
    if len(table) != 61:
        raise DatasetError(f"expected 61 games, found {len(table)}")
    missing = sorted(g for g, b in table.items() if b.world_record is None)
    if missing != ["double dunk", "elevator action", "tennis"]:
        raise DatasetError(f"unexpected games without world record: {missing}")
