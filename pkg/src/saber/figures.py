"""CSV and SVG renderings of evaluation reports.

Output is byte-deterministic for a fixed input: no timestamps, fixed float
formatting, stable ordering.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .scoring import SCORE_CLASSES, EvaluationReport, ScoringError

_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def per_game_csv(reports: Sequence[EvaluationReport]) -> str:
    games: list[str] = []
    seen = set()
    for r in reports:
        for s in r.per_game:
            if s.game_id not in seen:
                seen.add(s.game_id)
                games.append(s.game_id)
    lookup = [{s.game_id: s.value for s in r.per_game} for r in reports]
    header = ["game"] + [r.label or f"report{i}" for i, r in enumerate(reports)]
    lines = [",".join(header)]
    for g in games:
        cells = [g] + [_fmt(m[g]) if g in m else "NA" for m in lookup]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def curve_csv(reports: Sequence[EvaluationReport]) -> str:
    lines = ["checkpoint_frames,label,median,mean,superhuman"]
    for r in sorted(reports, key=lambda r: r.checkpoint_frames):
        lines.append(f"{r.checkpoint_frames},{r.label},{_fmt(r.median)},{_fmt(r.mean)},{r.superhuman_count}")
    return "\n".join(lines) + "\n"


def histogram_svg(reports: Sequence[EvaluationReport], width: int = 480, height: int = 280) -> str:
    pad, top = 40, 20
    plot_w, plot_h = width - 2 * pad, height - top - pad
    peak = max(max(r.histogram.values()) for r in reports) or 1
    group_w = plot_w / len(SCORE_CLASSES)
    bar_w = group_w * 0.8 / len(reports)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<line x1="{pad}" y1="{top + plot_h}" x2="{pad + plot_w}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for ci, cls in enumerate(SCORE_CLASSES):
        gx = pad + ci * group_w + group_w * 0.1
        for ri, r in enumerate(reports):
            count = r.histogram[cls]
            h = plot_h * count / peak
            x = gx + ri * bar_w
            parts.append(
                f'<rect class="bar" data-report="{ri}" data-class="{cls.value}" x="{x:.2f}" '
                f'y="{top + plot_h - h:.2f}" width="{bar_w:.2f}" height="{h:.2f}" '
                f'fill="{_COLORS[ri % len(_COLORS)]}"><title>{count}</title></rect>'
            )
        parts.append(
            f'<text x="{gx + group_w * 0.4:.2f}" y="{top + plot_h + 16}" font-size="11" '
            f'text-anchor="middle">{cls.value}</text>'
        )
    for ri, r in enumerate(reports):
        parts.append(
            f'<text x="{pad + 4}" y="{top + 12 * (ri + 1)}" font-size="11" '
            f'fill="{_COLORS[ri % len(_COLORS)]}">{escape(r.label or f"report{ri}")}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curve_svg(reports: Sequence[EvaluationReport], width: int = 480, height: int = 280) -> str:
    pad, top = 40, 20
    plot_w, plot_h = width - 2 * pad, height - top - pad
    ordered = sorted(reports, key=lambda r: r.checkpoint_frames)
    xs = [r.checkpoint_frames for r in ordered]
    ys = [r.median for r in ordered]
    finite = [y for y in ys if math.isfinite(y)] or [0.0]
    y_max = max(finite) or 1.0
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1

    def px(x):
        return pad + plot_w * (x - x_lo) / span if len(xs) > 1 else pad + plot_w / 2

    def py(y):
        y = min(y, y_max)
        return top + plot_h - plot_h * y / y_max

    points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<line x1="{pad}" y1="{top + plot_h}" x2="{pad + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<polyline fill="none" stroke="{_COLORS[0]}" stroke-width="2" points="{points}"/>',
    ]
    for x, y in zip(xs, ys):
        parts.append(
            f'<circle class="point" data-frames="{x}" cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" '
            f'fill="{_COLORS[0]}"><title>{100 * y:.2f}%</title></circle>'
        )
        parts.append(
            f'<text x="{px(x):.2f}" y="{top + plot_h + 16}" font-size="11" '
            f'text-anchor="middle">{x / 1e6:g}M</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_figure_data(reports: Sequence[EvaluationReport], out_dir: str | Path) -> list[Path]:
    """Write ``per_game.csv``, ``histogram.svg``, ``curve.csv`` and ``curve.svg``."""
    if not reports:
        raise ScoringError("need at least one report")
    if any(not r.per_game for r in reports):
        raise ScoringError("report has no per-game scores")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "per_game.csv": per_game_csv(reports),
        "histogram.svg": histogram_svg(reports),
        "curve.csv": curve_csv(reports),
        "curve.svg": curve_svg(reports),
    }
    written = []
    for name, text in files.items():
        path = out / name
        path.write_bytes(text.encode("utf-8"))
        written.append(path)
    return written
