import math
import xml.etree.ElementTree as ET

import pytest

from saber.figures import curve_csv, emit_figure_data, per_game_csv
from saber.scoring import NormalizedScore, ScoringError, aggregate


def _reports():
    a = aggregate([NormalizedScore("pong", 0.5), NormalizedScore("alien", math.inf)],
                  checkpoint_frames=50_000_000, label="b")
    b = aggregate([NormalizedScore("pong", 0.2), NormalizedScore("alien", 0.001)],
                  checkpoint_frames=10_000_000, label="a")
    return [a, b]


def test_per_game_csv():
    text = per_game_csv(_reports())
    assert text.splitlines() == ["game,b,a", "pong,0.500000,0.200000", "alien,inf,0.001000"]


def test_curve_csv_sorted_by_frames():
    lines = curve_csv(_reports()).splitlines()
    assert lines[1].startswith("10000000,a,")
    assert lines[2].startswith("50000000,b,inf")


def test_emit_is_byte_deterministic_and_valid_svg(tmp_path):
    first = {p.name: p.read_bytes() for p in emit_figure_data(_reports(), tmp_path / "x")}
    second = {p.name: p.read_bytes() for p in emit_figure_data(_reports(), tmp_path / "y")}
    assert first == second
    assert set(first) == {"per_game.csv", "histogram.svg", "curve.csv", "curve.svg"}
    hist = ET.fromstring(first["histogram.svg"])
    bars = [e for e in hist.iter() if e.get("class") == "bar"]
    assert len(bars) == 2 * 5
    assert sum(int(b.find("{http://www.w3.org/2000/svg}title").text) for b in bars) == 4
    ET.fromstring(first["curve.svg"])


def test_emit_rejects_empty(tmp_path):
    with pytest.raises(ScoringError):
        emit_figure_data([], tmp_path)
