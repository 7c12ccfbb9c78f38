"""CSV tables, SVG plots and manifests."""

import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiia.output import OUTCOME_COLORS, RunManifest, emit_plot, read_csv, sha256_file, write_csv

SVG = "{http://www.w3.org/2000/svg}"


def _texts(svg_path, cls=None):
    root = ET.parse(svg_path).getroot()
    return [el for el in root.iter(f"{SVG}text") if cls is None or el.get("class") == cls]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_csv_floats_round_trip_exactly(tmp_path_factory, xs):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(p, [{"i": i, "x": x} for i, x in enumerate(xs)])
    back = [float(r["x"]) for r in read_csv(p)]
    assert back == xs


def test_csv_header_and_missing_values(tmp_path):
    p = write_csv(tmp_path / "a.csv", [{"a": 0.1, "b": True}, {"a": None}], ["a", "b"])
    lines = p.read_text().splitlines()
    assert lines == ["a,b", "0.10000000000000001,True", ","]
    assert write_csv(tmp_path / "e.csv", []).read_text() == "\n"


def test_phase_diagram_legend_and_axes(tmp_path):
    outcomes = ["standing", "preservation", "annihilation", "background"]
    rows = [{"k4": 2.9 + 0.01 * i, "tau": 1200.0 + 10 * j, "outcome": outcomes[(i + j) % 4]}
            for i in range(4) for j in range(3)]
    svg, csvp = emit_plot({"x_name": "k4", "y_name": "tau", "rows": rows}, "phase-diagram", tmp_path / "pd")
    legend = [t.text for t in _texts(svg, "legend-entry")]
    assert legend == [o for o in OUTCOME_COLORS if o in outcomes]
    assert _texts(svg, "xlabel")[0].text == "k4"
    assert _texts(svg, "ylabel")[0].text == "tau"
    text = svg.read_text()
    for o in outcomes:
        assert OUTCOME_COLORS[o] in text
    assert len(read_csv(csvp)) == 12
    assert read_csv(csvp)[0].keys() >= {"k4", "tau", "outcome"}


def test_phase_diagram_failed_cells_get_their_own_entry(tmp_path):
    rows = [{"x": 0.0, "y": 0.0, "outcome": "standing"}, {"x": 1.0, "y": 0.0, "outcome": "failed"}]
    svg, _ = emit_plot({"x_name": "x", "y_name": "y", "rows": rows}, "phase-diagram", tmp_path / "f")
    assert [t.text for t in _texts(svg, "legend-entry")] == ["standing", "failed"]


def test_spacetime_time_runs_upward(tmp_path):
    x = np.linspace(0, 1, 5)
    t = np.array([0.0, 1.0, 2.0])
    u = np.outer(t, np.ones_like(x))  # brightest at the latest time
    svg, csvp = emit_plot({"x": x, "t": t, "u": u}, "spacetime", tmp_path / "st")
    rects = ET.parse(svg).getroot().findall(f"{SVG}rect")
    cells = [(float(r.get("y")), r.get("fill")) for r in rects if r.get("fill", "").startswith("#")
             and r.get("width") != "12"]
    # the last time row is the darkest fill and sits highest on the page (smallest y)
    top = min(cells)[1]
    bottom = max(cells)[1]
    assert top == "#000000" and bottom == "#ffffff"
    assert len(read_csv(csvp)) == 15


def test_branch_solid_and_dashed_segments(tmp_path):
    rows = [{"k4": 2.9 + 0.01 * i, "max_u": float(i), "stable": i < 3} for i in range(6)]
    data = {"param": "k4", "y": "max_u", "rows": rows, "markers": [{"k4": 2.92, "max_u": 2.0, "kind": "drift"}]}
    svg, csvp = emit_plot(data, "branch", tmp_path / "b")
    text = svg.read_text()
    assert text.count("<polyline") == 2
    assert text.count("stroke-dasharray") >= 1
    assert "drift" in text
    assert [r["stable"] for r in read_csv(csvp)] == ["True"] * 3 + ["False"] * 3


def test_orbit_markers(tmp_path):
    v = np.linspace(0.0, 0.1, 20)
    A = 0.01 * np.ones(20)
    svg, csvp = emit_plot({"v": v, "A": A, "markers": {"EP2-": (0.1, 0.01)}}, "orbit", tmp_path / "o")
    assert "EP2-" in svg.read_text()
    rows = read_csv(csvp)
    assert float(rows[-1]["v"]) == 0.1 and list(rows[0]) == ["t", "v", "A", "s"]


def test_unknown_plot_kind(tmp_path):
    with pytest.raises(ValueError):
        emit_plot({}, "histogram", tmp_path / "x")


def test_svg_is_well_formed_and_self_contained(tmp_path):
    svg, _ = emit_plot({"v": [0, 1], "A": [1, 0]}, "orbit", tmp_path / "o")
    text = svg.read_text()
    ET.fromstring(text)
    assert not re.search(r"(href|src)=", text)


def test_manifest_round_trip(tmp_path):
    a = write_csv(tmp_path / "a.csv", [{"x": 1.5}])
    man = RunManifest({"kind": "ode-run"})
    man.outcome["status"] = "ok"
    man.record(a, root=tmp_path)
    path = man.write(tmp_path)
    back = RunManifest.read(path)
    assert back == man
    assert back.files == {"a.csv": sha256_file(a)}
    assert back.finished >= back.started
