"""Result files: CSV tables, self-contained SVG plots and run manifests.

CSV is the authoritative record (mandatory header, full ``%.17g`` precision).
The SVG renderer is deliberately small: axes, ticks, a legend and the few
mark types the four plot kinds need.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__

__all__ = ["write_csv", "read_csv", "emit_plot", "RunManifest", "sha256_file", "OUTCOME_COLORS"]

OUTCOME_COLORS = {
    "standing": "#4c72b0",
    "preservation": "#55a868",
    "annihilation": "#c44e52",
    "background": "#8c8c8c",
    "undecided": "#dd8452",
    "running": "#dd8452",
}
FAILED_COLOR = "#000000"

W, H = 640, 480
ML, MR, MT, MB = 70, 150, 30, 55


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, rows: Iterable[dict], columns: Sequence[str] | None = None) -> Path:
    """Write dict rows with a header line; floats use ``%.17g``."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# SVG


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


class _Canvas:
    def __init__(self, xlim, ylim, xlabel: str, ylabel: str, title: str = ""):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.parts: list[str] = []
        self.legend: list[tuple[str, str, str]] = []
        self.xlabel, self.ylabel, self.title = xlabel, ylabel, title

    def X(self, x):
        return ML + (np.asarray(x, dtype=float) - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def Y(self, y):
        return H - MB - (np.asarray(y, dtype=float) - self.y0) / (self.y1 - self.y0) * (H - MT - MB)

    def rect(self, x, y, w, h, color):
        X0, X1 = self.X(x), self.X(x + w)
        Y0, Y1 = self.Y(y + h), self.Y(y)
        self.parts.append(
            f'<rect x="{X0:.2f}" y="{Y0:.2f}" width="{X1 - X0:.2f}" height="{Y1 - Y0:.2f}" '
            f'fill="{color}" stroke="none"/>'
        )

    def polyline(self, x, y, color, dash: bool = False, width: float = 1.5):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        # split at gaps
        segs, cur = [], []
        for xi, yi, g in zip(self.X(x), self.Y(y), ok):
            if g:
                cur.append(f"{xi:.2f},{yi:.2f}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        d = ' stroke-dasharray="5,3"' if dash else ""
        for s in segs:
            if len(s) > 1:
                self.parts.append(
                    f'<polyline points="{" ".join(s)}" fill="none" stroke="{color}" '
                    f'stroke-width="{width}"{d}/>'
                )

    def marker(self, x, y, color, label: str | None = None):
        self.parts.append(f'<circle cx="{float(self.X(x)):.2f}" cy="{float(self.Y(y)):.2f}" r="4" fill="{color}"/>')
        if label:
            self.parts.append(
                f'<text x="{float(self.X(x)) + 6:.2f}" y="{float(self.Y(y)) - 6:.2f}" font-size="11">{escape(label)}</text>'
            )

    def add_legend(self, label: str, color: str, style: str = "box"):
        self.legend.append((label, color, style))

    def render(self) -> str:
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        ]
        out += self.parts
        x_lo, x_hi, y_lo, y_hi = ML, W - MR, MT, H - MB
        out.append(f'<rect x="{x_lo}" y="{y_lo}" width="{x_hi - x_lo}" height="{y_hi - y_lo}" '
                   'fill="none" stroke="black"/>')
        for t in _ticks(self.x0, self.x1):
            X = float(self.X(t))
            out.append(f'<line x1="{X:.2f}" y1="{y_hi}" x2="{X:.2f}" y2="{y_hi + 5}" stroke="black"/>')
            out.append(f'<text x="{X:.2f}" y="{y_hi + 18}" font-size="11" text-anchor="middle">{t:.4g}</text>')
        for t in _ticks(self.y0, self.y1):
            Y = float(self.Y(t))
            out.append(f'<line x1="{x_lo - 5}" y1="{Y:.2f}" x2="{x_lo}" y2="{Y:.2f}" stroke="black"/>')
            out.append(f'<text x="{x_lo - 8}" y="{Y + 4:.2f}" font-size="11" text-anchor="end">{t:.4g}</text>')
        out.append(f'<text x="{(x_lo + x_hi) / 2}" y="{H - 15}" font-size="13" text-anchor="middle" '
                   f'class="xlabel">{escape(self.xlabel)}</text>')
        out.append(f'<text x="18" y="{(y_lo + y_hi) / 2}" font-size="13" text-anchor="middle" class="ylabel" '
                   f'transform="rotate(-90 18 {(y_lo + y_hi) / 2})">{escape(self.ylabel)}</text>')
        if self.title:
            out.append(f'<text x="{(x_lo + x_hi) / 2}" y="20" font-size="13" text-anchor="middle">'
                       f'{escape(self.title)}</text>')
        out.append('<g class="legend">')
        for k, (label, color, style) in enumerate(self.legend):
            y = MT + 10 + 20 * k
            x = W - MR + 12
            if style == "line":
                out.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{color}" stroke-width="2"/>')
            elif style == "dash":
                out.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{color}" '
                           'stroke-width="2" stroke-dasharray="5,3"/>')
            else:
                out.append(f'<rect x="{x}" y="{y - 6}" width="12" height="12" fill="{color}"/>')
            out.append(f'<text class="legend-entry" x="{x + 24}" y="{y + 4}" font-size="12">{escape(label)}</text>')
        out.append("</g>")
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _lims(v, pad=0.0):
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        d = abs(lo) * 0.1 or 1.0
        return lo - d, hi + d
    d = (hi - lo) * pad
    return lo - d, hi + d


def _gray(val: float) -> str:
    g = int(round(255 * (1 - min(max(val, 0.0), 1.0))))
    return f"#{g:02x}{g:02x}{g:02x}"


def _phase_diagram(data: dict):
    xn, yn = data["x_name"], data["y_name"]
    rows = data["rows"]
    xs = np.array([float(r[xn]) for r in rows])
    ys = np.array([float(r[yn]) for r in rows])
    ux, uy = np.unique(xs), np.unique(ys)
    dxc = np.min(np.diff(ux)) if len(ux) > 1 else 1.0
    dyc = np.min(np.diff(uy)) if len(uy) > 1 else 1.0
    cv = _Canvas((ux[0] - dxc / 2, ux[-1] + dxc / 2), (uy[0] - dyc / 2, uy[-1] + dyc / 2), xn, yn,
                 data.get("title", ""))
    seen = []
    for r, x, y in zip(rows, xs, ys):
        o = str(r["outcome"])
        col = OUTCOME_COLORS.get(o, FAILED_COLOR)
        cv.rect(x - dxc / 2, y - dyc / 2, dxc, dyc, col)
        if o not in seen:
            seen.append(o)
    order = [o for o in OUTCOME_COLORS if o in seen] + [o for o in seen if o not in OUTCOME_COLORS]
    for o in order:
        cv.add_legend(o, OUTCOME_COLORS.get(o, FAILED_COLOR))
    return cv, rows, [xn, yn, "outcome"] + [k for k in rows[0] if k not in (xn, yn, "outcome")] if rows else []


def _spacetime(data: dict):
    x = np.asarray(data["x"], dtype=float)
    t = np.asarray(data["t"], dtype=float)
    u = np.asarray(data["u"], dtype=float)  # shape (len(t), len(x))
    cv = _Canvas((x[0], x[-1]), (t[0], t[-1] if len(t) > 1 else t[0] + 1), "x", "t", data.get("title", ""))
    lo, hi = np.nanmin(u), np.nanmax(u)
    span = hi - lo if hi > lo else 1.0
    # time runs upward; at most 200 x 200 cells are drawn
    ti = np.unique(np.linspace(0, len(t) - 1, min(len(t), 200)).round().astype(int))
    xi = np.unique(np.linspace(0, len(x) - 1, min(len(x), 200)).round().astype(int))
    dt = (t[-1] - t[0]) / max(len(ti) - 1, 1) if len(t) > 1 else 1.0
    dxc = (x[-1] - x[0]) / max(len(xi) - 1, 1)
    for a in ti:
        for b in xi:
            cv.rect(x[b] - dxc / 2, t[a] - dt / 2, dxc, dt, _gray((u[a, b] - lo) / span))
    cv.add_legend(f"u = {hi:.3g}", _gray(1.0))
    cv.add_legend(f"u = {lo:.3g}", _gray(0.0))
    rows = [{"t": t[a], "x": x[b], "u": u[a, b]} for a in range(len(t)) for b in range(len(x))]
    return cv, rows, ["t", "x", "u"]


def _branch(data: dict):
    rows = data["rows"]
    pn = data.get("param", "param")
    yn = data.get("y", "max_u")
    p = np.array([float(r[pn]) for r in rows])
    y = np.array([float(r[yn]) for r in rows])
    st = [str(r.get("stable", "")) in ("True", "true", "1") for r in rows]
    cv = _Canvas(_lims(p, 0.05), _lims(y, 0.05), pn, yn, data.get("title", ""))
    # solid where stable, dashed where not
    start = 0
    for k in range(1, len(rows) + 1):
        if k == len(rows) or st[k] != st[start]:
            seg = slice(start, min(k + 1, len(rows)))
            cv.polyline(p[seg], y[seg], "black", dash=not st[start])
            start = k
    cv.add_legend("stable", "black", "line")
    cv.add_legend("unstable", "black", "dash")
    for m in data.get("markers", []):
        cv.marker(m[pn], m[yn], "#c44e52", m.get("kind"))
    return cv, rows, list(rows[0].keys()) if rows else []


def _orbit(data: dict):
    v = np.asarray(data["v"], dtype=float)
    A = np.asarray(data["A"], dtype=float)
    t = np.asarray(data.get("t", np.arange(len(v))), dtype=float)
    s = np.asarray(data.get("s", np.zeros_like(v)), dtype=float)
    pts = [v, A] + [np.array([m[0]]) for m in data.get("markers", {}).values()]
    pa = [A] + [np.array([m[1]]) for m in data.get("markers", {}).values()]
    cv = _Canvas(_lims(np.concatenate([np.atleast_1d(q) for q in pts[:1] + pts[2:]]), 0.08),
                 _lims(np.concatenate(pa), 0.08), "v", "A", data.get("title", ""))
    cv.polyline(v, A, "#4c72b0")
    cv.add_legend("orbit", "#4c72b0", "line")
    for name, (mv, mA) in data.get("markers", {}).items():
        cv.marker(mv, mA, "#c44e52", name)
    rows = [{"t": a, "v": b, "A": c, "s": d} for a, b, c, d in zip(t, v, A, s)]
    return cv, rows, ["t", "v", "A", "s"]


_KINDS = {"phase-diagram": _phase_diagram, "spacetime": _spacetime, "branch": _branch, "orbit": _orbit}


def emit_plot(data: dict, kind: str, stem) -> tuple[Path, Path]:
    """Write ``<stem>.svg`` and ``<stem>.csv`` for one of the four plot kinds.

    ``phase-diagram``: ``x_name``, ``y_name`` and ``rows`` (dicts with the two
    parameters and ``outcome``).  ``spacetime``: ``x``, ``t`` and ``u`` of
    shape ``(len(t), len(x))``; time runs upward.  ``branch``: ``param``,
    ``y`` and ``rows`` with a ``stable`` flag.  ``orbit``: ``v``, ``A`` and
    optional ``t``, ``s`` and named ``markers``.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    cv, rows, cols = _KINDS[kind](data)
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    svg = stem.with_suffix(".svg")
    svg.write_text(cv.render(), encoding="utf-8")
    csvp = write_csv(stem.with_suffix(".csv"), rows, cols)
    return svg, csvp


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    """What was run, when, with which outcome, and which files it produced."""

    config: dict
    code_version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float | None = None
    outcome: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def record(self, *paths, root) -> None:
        for p in paths:
            p = Path(p)
            self.files[str(p.relative_to(root))] = sha256_file(p)

    def write(self, root) -> Path:
        self.finished = time.time()
        path = Path(root) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
