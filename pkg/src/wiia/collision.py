"""Head-on collisions of two traveling pulses in the PDE.

A single traveling pulse is first harvested by time evolution of a slightly
asymmetric standing pulse on a small periodic domain.  It is then placed in a
long zero-flux domain together with its mirror image, the pair is evolved,
the two pulse positions are tracked and the run is labelled ``preservation``,
``annihilation``, ``standing`` or ``background``.

Thresholds (``eps_bg``, ``eps_v``, ``T_hold``) are derived from the harvested
single pulse; see :class:`Thresholds`.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .grid import DivergenceError, Field, Grid, ImexStepper
from .models import ModelSpec, background
from .pulse import (
    ConvergedToUniform,
    NewtonDiverged,
    SpectrumError,
    find_standing_pulse,
    gaussian_guess,
    leading_spectrum,
    pulse_grid,
    with_param,
)

log = logging.getLogger(__name__)

__all__ = [
    "TravelingSeed",
    "Thresholds",
    "CollisionRun",
    "PulseTracks",
    "PulseTracker",
    "PhaseDiagram",
    "UndecidedOutcome",
    "NoMinimum",
    "DomainTooSmall",
    "harvest_traveling_pulse",
    "build_two_pulse_initial",
    "track_pulses",
    "run_collision",
    "classify_outcome",
    "minimum_separation_report",
    "sweep_phase_diagram",
]

OUTCOMES = ("annihilation", "preservation", "standing", "background")

LOST_FRACTION = 0.2
HARVEST_LENGTH = 0.5
HOLD_WIDTHS = 20.0


class UndecidedOutcome(RuntimeError):
    """No classification criterion was met within the horizon."""


class NoMinimum(RuntimeError):
    """The separation never went through a minimum."""


class DomainTooSmall(ValueError):
    pass


# ---------------------------------------------------------------------------
# single traveling pulse


@dataclass
class TravelingSeed:
    """Asymptotic single pulse produced by the stepper itself.

    ``state`` lives on a periodic grid with the pulse centroid at the middle
    node.  ``c`` is the speed measured under the same ``dt`` that will be used
    for collisions (the stepper's speed depends on ``dt`` at first order), so
    it is the right reference for the classifier thresholds.
    """

    model: ModelSpec = field(repr=False)
    grid: Grid = field(repr=False)
    state: np.ndarray = field(repr=False)
    c: float
    background: np.ndarray
    amplitude: float
    width: float
    kind: str  # "traveling", "standing" or "background"
    dt: float
    t_transient: float

    def deviation(self) -> np.ndarray:
        return self.state[0] - self.background[0]


def _centroid_periodic(u0: np.ndarray, x: np.ndarray, length: float, ub: float) -> float:
    d = np.maximum(u0 - ub, 0.0)
    z = np.sum(d * np.exp(2j * np.pi * x / length))
    return float(np.angle(z) * length / (2 * np.pi)) % length


def _pulse_width(dev: np.ndarray, dx: float) -> float:
    """Full width at half maximum of the positive deviation."""
    amp = dev.max()
    return float(np.count_nonzero(dev > 0.5 * amp) * dx) if amp > 0 else 0.0


def harvest_traveling_pulse(m: ModelSpec, dx: float = 5e-4, dt: float = 0.05,
                            length: float = HARVEST_LENGTH, kick: float = 1e-2,
                            chunk: float = 250.0, t_max: float = 3e4,
                            speed_rtol: float = 2e-3, c_min: float = 1e-7) -> TravelingSeed:
    """Evolve a kicked standing pulse until it travels at constant speed.

    The standing pulse is perturbed by ``kick * psi`` (the generalized
    translation mode, normalised to unit maximum; ``S'`` if the spectrum is not
    available) and integrated on a periodic domain.  The speed is measured over
    consecutive chunks and accepted when three successive values agree to
    ``speed_rtol``.  If the pulse dies the seed has ``kind="background"``; if
    it stops moving, ``kind="standing"``.
    """
    g = pulse_grid(length, dx, "periodic")
    bg = background(m)
    x = g.coords(0)
    try:
        p = find_standing_pulse(m, gaussian_guess(m, g))
    except ConvergedToUniform:
        return TravelingSeed(m, g, Field.uniform(g, bg).values, 0.0, bg, 0.0, 0.0, "background", dt, 0.0)
    try:
        s = leading_spectrum(p)
        mode = np.real(s.psi).reshape(p.state.shape)
    except (SpectrumError, NewtonDiverged, np.linalg.LinAlgError, RuntimeError) as exc:
        log.info("psi unavailable (%s); kicking along S'", exc)
        mode = p.operator().d_dz(p.state).reshape(p.state.shape)
    mode = mode / np.max(np.abs(mode))
    state = Field(g, p.state + kick * mode)
    amp0 = p.amplitude
    stepper = ImexStepper(g, m, dt)
    nchunk = max(1, int(round(chunk / dt)))
    t = 0.0
    pos = _centroid_periodic(state.values[0], x, length, bg[0])
    speeds: list[float] = []
    kind = "standing"
    while t < t_max:
        state = stepper.run(state, nchunk)
        t += nchunk * dt
        dev = state.values[0] - bg[0]
        if dev.max() < LOST_FRACTION * amp0:
            return TravelingSeed(m, g, state.values, 0.0, bg, 0.0, 0.0, "background", dt, t)
        new = _centroid_periodic(state.values[0], x, length, bg[0])
        shift = (new - pos + 0.5 * length) % length - 0.5 * length
        pos = new
        speeds.append(shift / (nchunk * dt))
        if len(speeds) >= 3:
            last = np.array(speeds[-3:])
            scale = max(abs(last).max(), 1e-300)
            if np.ptp(last) <= speed_rtol * scale:
                kind = "traveling" if abs(last[-1]) > c_min else "standing"
                break
    c = speeds[-1] if speeds else 0.0
    if abs(c) <= c_min:
        kind = "standing"
    # re-centre by an integer roll so that the values are untouched
    shift_nodes = int(round((0.5 * length - pos) / g.spacing[0]))
    vals = np.roll(state.values, shift_nodes, axis=1)
    if c < 0:
        vals = vals[:, ::-1].copy()
        vals = np.roll(vals, 1, axis=1)  # keep the centroid on the middle node
        c = -c
    dev = vals[0] - bg[0]
    return TravelingSeed(m, g, vals, float(c), bg, float(dev.max()),
                         _pulse_width(dev, g.spacing[0]), kind, dt, t)


# ---------------------------------------------------------------------------
# two-pulse initial data


def _taper(r: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """1 for ``|r| <= inner``, cosine ramp to 0 at ``outer``."""
    a = np.clip((np.abs(r) - inner) / (outer - inner), 0.0, 1.0)
    return 0.5 * (1 + np.cos(np.pi * a))


def build_two_pulse_initial(seed: TravelingSeed, h0: float, length: float = 4.0) -> Field:
    """Right-moving pulse at ``center - h0/2`` and its mirror at ``center + h0/2``.

    The domain has zero-flux ends and the spacing of the seed grid, with an odd
    number of nodes so that the centre is a node.  The seed's deviation from
    the background is tapered smoothly to zero over the outer 40% of its
    half-window, and the right half of the field is the exact reflection of
    the left half.
    """
    if seed.kind != "traveling":
        raise ValueError(f"seed is {seed.kind}, not a traveling pulse")
    w = seed.width
    if not h0 > 4 * w:
        raise DomainTooSmall(f"h0={h0:g} is not larger than 4 pulse widths ({4 * w:.4g})")
    if not length > h0 + 6 * w:
        raise DomainTooSmall(f"length={length:g} must exceed h0 + 6 widths ({h0 + 6 * w:.4g})")
    dx = seed.grid.spacing[0]
    g = Grid.from_spacing(length, dx, "neumann")
    n = g.points[0]
    mid = (n - 1) // 2
    vals = Field.uniform(g, seed.background).values
    ns = seed.grid.points[0]
    cs = ns // 2
    half = min(cs - 1, int(round(0.5 * h0 / dx)) - 1, mid - 1)
    offs = np.arange(-half, half + 1)
    tap = _taper(offs * dx, 0.6 * half * dx, half * dx)
    pos = mid - int(round(0.5 * h0 / dx))
    dev = seed.state[:, cs + offs] - seed.background[:, None]
    idx = pos + offs
    keep = (idx >= 0) & (idx < mid)
    vals[:, idx[keep]] += (dev * tap)[:, keep]
    vals[:, mid + 1:] = vals[:, :mid][:, ::-1]
    return Field(g, vals)


# ---------------------------------------------------------------------------
# tracking


@dataclass
class PulseTracks:
    """Time series of the two tracked pulses.

    ``p1`` lives in the left half, ``p2`` in the right half.  Positions are
    NaN once the pulse is lost.  ``dev`` is ``max |u - u_bg|`` over the domain.
    """

    t: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    amp1: np.ndarray
    amp2: np.ndarray
    dev: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return self.p2 - self.p1

    def h_min(self) -> tuple[float, float]:
        h = self.h
        ok = np.isfinite(h)
        if not ok.any():
            return math.nan, math.nan
        k = int(np.nanargmin(np.where(ok, h, np.nan)))
        return float(h[k]), float(self.t[k])


class PulseTracker:
    """Online tracker: amplitude-weighted centroids of ``(u - u_bg)_+`` per half.

    A pulse counts as lost when the peak of ``(u - u_bg)_+`` on its half falls
    below ``LOST_FRACTION`` of ``amplitude``.
    """

    def __init__(self, grid: Grid, ubg: float, amplitude: float):
        self.x = grid.coords(0)
        n = len(self.x)
        self.mid = (n - 1) // 2
        self.ubg = float(ubg)
        self.threshold = LOST_FRACTION * amplitude
        self._rows: list[tuple] = []

    def _half(self, d, xs):
        a = float(d.max()) if d.size else 0.0
        if a < self.threshold:
            return math.nan, a
        return float(np.sum(d * xs) / np.sum(d)), a

    def update(self, t: float, u: np.ndarray) -> None:
        d = np.maximum(u - self.ubg, 0.0)
        m = self.mid
        dl, dr = d[: m + 1].copy(), d[m:].copy()
        dl[-1] *= 0.5  # the centre node is shared by both halves
        dr[0] *= 0.5
        p1, a1 = self._half(dl, self.x[: m + 1])
        p2, a2 = self._half(dr, self.x[m:])
        self._rows.append((t, p1, p2, a1, a2, float(np.max(np.abs(u - self.ubg)))))

    def tracks(self) -> PulseTracks:
        arr = np.array(self._rows, dtype=float).reshape(-1, 6)
        return PulseTracks(*arr.T)


def track_pulses(history: Iterable[tuple[float, Field]], ubg: float, amplitude: float) -> PulseTracks:
    """Track both pulses through a sequence of ``(t, Field)`` snapshots."""
    tracker = None
    for t, f in history:
        if tracker is None:
            tracker = PulseTracker(f.grid, ubg, amplitude)
        tracker.update(t, f.values[0])
    if tracker is None:
        raise ValueError("empty history")
    return tracker.tracks()


# ---------------------------------------------------------------------------
# runs and classification


@dataclass(frozen=True)
class Thresholds:
    """Classifier thresholds derived from the single pulse.

    ``eps_bg = 1e-3 * amplitude`` and ``eps_v = 1e-3 * c``.  ``T_hold`` is the
    time a single pulse needs to cover ``HOLD_WIDTHS`` pulse widths.
    """

    eps_bg: float
    eps_v: float
    t_hold: float

    @classmethod
    def from_seed(cls, seed: TravelingSeed) -> "Thresholds":
        return cls(1e-3 * seed.amplitude, 1e-3 * seed.c, HOLD_WIDTHS * seed.width / seed.c)


@dataclass
class CollisionRun:
    params: dict
    h0: float
    length: float
    dx: float
    dt: float
    horizon: float
    c_single: float
    amplitude: float
    width: float
    thresholds: Thresholds
    tracks: PulseTracks = field(repr=False)
    outcome: str | None = None
    extinction_time: float | None = None
    frames: list = field(default_factory=list, repr=False)
    x: np.ndarray | None = field(default=None, repr=False)
    final: np.ndarray | None = field(default=None, repr=False)

    @property
    def t(self):
        return self.tracks.t

    @property
    def h(self):
        return self.tracks.h

    def summary(self) -> dict:
        try:
            h_min, t_min, growth = minimum_separation_report(self)
        except NoMinimum:
            h_min = t_min = growth = math.nan
        return {
            "outcome": self.outcome, "h_min": h_min, "t_min": t_min,
            "envelope_growth": growth, "t_extinct": self.extinction_time,
            "c_single": self.c_single, "h0": self.h0, "length": self.length,
            "dt": self.dt, "horizon": self.horizon,
        }


def _collision_time(tr: PulseTracks, width: float) -> tuple[int | None, float]:
    """Index of the separation minimum, or None if no collision happened yet.

    A minimum counts once the pulses have approached by at least one width and
    then either moved apart by a tenth of a width or been lost.
    """
    h = tr.h
    ok = np.isfinite(h)
    if ok.sum() < 2:
        return None, math.nan
    hv = np.where(ok, h, np.inf)
    k = int(np.argmin(hv))
    if h[0] - hv[k] < width:
        return None, math.nan
    later = h[k + 1:]
    rebound = np.isfinite(later) & (later > hv[k] + 0.1 * width)
    lost = ~np.isfinite(later)
    if rebound.any() or lost.any():
        return k, float(tr.t[k])
    return None, math.nan


def classify_outcome(run: CollisionRun, final: bool = True) -> str:
    """Label a (possibly partial) collision run.

    ``background``: the field reached the background before any collision.
    ``annihilation``: both pulses lost after the separation minimum and
    ``|u - u_bg| < eps_bg`` everywhere.  ``preservation``: for ``T_hold``
    after the minimum both pulses survive and ``dh/dt > eps_v``.
    ``standing``: both pulses survive ``T_hold`` with ``|dh/dt| <= eps_v``.
    Raises :class:`UndecidedOutcome` when nothing applies and ``final`` is set;
    with ``final=False`` returns ``"running"`` instead.
    """
    tr = run.tracks
    th = run.thresholds
    t = tr.t
    k, t_min = _collision_time(tr, run.width)
    quiet = np.nonzero(tr.dev < th.eps_bg)[0]
    if quiet.size and (k is None or quiet[0] <= k):
        return "background"
    both = np.isfinite(tr.p1) & np.isfinite(tr.p2)
    if k is not None:
        after = slice(k + 1, None)
        if quiet.size and quiet[-1] > k and not both[quiet[-1]]:
            return "annihilation"
        tt = t[after]
        if tt.size and tt[-1] - t_min >= th.t_hold:
            win = (tt >= t_min + 0.5 * th.t_hold)
            if both[after].all() and win.sum() >= 2:
                hh = tr.h[after][win]
                rate = np.polyfit(tt[win], hh, 1)[0]
                if rate > th.eps_v:
                    return "preservation"
                if abs(rate) <= th.eps_v:
                    return "standing"
    elif t[-1] - t[0] >= th.t_hold and both.all():
        # pulses that never approach: standing if the gap does not change
        win = t >= t[-1] - 0.5 * th.t_hold
        if win.sum() >= 2 and abs(np.polyfit(t[win], tr.h[win], 1)[0]) <= th.eps_v:
            return "standing"
    if final:
        raise UndecidedOutcome(f"no outcome by t={t[-1]:g}")
    return "running"


def minimum_separation_report(run: CollisionRun) -> tuple[float, float, float]:
    """``(h_min, t_min, growth)`` where ``growth`` is the log-rate of the
    up-down envelope of the pulse peak after the rebound (NaN if too short).
    """
    tr = run.tracks
    k, t_min = _collision_time(tr, run.width)
    if k is None:
        raise NoMinimum("the pulses never reached a separation minimum")
    h_min = float(tr.h[k])
    a = tr.amp1[k:]
    tt = tr.t[k:]
    good = np.isfinite(tr.p1[k:])
    a, tt = a[good], tt[good]
    growth = math.nan
    if a.size >= 8:
        d = a - np.convolve(a, np.ones(5) / 5, mode="same")
        d = d[2:-2]
        ts = tt[2:-2]
        pk = [i for i in range(1, len(d) - 1) if abs(d[i]) >= abs(d[i - 1]) and abs(d[i]) > abs(d[i + 1])]
        if len(pk) >= 3:
            env = np.abs(d[pk])
            env = np.maximum(env, 1e-300)
            growth = float(np.polyfit(ts[pk], np.log(env), 1)[0])
    return h_min, t_min, growth


def run_collision(seed: TravelingSeed, h0: float = 2.0, length: float = 4.0,
                  horizon: float | None = None, sample_dt: float | None = None,
                  frame_every: float | None = None, retry: bool = True) -> CollisionRun:
    """Evolve the mirror-symmetric pair and classify the outcome.

    The default horizon is the approach time ``h0 / c`` plus twice
    ``T_hold``.  The run stops as soon as an outcome is decided.  An
    undecided run is continued once for as long again before
    :class:`UndecidedOutcome` propagates.
    """
    th = Thresholds.from_seed(seed)
    init = build_two_pulse_initial(seed, h0, length)
    g = init.grid
    m = seed.model
    dt = seed.dt
    if horizon is None:
        horizon = h0 / seed.c + 2 * th.t_hold
    if sample_dt is None:
        sample_dt = max(dt, min(0.02 * seed.width / seed.c, 50.0))
    every = max(1, int(round(sample_dt / dt)))
    fevery = None if frame_every is None else max(1, int(round(frame_every / (every * dt))))
    stepper = ImexStepper(g, m, dt)
    tracker = PulseTracker(g, seed.background[0], seed.amplitude)
    tracker.update(0.0, init.values[0])
    run = CollisionRun(seed.model.params_dict(), h0, length, g.spacing[0], dt, horizon, seed.c,
                       seed.amplitude, seed.width, th, tracker.tracks(), x=g.coords(0))
    frames = [(0.0, init.values[0].copy())] if fevery else []
    state = init
    k = 0
    limit = horizon
    label = "running"
    while True:
        while k * dt < limit:
            try:
                state = stepper.run(state, every)
            except DivergenceError:
                log.warning("divergence at t=%g", k * dt)
                raise
            k += every
            t = k * dt
            tracker.update(t, state.values[0])
            nsample = len(tracker._rows)
            if fevery and nsample % fevery == 0:
                frames.append((t, state.values[0].copy()))
            if nsample % 20 == 0:
                run.tracks = tracker.tracks()
                label = classify_outcome(run, final=False)
                if label != "running":
                    break
        run.tracks = tracker.tracks()
        label = classify_outcome(run, final=False)
        if label != "running" or not retry or limit > horizon:
            break
        limit = 2 * horizon
    run.horizon = limit
    run.frames = frames
    run.final = state.values
    if label == "running":
        raise UndecidedOutcome(f"no outcome within horizon {limit:g}")
    run.outcome = label
    q = np.nonzero(run.tracks.dev < th.eps_bg)[0]
    run.extinction_time = float(run.tracks.t[q[0]]) if label == "annihilation" and q.size else None
    return run


# ---------------------------------------------------------------------------
# phase diagram sweep


@dataclass
class PhaseDiagram:
    """Outcome per cell of a two-parameter sweep.

    ``cells`` maps the flat cell index (``i * len(y) + j``) to a record with
    keys ``outcome`` (or ``failed:<reason>``), ``h_min`` and ``t_extinct``.
    """

    x_name: str
    y_name: str
    x: np.ndarray
    y: np.ndarray
    cells: dict[int, dict]

    def index(self, i: int, j: int) -> int:
        return i * len(self.y) + j

    def outcome(self, i: int, j: int) -> str | None:
        rec = self.cells.get(self.index(i, j))
        return None if rec is None else rec["outcome"]

    def rows(self):
        for i, xv in enumerate(self.x):
            for j, yv in enumerate(self.y):
                rec = self.cells.get(self.index(i, j))
                if rec is None:
                    continue
                yield {"cell": self.index(i, j), self.x_name: float(xv), self.y_name: float(yv),
                       "outcome": rec["outcome"], "h_min": rec.get("h_min"),
                       "t_extinct": rec.get("t_extinct")}


def collide_cell(m: ModelSpec, dx: float = 5e-4, dt: float = 0.05, h0: float = 2.0,
                 length: float = 4.0, horizon: float | None = None) -> dict:
    """Standing pulse, then traveling pulse, then collision: one sweep cell."""
    seed = harvest_traveling_pulse(m, dx=dx, dt=dt)
    if seed.kind != "traveling":
        return {"outcome": seed.kind, "h_min": None, "t_extinct": None, "c_single": seed.c}
    run = run_collision(seed, h0=h0, length=length, horizon=horizon)
    s = run.summary()
    return {"outcome": run.outcome, "h_min": _num(s["h_min"]), "t_extinct": s["t_extinct"],
            "c_single": seed.c}


def _num(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def sweep_phase_diagram(base: ModelSpec, x_name: str, xs, y_name: str, ys,
                        checkpoint_dir: str | os.PathLike | None = None,
                        cells: Iterable[int] | None = None,
                        cell_fn: Callable[[ModelSpec], dict] | None = None,
                        workers: int = 1) -> PhaseDiagram:
    """Run ``cell_fn`` (default :func:`collide_cell`) on every parameter cell.

    With ``checkpoint_dir`` each finished cell is written to
    ``cell_<index>.json`` and existing files are reused, so an interrupted
    sweep resumes where it stopped.  Exceptions inside a cell are stored as
    ``failed:<ExceptionName>`` and the sweep continues.  ``workers > 1`` runs
    cells in separate processes.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    fn = collide_cell if cell_fn is None else cell_fn
    ck = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ck is not None:
        ck.mkdir(parents=True, exist_ok=True)
    todo = list(range(len(xs) * len(ys))) if cells is None else list(cells)
    results: dict[int, dict] = {}
    jobs = []
    for idx in todo:
        f = ck / f"cell_{idx}.json" if ck is not None else None
        if f is not None and f.exists():
            results[idx] = json.loads(f.read_text())
            continue
        i, j = divmod(idx, len(ys))
        m = with_param(with_param(base, x_name, xs[i]), y_name, ys[j])
        jobs.append((idx, m, f))

    def finish(idx, rec, f):
        results[idx] = rec
        if f is not None:
            tmp = f.with_suffix(".tmp")
            tmp.write_text(json.dumps(rec, sort_keys=True))
            tmp.replace(f)

    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = {ex.submit(_safe_cell, fn, m): (idx, f) for idx, m, f in jobs}
            for fut, (idx, f) in futs.items():
                finish(idx, fut.result(), f)
    else:
        for idx, m, f in jobs:
            finish(idx, _safe_cell(fn, m), f)
    return PhaseDiagram(x_name, y_name, xs, ys, results)


def _safe_cell(fn, m) -> dict:
    try:
        rec = fn(m)
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("cell failed: %r", exc)
        rec = {"outcome": f"failed:{type(exc).__name__}", "h_min": None, "t_extinct": None,
               "error": str(exc)}
    return rec
