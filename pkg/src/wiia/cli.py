"""Command line entry point and experiment runner.

``wiia <kind> --config FILE [--out DIR] [--resume] [--cells a..b]``

Every run writes its CSV tables and SVG plots under the output directory and
finishes with ``manifest.json`` listing the files and their checksums.
Sweeps checkpoint one JSON file per cell under ``cells/``; ``--resume`` keeps
existing cell files, otherwise they are cleared first.  ``--cells a..b``
restricts a sweep to the inclusive index range ``a..b``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .output import RunManifest, emit_plot, write_csv

log = logging.getLogger("wiia")

__all__ = ["main", "run_experiment", "parse_cells"]

WORKERS_ENV = "WIIA_WORKERS"


def parse_cells(spec: str | None) -> range | None:
    """``"a..b"`` to the inclusive range ``a..b``; ``None`` passes through."""
    if spec is None:
        return None
    try:
        a, b = spec.split("..")
        lo, hi = int(a), int(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--cells expects a..b, got {spec!r}") from exc
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"--cells range {spec!r} is empty or negative")
    return range(lo, hi + 1)


class _Run:
    """Per-run helper that collects emitted files into the manifest."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(cfg.to_dict())

    def csv(self, name, rows, columns=None):
        p = write_csv(self.out / name, rows, columns)
        self.manifest.record(p, root=self.out)
        return p

    def plot(self, data, kind, name):
        paths = emit_plot(data, kind, self.out / name)
        self.manifest.record(*paths, root=self.out)
        return paths

    def json(self, name, obj):
        p = self.out / name
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")
        self.manifest.record(p, root=self.out)
        return p


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return str(o)


# ---------------------------------------------------------------------------
# PDE experiments


def _grid(cfg: ExperimentConfig):
    from .grid import Grid
    from .pulse import pulse_grid

    g = cfg.grid
    if g["width"] > 0:
        return Grid.from_spacing((g["length"], g["width"]), g["dx"], g["bc"])
    return pulse_grid(g["length"], g["dx"], g["bc"])


def _standing(cfg: ExperimentConfig):
    from .pulse import find_standing_pulse, gaussian_guess

    m = cfg.model_spec()
    g = _grid(cfg)
    return find_standing_pulse(m, gaussian_guess(m, g))


def _pulse(cfg: ExperimentConfig):
    from .pulse import find_traveling_pulse

    p = _standing(cfg)
    if cfg.experiment["kind"] == "traveling":
        c0 = cfg.experiment["c_guess"]
        if c0 == 0:
            raise ConfigError("experiment.c_guess must be non-zero for traveling pulses",
                              key="experiment.c_guess")
        p = find_traveling_pulse(p.model, p, c0)
    return p


def _initial_field(cfg: ExperimentConfig):
    from .grid import Field
    from .models import background
    from .pulse import gaussian_guess

    m = cfg.model_spec()
    g = _grid(cfg)
    bg = background(m)
    kind = cfg.experiment["initial"]
    if kind == "uniform":
        return Field.uniform(g, bg)
    if kind == "pulse":
        if g.dim != 1:
            raise ConfigError("initial = 'pulse' needs a one-dimensional grid", key="experiment.initial")
        p = _standing(cfg)
        return p.field()
    amp = cfg.experiment["amplitude"] or 1.0
    if kind == "gaussian":
        if g.dim == 1:
            return gaussian_guess(m, g, amplitude=amp * 2.3)
        f = Field.uniform(g, bg)
        X, Y = np.meshgrid(g.coords(0), g.coords(1), indexing="ij")
        r2 = (X - g.extent[0] / 2) ** 2 + (Y - g.extent[1] / 2) ** 2
        f.values[0] += amp * np.exp(-r2 / 0.01**2)
        return f
    # "spot": a disc seed that is left to settle and then nudged in +x
    return _spot(g, bg, amp)


def _spot(g, bg, amp):
    from .grid import Field

    f = Field.uniform(g, bg)
    x = g.coords(0)
    cx = 0.25 * g.extent[0]
    if g.dim == 1:
        r = np.abs(x - cx)
    else:
        X, Y = np.meshgrid(x, g.coords(1), indexing="ij")
        r = np.hypot(X - cx, Y - 0.5 * g.extent[1])
    disc = (r < 0.1).astype(float)
    f.values[0] = f.values[0] - 0.5 * amp * disc
    f.values[1] = f.values[1] + 0.25 * amp * disc
    return f


def _settle_and_kick(f, stepper, settle: float, kick: int):
    """Relax a seed for ``settle`` time units, then roll the fast components by ``kick`` cells.

    The roll breaks the mirror symmetry of a standing spot. Near the drift
    threshold this is enough for the spot to pick up a slow travelling speed.
    The slowest (last) component is left in place, so it lags behind.
    """
    if settle > 0:
        f = stepper.run(f, int(round(settle / stepper.dt)))
    if kick:
        f = f.copy()
        f.values[:-1] = np.roll(f.values[:-1], kick, axis=1)
    return f


def _spots(active, g):
    """Centroid in x, number of regions above half of the peak, and their area fraction."""
    from scipy import ndimage

    peak = float(active.max())
    if peak <= 0:
        return math.nan, 0, 0.0
    x = g.coords(0)
    xs = x if g.dim == 1 else x[:, None]
    mask = active > 0.5 * peak
    _, n = ndimage.label(mask)
    return float((active * xs).sum() / active.sum()), int(n), float(mask.mean())


def _line(values, g):
    """First component along the x axis (middle row for 2D)."""
    u = values[0]
    return u if g.dim == 1 else u[:, g.points[1] // 2]


def _pde_run(run: _Run):
    from .grid import DivergenceError, ImexStepper
    from .models import background

    cfg = run.cfg
    f = _initial_field(cfg)
    g = f.grid
    m = cfg.model_spec()
    bg = background(m)
    dt, T = cfg.time["dt"], cfg.time["horizon"]
    every = cfg.experiment["frame_every"] or cfg.time["sample_dt"] or T / 100
    k_every = max(1, int(round(every / dt)))
    n = int(math.ceil(T / dt))
    stepper = ImexStepper(g, m, dt)
    e = cfg.experiment
    f = _settle_and_kick(f, stepper, e["settle"], e["kick_cells"])

    def active(v):
        return v[1] if m.name == "gs3" else np.maximum(v[0] - bg[0], 0.0)

    t_frames, frames, dev, peaks, cents, counts, areas = [0.0], [_line(f.values, g)], [], [], [], [], []

    def observe():
        a = active(f.values)
        dev.append(float(np.max(np.abs(f.values[0] - bg[0]))))
        peaks.append(float(a.max()))
        c, nb, ar = _spots(a, g)
        cents.append(c)
        counts.append(nb)
        areas.append(ar)

    observe()
    outcome = None
    k = 0
    try:
        while k < n:
            steps = min(k_every, n - k)
            f = stepper.run(f, steps)
            k += steps
            t_frames.append(k * dt)
            frames.append(_line(f.values, g))
            observe()
    except DivergenceError:
        outcome = "diverged"
    eps = 1e-6
    if outcome is None:
        outcome = "background" if dev[-1] < eps else "pattern"
    x = g.coords(0)
    run.plot({"x": x, "t": np.array(t_frames), "u": np.array(frames), "title": f"{cfg.model} pde-run"},
             "spacetime", "spacetime")
    run.csv("series.csv", [{"t": a, "max_dev_u": b, "peak": c, "centroid_x": d, "n_spots": k, "area_frac": r}
                           for a, b, c, d, k, r in zip(t_frames, dev, peaks, cents, counts, areas)],
            ["t", "max_dev_u", "peak", "centroid_x", "n_spots", "area_frac"])
    if g.dim == 1:
        run.csv("final.csv", [{"x": xi, **{f"c{j}": f.values[j, i] for j in range(f.n_components)}}
                              for i, xi in enumerate(x)])
    return {"outcome": outcome, "t_end": t_frames[-1], "final_max_dev": dev[-1],
            "max_peak": max(peaks), "max_spots": max(counts), "min_spots": min(counts),
            "max_area_frac": max(areas), "centroid_shift": cents[-1] - cents[0]}


def _seed(cfg: ExperimentConfig):
    from .collision import harvest_traveling_pulse

    return harvest_traveling_pulse(cfg.model_spec(), dx=cfg.grid["dx"], dt=cfg.time["dt"])


def _pde_collide(run: _Run):
    from .collision import run_collision

    cfg = run.cfg
    e = cfg.experiment
    seed = _seed(cfg)
    if seed.kind != "traveling":
        return {"outcome": seed.kind, "c_single": seed.c}
    fe = e["frame_every"] or None
    r = run_collision(seed, h0=e["h0"], length=e["length"], horizon=cfg.time["horizon"] or None,
                      frame_every=fe if fe else 200.0)
    tr = r.tracks
    run.csv("tracks.csv", [{"t": a, "p1": b, "p2": c, "h": c - b, "amp1": d, "amp2": e_, "max_dev": f}
                           for a, b, c, d, e_, f in zip(tr.t, tr.p1, tr.p2, tr.amp1, tr.amp2, tr.dev)],
            ["t", "p1", "p2", "h", "amp1", "amp2", "max_dev"])
    if r.frames:
        run.plot({"x": r.x, "t": np.array([a for a, _ in r.frames]), "u": np.array([b for _, b in r.frames]),
                  "title": "collision"}, "spacetime", "spacetime")
    return r.summary()


def _pde_sweep(run: _Run, cells, resume: bool):
    from .collision import collide_cell, sweep_phase_diagram

    cfg = run.cfg
    e = cfg.experiment
    ck = run.out / "cells"
    if not resume and ck.exists():
        shutil.rmtree(ck)
    workers = int(os.environ.get(WORKERS_ENV, e["workers"]))
    dx, dt, T = cfg.grid["dx"], cfg.time["dt"], cfg.time["horizon"] or None

    def fn(m):
        return collide_cell(m, dx=dx, dt=dt, h0=e["h0"], length=e["length"], horizon=T)

    pd = sweep_phase_diagram(cfg.model_spec(), e["x_name"], e["x_values"], e["y_name"], e["y_values"],
                             checkpoint_dir=ck, cells=cells, cell_fn=fn if workers == 1 else None,
                             workers=workers)
    rows = list(pd.rows())
    run.manifest.record(*sorted(ck.glob("cell_*.json")), root=run.out)
    if rows:
        run.plot({"x_name": pd.x_name, "y_name": pd.y_name, "rows": rows, "title": "collision outcomes"},
                 "phase-diagram", "phase_diagram")
    failed = [r for r in rows if str(r["outcome"]).startswith("failed")]
    run.manifest.errors += [{"cell": r["cell"], "outcome": r["outcome"]} for r in failed]
    counts: dict[str, int] = {}
    for r in rows:
        counts[r["outcome"]] = counts.get(r["outcome"], 0) + 1
    return {"cells": len(rows), "counts": counts, "failed": len(failed)}


def _branch(run: _Run):
    from .pulse import continue_branch, detect_bifurcations

    cfg = run.cfg
    e = cfg.experiment
    p = _pulse(cfg)
    k0 = cfg.params[e["param"]]
    stop = e["stop"]
    prange = (min(k0, stop), max(k0, stop))
    br = continue_branch(p, e["param"], prange, ds=e["ds"], max_steps=e["max_steps"], spectra=e["spectra"],
                         direction=1 if stop >= k0 else -1)
    rows = []
    for q in br.points:
        row = {e["param"]: q.param, "c": q.c, "max_u": q.max_u, "tangent_param": q.tangent_param}
        if q.eig:
            lead = [v for v in (q.eig.get("real_max"), q.eig.get("real")) if v is not None]
            h = q.eig.get("hopf")
            row["re_real"] = q.eig["real"] if q.eig["real"] is not None else math.nan
            row["re_hopf"] = h.real if h is not None else math.nan
            row["im_hopf"] = h.imag if h is not None else math.nan
            unstable = any(v > 0 for v in lead) or (h is not None and h.real > 0)
            row["stable"] = not unstable
        rows.append(row)
    bifs = detect_bifurcations(br) if e["spectra"] else []
    brows = [{"kind": b.kind, e["param"]: b.params.get(e["param"]), "parity": b.parity,
              "eig_re": complex(b.eigenvalues[0]).real if b.eigenvalues else math.nan,
              "eig_im": complex(b.eigenvalues[0]).imag if b.eigenvalues else math.nan} for b in bifs]
    run.csv("branch.csv", rows)
    run.csv("bifurcations.csv", brows, ["kind", e["param"], "parity", "eig_re", "eig_im"])
    markers = []
    for b in bifs:
        kv = b.params.get(e["param"])
        mu = b.profile.amplitude + b.profile.background[0] if b.profile is not None else math.nan
        markers.append({e["param"]: kv, "max_u": mu, "kind": b.kind})
    if rows and e["spectra"]:
        run.plot({"param": e["param"], "y": "max_u", "rows": rows, "markers": markers, "title": "pulse branch"},
                 "branch", "branch")
    return {"points": len(rows), "end_reason": br.end_reason, "folds": len(br.folds),
            "bifurcations": [(b["kind"], b[e["param"]]) for b in brows]}


def _spectrum(run: _Run):
    from .pulse import critical_eigenvalues, interaction_constants, leading_spectrum

    cfg = run.cfg
    e = cfg.experiment
    p = _pulse(cfg)
    ev = critical_eigenvalues(p, e["omega_guess"])
    run.csv("eigenvalues.csv", [{"re": complex(z).real, "im": complex(z).imag} for z in ev["all"]], ["re", "im"])
    out = {"c": p.c, "translation": ev["translation"], "real": ev["real"], "real_max": ev["real_max"],
           "hopf": [ev["hopf"].real, ev["hopf"].imag] if ev["hopf"] is not None else None}
    if p.c == 0:
        s = leading_spectrum(p, n=e["n"], omega_guess=e["omega_guess"])
        N, n = p.state.shape
        cols = {"phi": s.phi, "psi": s.psi, "re_xi": np.real(s.xi), "im_xi": np.imag(s.xi),
                "phi_star": s.phi_star, "psi_star": s.psi_star,
                "re_xi_star": np.real(s.xi_star), "im_xi_star": np.imag(s.xi_star)}
        names = "uvw" if N == 3 else [str(j) for j in range(N)]
        rows = []
        for i, xi in enumerate(p.x):
            r = {"x": xi}
            for j in range(N):
                r[f"S_{names[j]}"] = p.state[j, i]
            for key, vec in cols.items():
                v = np.real(np.asarray(vec)).reshape(N, n)
                for j in range(N):
                    r[f"{key}_{names[j]}"] = v[j, i]
            rows.append(r)
        run.csv("eigenfunctions.csv", rows)
        out["omega0"] = s.omega0
        out["normalization"] = {k: float(v) for k, v in s.residuals.items()}
        if e["constants"]:
            ic = interaction_constants(p, s)
            run.csv("constants.csv", [{"M1": ic.M1, "M2": ic.M2, "M3": ic.M3, "alpha": ic.alpha,
                                       "alpha_adjoint": ic.alpha_adjoint, "M2_literal": ic.M2_literal,
                                       "M3_literal": ic.M3_literal, "b_star_r2": ic.b_star_r2}])
            out["constants"] = {"M1": ic.M1, "M2": ic.M2, "M3": ic.M3, "alpha": ic.alpha,
                                "alpha_adjoint": ic.alpha_adjoint, "warnings": ic.warnings}
    return out


def _dh_locate(run: _Run):
    from .pulse import locate_dh_point

    cfg = run.cfg
    e = cfg.experiment
    p = _standing(cfg)
    guess = tuple(e["guess"]) if e["guess"] else None
    b = locate_dh_point(p, (tuple(e["k4_range"]), tuple(e["tau_range"])), guess=guess)
    lam_d, lam_h = b.eigenvalues
    row = {"k4": b.params["k4"], "tau": b.params["tau"], "re_drift": lam_d,
           "re_hopf": complex(lam_h).real, "omega": complex(lam_h).imag, "iterations": b.iterations}
    run.csv("dh_point.csv", [row])
    return row


# ---------------------------------------------------------------------------
# reduced-system experiments


def _ode_run(run: _Run):
    from .reduced import appendix_a_initial, classify_ode, default_horizon, ep_coordinates, integrate
    from .reduced.dynamics import _label

    cfg = run.cfg
    p = cfg.reduced_params()
    e = cfg.experiment
    x0 = np.array(e["initial"]) if e["initial"] else appendix_a_initial(p)
    T = e["horizon"] or default_horizon(p)
    tr = integrate(x0, p, T)
    label = _label(tr, p) or "undecided"
    if not e["initial"]:
        try:
            label = classify_ode(p.mu1, p.mu2, p, horizon=e["horizon"] or None)
        except Exception as exc:  # undecided after the retry
            label = f"undecided ({exc})"
    markers = {k: v for k, v in ep_coordinates(p).items() if v is not None and k in ("EP0", "EP2-", "EP3-")}
    markers = {k: (v[0], v[1]) for k, v in markers.items()}
    run.plot({"t": tr.t, "v": tr.y[0], "A": tr.y[1], "s": tr.y[2], "markers": markers, "title": label},
             "orbit", "orbit")
    return {"outcome": label, "event": tr.event, "t_end": tr.t_end, "t_collision": tr.t_collision,
            "s_max": tr.s_max}


def _ode_sweep(run: _Run, cells, resume: bool):
    from .reduced import polar_ring, region_id
    from .reduced.dynamics import _classify_cell

    cfg = run.cfg
    p = cfg.reduced_params()
    e = cfg.experiment
    n = e["n"]
    if e["layout"] == "ring":
        _, m1, m2 = polar_ring(e["radius"], n)
    else:
        a = np.linspace(*e["mu1_range"], n)
        b = np.linspace(*e["mu2_range"], n)
        m1, m2 = (z.ravel() for z in np.meshgrid(a, b, indexing="ij"))
    ck = run.out / "cells"
    if not resume and ck.exists():
        shutil.rmtree(ck)
    ck.mkdir(parents=True, exist_ok=True)
    todo = range(len(m1)) if cells is None else [c for c in cells if c < len(m1)]
    rows = []
    for idx in todo:
        f = ck / f"cell_{idx}.json"
        if f.exists():
            rec = json.loads(f.read_text())
        else:
            o = _classify_cell(m1[idx], m2[idx], p)
            rec = {"cell": idx, "mu1": float(m1[idx]), "mu2": float(m2[idx]), "outcome": o,
                   "region": region_id(m1[idx], m2[idx], p) if (m1[idx] or m2[idx]) else "origin"}
            tmp = f.with_suffix(".tmp")
            tmp.write_text(json.dumps(rec, sort_keys=True))
            tmp.replace(f)
        rows.append(rec)
    run.manifest.record(*sorted(ck.glob("cell_*.json")), root=run.out)
    cols = ["cell", "mu1", "mu2", "outcome", "region"]
    run.csv("phase_diagram.csv", rows, cols)
    if e["layout"] == "square" and rows:
        run.plot({"x_name": "mu1", "y_name": "mu2", "rows": rows, "title": "reduced-system outcomes"},
                 "phase-diagram", "phase_diagram_plot")
    counts: dict[str, int] = {}
    for r in rows:
        counts[r["outcome"]] = counts.get(r["outcome"], 0) + 1
    return {"cells": len(rows), "counts": counts}


def _ode_critical(run: _Run):
    from .reduced import find_mu2_critical

    cfg = run.cfg
    p = cfg.reduced_params()
    rows = []
    for mu1 in cfg.experiment["mu1_values"]:
        r = find_mu2_critical(mu1, p, tol=cfg.experiment["tol"] * abs(mu1))
        rows.append({"mu1": mu1, "mu2c": r.mu2c, "lo": r.bracket[0], "hi": r.bracket[1],
                     "closest_approach": r.closest_approach, "ep3_norm": r.ep3_norm})
    run.csv("critical.csv", rows)
    return {"mu2c": [r["mu2c"] for r in rows]}


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None, resume: bool = False,
                   cells: range | None = None) -> RunManifest:
    """Dispatch ``cfg`` to its module, write results and the manifest.

    Errors are logged into the manifest; the caller decides the exit status
    from ``manifest.outcome["status"]``.
    """
    root = Path(out or cfg.output or f"runs/{cfg.kind}")
    run = _Run(cfg, root)
    if cfg.is_ode and not cfg.require_s6:
        from .reduced import ReducedParams

        run.manifest.outcome["warnings"] = ReducedParams(**cfg.params).violations()
    run.json("config_echo.json", cfg.to_dict())
    try:
        if cfg.kind == "pde-run":
            res = _pde_run(run)
        elif cfg.kind == "pde-collide":
            res = _pde_collide(run)
        elif cfg.kind == "pde-sweep":
            res = _pde_sweep(run, cells, resume)
        elif cfg.kind == "branch":
            res = _branch(run)
        elif cfg.kind == "spectrum":
            res = _spectrum(run)
        elif cfg.kind == "dh-locate":
            res = _dh_locate(run)
        elif cfg.kind == "ode-run":
            res = _ode_run(run)
        elif cfg.kind == "ode-sweep":
            res = _ode_sweep(run, cells, resume)
        else:
            res = _ode_critical(run)
        run.manifest.outcome.update(res)
        run.manifest.outcome["status"] = "ok"
    except Exception as exc:
        log.exception("experiment failed")
        run.manifest.errors.append({"error": type(exc).__name__, "message": str(exc)})
        run.manifest.outcome["status"] = "failed"
    run.manifest.write(root)
    return run.manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="wiia", description="Pulse collision and reduced-system experiments.")
    ap.add_argument("kind", choices=KINDS, help="experiment kind (must match the config)")
    ap.add_argument("--config", required=True, help="TOML experiment configuration")
    ap.add_argument("--out", default=None, help="output directory (overrides the config)")
    ap.add_argument("--resume", action="store_true", help="keep finished sweep cells")
    ap.add_argument("--cells", type=parse_cells, default=None, help="inclusive cell range a..b")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"wiia: {exc}", file=sys.stderr)
        return 2
    if cfg.kind != args.kind:
        print(f"wiia: config is for {cfg.kind!r}, not {args.kind!r}", file=sys.stderr)
        return 2
    man = run_experiment(cfg, args.out, args.resume, args.cells)
    root = Path(args.out or cfg.output or f"runs/{cfg.kind}")
    print(json.dumps({"out": str(root), **man.outcome}, default=_plain))
    return 0 if man.outcome.get("status") == "ok" else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
