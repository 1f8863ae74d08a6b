"""Run configured experiments and sweeps, writing CSV/JSON results.

Grid points are independent.  They run on a thread pool, but every file is
written by the calling thread in grid order, so outputs do not depend on the
worker count or on completion order.  Each finished point is also saved as
``points/point_NNNN.json``; a rerun with the same configuration picks those up
instead of recomputing them, which makes interrupted sweeps resumable.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
import platform
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (EchoRatio, FitDidNotConverge, FitResult, fit_double_exponential,
                       ste_he_ratio)
from .bloch import EchoTrain, Ensemble, SignalTrace, echo_tops, run
from .config import ExperimentConfig
from .core import GradientSpec
from .liouville import SpinSystem, run_program_exact
from .seqlang import STE_FAMILY, TRAINS, PulseProgram, builtin, parse_program, select_pathway

POINT_SCHEMA_VERSION = 1

SUMMARY_COLUMNS = ("point", "sequence", "tau", "t1", "g", "b1_sigma", "n",
                   "a_s", "a_l", "t_l", "tail_pct", "fit_status", "a_l_tail", "t_l_tail",
                   "ste_amp", "he_amp", "ratio", "phase_sign", "he_rms")


def fmt(x) -> str:
    """Float text for CSV: 17 significant digits, empty for missing."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


# --------------------------------------------------------------------------
# one grid point
# --------------------------------------------------------------------------

@dataclass
class PointResult:
    index: int
    params: dict
    settings: dict
    traces: dict[str, SignalTrace] = field(default_factory=dict)
    echoes: dict[str, EchoTrain] = field(default_factory=dict)
    fit: FitResult | None = None
    fit_error: str | None = None
    ratio: EchoRatio | None = None
    he_compare: dict | None = None

    # -- summary -----------------------------------------------------------
    def summary_row(self) -> dict:
        s = self.settings
        row = dict.fromkeys(SUMMARY_COLUMNS)
        row.update(point=self.index, sequence=s.get("sequence") or "custom", tau=s.get("tau"),
                   t1=s.get("t1"), g=s.get("g"), b1_sigma=s.get("b1_sigma_effective"), n=s.get("n_effective"))
        if self.fit is not None:
            f = self.fit
            row.update(a_s=f.a_s, a_l=f.a_l, t_l=f.t_l, tail_pct=f.tail_pct, fit_status=f.status,
                       a_l_tail=f.a_l_tail, t_l_tail=f.t_l_tail)
        elif self.fit_error is not None:
            row.update(fit_status="no_convergence")
        if self.ratio is not None:
            r = self.ratio
            row.update(ste_amp=r.ste_amp, he_amp=r.he_amp, ratio=r.ratio, phase_sign=r.phase_sign)
        if self.he_compare is not None:
            row.update(he_rms=self.he_compare["rms"])
        return row

    # -- persistence -------------------------------------------------------
    def to_dict(self, digest: str) -> dict:
        return {
            "schema_version": POINT_SCHEMA_VERSION,
            "digest": digest,
            "index": self.index,
            "params": self.params,
            "settings": self.settings,
            "traces": {k: {"t": v.t.tolist(), "re": v.s.real.tolist(), "im": v.s.imag.tolist()}
                       for k, v in self.traces.items()},
            "echoes": {k: {"t": v.t.tolist(), "re": v.amplitudes.real.tolist(),
                           "im": v.amplitudes.imag.tolist(), "tau": v.tau, "sequence": v.sequence}
                       for k, v in self.echoes.items()},
            "fit": None if self.fit is None else self.fit.to_dict(),
            "fit_error": self.fit_error,
            "ratio": None if self.ratio is None else self.ratio.__dict__,
            "he_compare": self.he_compare,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointResult":
        traces = {k: SignalTrace(np.array(v["t"]), np.array(v["re"]) + 1j * np.array(v["im"]))
                  for k, v in d["traces"].items()}
        echoes = {k: EchoTrain.from_arrays(v["t"], np.array(v["re"]) + 1j * np.array(v["im"]),
                                           v["tau"], v["sequence"])
                  for k, v in d["echoes"].items()}
        fit = FitResult.from_dict(d["fit"]) if d["fit"] is not None else None
        ratio = EchoRatio(**d["ratio"]) if d["ratio"] is not None else None
        return cls(d["index"], d["params"], d["settings"], traces, echoes, fit, d["fit_error"],
                   ratio, d["he_compare"])


def build_program(settings: dict) -> PulseProgram:
    if settings.get("source"):
        return parse_program(settings["source"])
    name = settings["sequence"]
    tau = settings["tau"]
    n = settings.get("n")
    if n is None:
        if name in TRAINS and settings.get("duration"):
            cycle = TRAINS[name][1]
            n = max(1, math.ceil(settings["duration"] / (2 * tau * cycle) - 1e-9))
        else:
            n = 1
    return builtin(name, tau, settings.get("t1"), n, window=settings.get("window") or 0.0,
                   dwell=settings.get("dwell"))


def hahn_decay(ensemble: Ensemble, gradient: GradientSpec, times, **run_kw) -> np.ndarray:
    """Hahn-echo amplitudes ``|s(2 tau)|`` for echo times ``2 tau = times``."""
    out = []
    for t in times:
        prog = builtin("HE", t / 2)
        out.append(abs(echo_tops(prog, run(prog, ensemble, gradient, **run_kw)).amplitudes[0]))
    return np.array(out)


def simulate_point(config: ExperimentConfig, index: int, params: dict, *,
                   ensemble: Ensemble | None = None, workers: int = 1) -> PointResult:
    settings = config.point_settings(params)
    prog = build_program(settings)
    settings["n_effective"] = len(prog.pulses)
    pathway = settings["pathway"]
    is_ste = settings.get("sequence") in STE_FAMILY
    if pathway == "both":
        programs = {"ste": select_pathway(prog, "ste"), "he": select_pathway(prog, "he")}
    elif pathway in ("ste", "he"):
        programs = {pathway: select_pathway(prog, pathway)}
    else:
        programs = {"all": prog}

    res = PointResult(index, dict(params), settings)
    if config.engine == "liouville":
        ss = config.raw["spin_system"]
        system = SpinSystem(tuple(ss["offsets"]), tuple(map(tuple, ss.get("couplings") or [])) or ())
        scale = ss.get("b1_scale")
        settings["b1_sigma_effective"] = None
        for ch, p in programs.items():
            res.traces[ch] = run_program_exact(p, system, b1_scale=scale)
    else:
        sample = config.sample_spec(settings.get("b1_sigma"))
        settings["b1_sigma_effective"] = sample.b1_sigma
        if ensemble is None:
            ensemble = Ensemble.from_spec(sample, config.seed)
        gradient = GradientSpec(settings["g"])
        rf = config.rf_amplitude()
        for ch, p in programs.items():
            res.traces[ch] = run(p, ensemble, gradient, rf_amplitude=rf, workers=workers)

    for ch, p in programs.items():
        if p.acquisitions:
            res.echoes[ch] = echo_tops(p, res.traces[ch])

    an = config.analysis
    first = next(iter(res.echoes.values()), None)
    t_short = config.t_short()
    if an.get("fit", False) and first is not None and len(first) >= 6 and t_short and math.isfinite(t_short):
        try:
            res.fit = fit_double_exponential(first, t_short)
        except FitDidNotConverge as exc:
            res.fit_error = str(exc)

    if is_ste and settings.get("t1") is not None:
        window = settings["tau"] if "ratio_window" not in an else _dur(an["ratio_window"])
        try:
            if pathway == "both":
                res.ratio = ste_he_ratio(res.traces["ste"], settings["tau"], settings["t1"],
                                         window=window, he_trace=res.traces["he"])
            elif pathway == "all":
                res.ratio = ste_he_ratio(res.traces["all"], settings["tau"], settings["t1"], window=window)
        except ValueError:
            res.ratio = None

    if an.get("compare_he", False) and config.engine == "bloch" and first is not None:
        limit = 3 * t_short if t_short else math.inf
        sel = first.t <= limit + 1e-12
        ts = first.t[sel]
        he = hahn_decay(ensemble, gradient, ts, rf_amplitude=rf)
        train = first.magnitudes[sel]
        rms = float(np.sqrt(np.mean((train - he) ** 2)) / he[0]) if len(he) else math.nan
        res.he_compare = {"t": ts.tolist(), "he": he.tolist(), "train": train.tolist(), "rms": rms}
    return res


def _dur(v):
    from .seqlang import parse_duration
    return parse_duration(v)


# --------------------------------------------------------------------------
# whole experiment
# --------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    points: list[PointResult]
    directory: Path | None
    files: dict[str, Path] = field(default_factory=dict)

    def summary(self) -> list[dict]:
        return [p.summary_row() for p in self.points]


def run_experiment(config: ExperimentConfig, out_dir=None, *, workers: int | None = None,
                   resume: bool = True, write: bool = True, progress=None) -> ExperimentResult:
    """Evaluate every grid point and (optionally) write the result files.

    Parameters
    ----------
    config : ExperimentConfig
    out_dir : path, optional
        Overrides ``output.directory``.
    workers : int, optional
        Worker threads for grid points (default from the config).  A
        single-point run hands the workers to the engine instead.
    resume : bool
        Reuse per-point files left by an earlier run of the same config.
    write : bool
        When False nothing touches the filesystem.
    progress : callable, optional
        Called as ``progress(index, n_points)`` after each point completes.
    """
    workers = workers or config.workers
    grid = config.grid()
    digest = config.digest()
    directory = Path(out_dir) if out_dir is not None else config.output_dir
    points_dir = directory / "points"
    if write:
        points_dir.mkdir(parents=True, exist_ok=True)

    results: dict[int, PointResult] = {}
    if write and resume:
        for i in range(len(grid)):
            f = points_dir / f"point_{i:04d}.json"
            if f.exists():
                try:
                    d = json.loads(f.read_text())
                except (OSError, json.JSONDecodeError):
                    continue
                if d.get("digest") == digest and d.get("schema_version") == POINT_SCHEMA_VERSION:
                    results[i] = PointResult.from_dict(d)

    ensembles: dict = {}
    if config.engine == "bloch":
        for params in grid:
            key = params.get("b1_sigma")
            if key not in ensembles:
                ensembles[key] = Ensemble.from_spec(config.sample_spec(key), config.seed)

    todo = [i for i in range(len(grid)) if i not in results]

    def task(i):
        return simulate_point(config, i, grid[i], ensemble=ensembles.get(grid[i].get("b1_sigma")),
                              workers=workers if len(grid) == 1 else 1)

    def store(r: PointResult):
        results[r.index] = r
        if write:
            tmp = points_dir / f".point_{r.index:04d}.json.tmp"
            tmp.write_text(json.dumps(r.to_dict(digest)))
            os.replace(tmp, points_dir / f"point_{r.index:04d}.json")
        if progress:
            progress(r.index, len(grid))

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(task, i): i for i in todo}
            for fut in as_completed(futures):
                store(fut.result())
    else:
        for i in todo:
            store(task(i))

    ordered = [results[i] for i in range(len(grid))]
    out = ExperimentResult(config, ordered, directory if write else None)
    if write:
        out.files = write_outputs(out, directory)
    return out


def write_outputs(result: ExperimentResult, directory: Path) -> dict[str, Path]:
    cfg = result.config
    files = {}
    if cfg.write_traces:
        files["traces"] = directory / "traces.csv"
        with open(files["traces"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "channel", "t", "s_re", "s_im", "s_mag"])
            for p in result.points:
                for ch, tr in p.traces.items():
                    for t, s in zip(tr.t, tr.s):
                        w.writerow([p.index, ch, fmt(t), fmt(s.real), fmt(s.imag), fmt(abs(s))])
    files["echoes"] = directory / "echoes.csv"
    with open(files["echoes"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "channel", "echo_index", "t", "amp", "phase", "re", "im"])
        for p in result.points:
            for ch, tr in p.echoes.items():
                for e in tr.entries:
                    a = e.amplitude
                    w.writerow([p.index, ch, e.index, fmt(e.t), fmt(abs(a)),
                                fmt(math.atan2(a.imag, a.real)), fmt(a.real), fmt(a.imag)])
    files["fits"] = directory / "fits.json"
    fits = {"schema_version": 1, "config": cfg.name,
            "points": [{"point": p.index, "params": p.params,
                        "fit": None if p.fit is None else _json_safe(p.fit.to_dict()),
                        "fit_error": p.fit_error,
                        "ratio": None if p.ratio is None else _json_safe(p.ratio.__dict__),
                        "he_compare_rms": None if p.he_compare is None else _json_safe(p.he_compare["rms"])}
                       for p in result.points]}
    files["fits"].write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n")
    files["summary"] = directory / "sweep_summary.csv"
    with open(files["summary"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in result.summary():
            w.writerow([fmt(row[c]) for c in SUMMARY_COLUMNS])
    if cfg.write_plots:
        from . import plotting
        files.update(plotting.plot_experiment(result, directory / "plots"))
    files["metadata"] = directory / "run_metadata.json"
    meta = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "config": cfg.name,
            "digest": cfg.digest(), "points": len(result.points), "package_version": __version__,
            "python": platform.python_version(), "numpy": np.__version__}
    files["metadata"].write_text(json.dumps(meta, indent=2) + "\n")
    return files


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def read_echoes_csv(path) -> dict[tuple[int, str], EchoTrain]:
    """Group an ``echoes.csv`` file back into echo trains."""
    groups: dict[tuple[int, str], list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        missing = {"point", "t", "amp"} - set(rd.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in rd:
            key = (int(row["point"]), row.get("channel") or "all")
            if row.get("re") not in (None, "") and row.get("im") not in (None, ""):
                a = complex(float(row["re"]), float(row["im"]))
            else:
                a = float(row["amp"]) * complex(math.cos(float(row.get("phase") or 0)),
                                                math.sin(float(row.get("phase") or 0)))
            groups.setdefault(key, []).append((float(row["t"]), a))
    return {k: EchoTrain.from_arrays([t for t, _ in v], [a for _, a in v]) for k, v in groups.items()}


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {}
        for k, v in r.items():
            if v == "":
                d[k] = None
            else:
                try:
                    d[k] = float(v) if k not in ("point", "n", "phase_sign") else int(float(v))
                except ValueError:
                    d[k] = v
        out.append(d)
    return out
