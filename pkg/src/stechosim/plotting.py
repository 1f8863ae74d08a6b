"""SVG figures written straight from computed series (no display needed).

Output is deterministic: the SVG carries no date and element ids come from a
fixed hash salt, so identical data give byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import fit_quadratic_gradient  # noqa: E402

_RC = {"svg.hashsalt": "stechosim", "svg.fonttype": "none", "figure.figsize": (6.0, 4.2),
       "axes.grid": True, "grid.alpha": 0.3}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _label(row: dict) -> str:
    parts = []
    if row.get("sequence"):
        parts.append(str(row["sequence"]))
    if row.get("tau") is not None:
        parts.append(f"τ={row['tau'] * 1e6:g} µs")
    if row.get("g") is not None:
        parts.append(f"G={row['g']:g} G/cm")
    return ", ".join(parts)


def plot_decays(series, path, *, title=None, logy=True, reference_t2=None) -> Path:
    """Echo magnitude versus time.

    ``series`` is a list of ``(label, t, magnitude)`` tuples.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, t, m in series:
            ax.plot(np.asarray(t) * 1e3, m, ".-", ms=2.5, lw=0.8, label=label)
        if reference_t2 and series:
            tmax = max(np.max(t) for _, t, _ in series)
            tt = np.linspace(0, tmax, 200)
            ax.plot(tt * 1e3, np.exp(-tt / reference_t2), "k--", lw=0.8, label=f"exp(-t/{reference_t2 * 1e3:g} ms)")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("t (ms)")
        ax.set_ylabel("|M| / M0")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
        return _save(fig, Path(path))


def plot_tail_fraction(rows, path, *, title="Tail fraction") -> Path:
    """Tail percentage versus tau, one line per gradient."""
    rows = [r for r in rows if r.get("tail_pct") is not None and r.get("tau") is not None]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for g in sorted({r.get("g") or 0.0 for r in rows}):
            sel = sorted((r for r in rows if (r.get("g") or 0.0) == g), key=lambda r: r["tau"])
            pct = [r["tail_pct"] if math.isfinite(r["tail_pct"]) else np.nan for r in sel]
            ax.plot([r["tau"] * 1e6 for r in sel], pct, "o-", label=f"G={g:g} G/cm")
        ax.set_xlabel("τ (µs)")
        ax.set_ylabel("A_l / A_s (%)")
        ax.set_title(title)
        ax.legend(fontsize=7)
        return _save(fig, Path(path))


def plot_tail_rate(rows, path, *, title="Long-tail decay rate") -> Path:
    """``1/t_l`` versus tau, one line per gradient."""
    rows = [r for r in rows if r.get("t_l") is not None and r.get("tau") is not None]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for g in sorted({r.get("g") or 0.0 for r in rows}):
            sel = sorted((r for r in rows if (r.get("g") or 0.0) == g), key=lambda r: r["tau"])
            ax.plot([r["tau"] * 1e6 for r in sel], [1.0 / r["t_l"] if r["t_l"] else np.nan for r in sel],
                    "s-", label=f"G={g:g} G/cm")
        ax.set_xlabel("τ (µs)")
        ax.set_ylabel("1/t_l (1/s)")
        ax.set_title(title)
        ax.legend(fontsize=7)
        return _save(fig, Path(path))


def plot_ratio(rows, path, *, title="Stimulated / Hahn echo") -> Path:
    """Echo ratio versus gradient with the ``a G^2 + b`` fit overlaid."""
    rows = sorted((r for r in rows if r.get("ratio") is not None and r.get("g") is not None),
                  key=lambda r: r["g"])
    g = np.array([r["g"] for r in rows])
    ratio = np.array([r["ratio"] for r in rows])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(g, ratio, "o", label="simulated")
        if len(np.unique(g)) >= 3 and len(g) >= 4:
            q = fit_quadratic_gradient(list(zip(g, ratio)))
            gg = np.linspace(0, g.max(), 200)
            ax.plot(gg, q.a * gg ** 2 + q.b, "-",
                    label=f"a G² + b: a={q.a:.4g}, b={q.b:.4g}, r²={q.r_squared:.4f}")
        ax.set_xlabel("G (G/cm)")
        ax.set_ylabel("STE / HE")
        ax.set_title(title)
        ax.legend(fontsize=7)
        return _save(fig, Path(path))


def plot_summary(rows, directory) -> dict[str, Path]:
    """Every figure that the columns of a sweep summary support."""
    directory = Path(directory)
    out = {}
    if any(r.get("tail_pct") is not None for r in rows):
        out["tail_fraction"] = plot_tail_fraction(rows, directory / "tail_fraction.svg")
        out["tail_rate"] = plot_tail_rate(rows, directory / "tail_rate.svg")
    if any(r.get("ratio") is not None for r in rows):
        out["ratio"] = plot_ratio(rows, directory / "ratio_vs_g.svg")
    return out


def plot_experiment(result, directory) -> dict[str, Path]:
    directory = Path(directory)
    rows = result.summary()
    series = []
    for p, row in zip(result.points, rows):
        for ch, train in p.echoes.items():
            if len(train) > 1:
                label = _label(row) + ("" if ch == "all" else f" [{ch}]")
                series.append((label, train.t, train.magnitudes))
        if p.he_compare:
            series.append((_label(row) + " [Hahn]", p.he_compare["t"], p.he_compare["he"]))
    files = {}
    if series:
        files["decays"] = plot_decays(series, directory / "decays.svg", title=result.config.name,
                                      reference_t2=result.config.t_short())
    trace_series = [(_label(r) + ("" if ch == "all" else f" [{ch}]"), tr.t, np.abs(tr.s))
                    for p, r in zip(result.points, rows) for ch, tr in p.traces.items() if len(tr) > 1]
    if trace_series and not series:
        files["traces"] = plot_decays(trace_series, directory / "traces.svg", title=result.config.name,
                                      logy=False)
    files.update(plot_summary(rows, directory))
    return files
