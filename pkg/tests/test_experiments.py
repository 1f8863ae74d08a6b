import copy
import csv
import json
import math
from importlib import resources

import numpy as np
import pytest

from stechosim.config import SCHEMA, ConfigError, ExperimentConfig
from stechosim.experiments import (SUMMARY_COLUMNS, fmt, read_echoes_csv, read_summary_csv, run_experiment)
from stechosim.plotting import plot_summary

BASE = {
    "schema_version": 1,
    "name": "small",
    "seed": 3,
    "sample": {"n_isochromats": 2000, "offsets": {"kind": "lorentzian", "width": 1111.0},
               "b1_profile": [1.0, 0.0, -0.8], "b1_sigma": 0.05, "t1": "200ms", "t2": "1.8ms"},
    "sequence": {"builtin": "CPMG1", "tau": "100us", "n": 30},
    "sweep": {"g": [0.0, 5.0], "tau": ["100us", "200us"]},
    "analysis": {"fit": True, "t_short": "1.8ms"},
}


def cfg(**over):
    doc = copy.deepcopy(BASE)
    for k, v in over.items():
        if v is None:
            doc.pop(k, None)
        else:
            doc[k] = v
    return ExperimentConfig.from_dict(doc)


def files_bytes(directory):
    return {p.name: p.read_bytes() for p in directory.iterdir()
            if p.is_file() and p.name != "run_metadata.json"}


# -- config --------------------------------------------------------------------------

def test_bundled_configs_validate():
    names = sorted(p.name for p in resources.files("stechosim.configs").iterdir() if p.name.endswith(".json"))
    assert names == ["fig10_cpmg4.json", "fig1_trains.json", "fig4_ste.json", "fig5_pathways.json",
                     "fig6_ratio.json", "fig7_tails.json", "fig9_tail_rate.json"]
    for n in names:
        ExperimentConfig.load(resources.files("stechosim.configs") / n)


@pytest.mark.parametrize("patch,path", [
    (lambda d: d["sample"].update(n_isochromats=0), "sample.n_isochromats"),
    (lambda d: d["sample"].update(t2="fast"), "sample.t2"),
    (lambda d: d.update(engine="quantum"), "engine"),
    (lambda d: d["sweep"].update(g=[1.0, 1.0]), "sweep.g"),
    (lambda d: d.update(sequence={"builtin": "STE", "tau": "1ms"}, sweep={"g": [0.0]}), "sequence.t1"),
    (lambda d: d.update(engine="liouville"), "spin_system"),
    (lambda d: d.update(pulse={"model": "hard"}), "pulse"),
    (lambda d: d["sample"].update(t1="1ms", t2="3ms"), "sample"),
])
def test_config_errors_carry_field_path(patch, path):
    doc = copy.deepcopy(BASE)
    patch(doc)
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(doc)
    assert info.value.path == path


def test_liouville_rejects_gradient():
    doc = copy.deepcopy(BASE)
    doc.update(engine="liouville", spin_system={"offsets": [0.0, 100.0]})
    with pytest.raises(ConfigError, match="gradient"):
        ExperimentConfig.from_dict(doc)


def test_schema_is_versioned():
    assert SCHEMA["properties"]["schema_version"] == {"const": 1}
    doc = copy.deepcopy(BASE)
    doc["schema_version"] = 2
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_grid_order_and_units():
    grid = cfg().grid()
    assert grid == [{"g": 0.0, "tau": 1e-4}, {"g": 0.0, "tau": 2e-4}, {"g": 5.0, "tau": 1e-4},
                    {"g": 5.0, "tau": 2e-4}]
    assert cfg(sweep=None).grid() == [{}]


def test_digest_ignores_output_and_workers():
    a = cfg()
    b = cfg(output={"directory": "elsewhere"}, workers=7)
    c = cfg(seed=4)
    assert a.digest() == b.digest() != c.digest()


def test_rf_amplitude_from_pi_duration():
    assert cfg(pulse={"model": "hard", "pi_duration": "25.5us"}).rf_amplitude() == pytest.approx(math.pi / 25.5e-6)
    assert cfg().rf_amplitude() is None


# -- runner ---------------------------------------------------------------------------

def test_fmt_seventeen_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(None) == "" and fmt(3) == "3" and fmt(True) == "true"


def test_run_writes_outputs(tmp_path):
    res = run_experiment(cfg(), tmp_path)
    for name in ("traces.csv", "echoes.csv", "fits.json", "sweep_summary.csv", "run_metadata.json"):
        assert (tmp_path / name).exists()
    with open(tmp_path / "sweep_summary.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    assert len(rows) == 5
    summary = read_summary_csv(tmp_path / "sweep_summary.csv")
    assert [r["point"] for r in summary] == [0, 1, 2, 3]
    assert all(r["fit_status"] in ("ok", "tail_absent", "unresolved") for r in summary)
    trains = read_echoes_csv(tmp_path / "echoes.csv")
    assert len(trains) == 4 and all(len(t) == 30 for t in trains.values())
    np.testing.assert_array_equal(trains[(0, "all")].amplitudes, res.points[0].echoes["all"].amplitudes)
    fits = json.loads((tmp_path / "fits.json").read_text())
    assert fits["schema_version"] == 1 and len(fits["points"]) == 4


def test_rerun_is_bit_identical_and_resume_matches(tmp_path):
    c = cfg()
    run_experiment(c, tmp_path / "a", resume=False)
    run_experiment(c, tmp_path / "b", resume=False, workers=4)
    assert files_bytes(tmp_path / "a") == files_bytes(tmp_path / "b")
    # interrupted sweep: drop some per-point results and the summaries, then resume
    for f in ("point_0001.json", "point_0003.json"):
        (tmp_path / "a" / "points" / f).unlink()
    (tmp_path / "a" / "sweep_summary.csv").unlink()
    calls = []
    run_experiment(c, tmp_path / "a", progress=lambda i, n: calls.append(i))
    assert sorted(calls) == [1, 3]
    assert files_bytes(tmp_path / "a") == files_bytes(tmp_path / "b")


def test_resume_ignores_points_from_another_config(tmp_path):
    run_experiment(cfg(), tmp_path)
    calls = []
    run_experiment(cfg(seed=99), tmp_path, progress=lambda i, n: calls.append(i))
    assert sorted(calls) == [0, 1, 2, 3]


def test_three_pulse_channels_and_ratio(tmp_path):
    c = cfg(sequence={"builtin": "STE_CPMG1", "tau": "0.5ms", "t1": "8ms", "window": "0.5ms", "dwell": "10us",
                      "pathway": "both"},
            sweep={"g": [0.0, 2.0]}, pulse={"model": "hard", "pi_duration": "25.5us"},
            analysis={})
    res = run_experiment(c, tmp_path)
    rows = res.summary()
    assert set(res.points[0].traces) == {"ste", "he"}
    assert rows[1]["ste_amp"] > rows[0]["ste_amp"] > 0
    # 2000 isochromats: sampling noise alone is about 1%
    assert abs(rows[1]["he_amp"] - rows[0]["he_amp"]) < 0.03 * rows[0]["he_amp"]


def test_compare_he_channel(tmp_path):
    c = cfg(sequence={"builtin": "CPMG4", "tau": "100us", "n": 10}, sweep={"g": [5.0]},
            analysis={"fit": True, "t_short": "1.8ms", "compare_he": True})
    p = run_experiment(c, tmp_path).points[0]
    assert p.he_compare["rms"] < 0.02


def test_liouville_engine_run(tmp_path):
    c = cfg(engine="liouville", sweep={"n": [5, 10]}, sample=None,
            spin_system={"offsets": [0.0, 300.0, -500.0], "couplings": [[0, 50, 0], [50, 0, 20], [0, 20, 0]],
                         "b1_scale": [0.95]},
            analysis={"fit": False})
    res = run_experiment(c, tmp_path)
    assert [len(p.echoes["all"]) for p in res.points] == [5, 10]
    assert np.all(np.abs(res.points[1].traces["all"].s) <= 1 + 1e-12)


def test_plots_are_deterministic(tmp_path):
    c = cfg(output={"plots": True})
    run_experiment(c, tmp_path / "a", resume=False)
    run_experiment(c, tmp_path / "b", resume=False)
    svgs = sorted(p.name for p in (tmp_path / "a" / "plots").iterdir())
    assert "decays.svg" in svgs and "tail_fraction.svg" in svgs
    for name in svgs:
        assert (tmp_path / "a" / "plots" / name).read_bytes() == (tmp_path / "b" / "plots" / name).read_bytes()
    rows = read_summary_csv(tmp_path / "a" / "sweep_summary.csv")
    assert set(plot_summary(rows, tmp_path / "c")) == {"tail_fraction", "tail_rate"}
