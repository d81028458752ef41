import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from extwave import cli
from extwave.errors import ConfigInvalid, MissingArtifacts


def small(tmp_path, name, **kw):
    d = {"grid": {"h": 0.25}, "T_final": 2.0, "out": str(tmp_path / name)}
    d.update(kw)
    return d


def write_config(tmp_path, d, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# --- configuration ---------------------------------------------------------------------

def test_config_roundtrip_lossless():
    cfg = cli.RunConfig.from_dict({"p": 4.5, "grid": {"h": 0.05, "L": 12.0}, "params": {"T1": [1, 2]}})
    again = cli.RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.grid == {"h": 0.05, "L": 12.0, "lam": 0.5}


def test_nested_override_keeps_sibling_keys(tmp_path):
    path = write_config(tmp_path, {"grid": {"h": 0.2, "lam": 0.4}})
    cfg = cli.load_config(path, ["grid.h=0.05", "initial.center=[5, 1]", "out=runs/a"])
    assert cfg.grid["h"] == 0.05 and cfg.grid["lam"] == 0.4
    assert cfg.initial["center"] == [5, 1] and cfg.initial["kind"] == "gaussian"
    assert cfg.out == "runs/a"


def test_new_kind_replaces_initial_table():
    cfg = cli.RunConfig.from_dict({"initial": {"kind": "ring", "radius": 3.0, "width": 0.5}})
    assert cfg.initial == {"kind": "ring", "radius": 3.0, "width": 0.5}
    cfg = cli.RunConfig.from_dict({"obstacle": {"kind": "ellipse-graph", "coeffs": [1.5, 1.0]}})
    assert cfg.obstacle == {"kind": "ellipse-graph", "coeffs": [1.5, 1.0]}


def test_parse_value_falls_back_to_string():
    assert cli.parse_value("3") == 3
    assert cli.parse_value("[1, 2]") == [1, 2]
    assert cli.parse_value("fractional") == "fractional"


@pytest.mark.parametrize("d", [
    {"experiment": "dance"},
    {"p": 1.0},
    {"grid": {"h": -0.1}},
    {"grid": {"h": 0.1, "lam": 0.9}},
    {"T_final": -1.0},
    {"snapshots": {"schedule": "random"}},
    {"colour": "blue"},
])
def test_invalid_configs_rejected(d):
    with pytest.raises(ConfigInvalid):
        cli.RunConfig.from_dict(d).validate()


def test_set_into_scalar_rejected():
    with pytest.raises(ConfigInvalid):
        cli.load_config(None, ["p.x=1"])


def test_invalid_config_exit_status(tmp_path, capsys):
    status = cli.main(["simulate", "--set", "p=0.5", "--out", str(tmp_path / "x")])
    assert status == 2
    assert "config error" in capsys.readouterr().err


def test_unreadable_config_exit_status(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    bad.write_text("[1, 2]")
    assert cli.main(["simulate", "--config", str(bad)]) == 2


def test_module_error_exit_status(tmp_path, capsys):
    # box smaller than the data support
    status = cli.main(["simulate", "--set", "grid.L=2.0", "--set", "grid.h=0.25", "--set", "T_final=1",
                       "--out", str(tmp_path / "x")])
    assert status == 1
    assert "SupportTooLarge" in capsys.readouterr().err


# --- experiments -----------------------------------------------------------------------

def test_simulate_zero_amplitude_gives_zero_energies(tmp_path):
    d = small(tmp_path, "zero", initial={"amplitude": 0.0})
    status = cli.main(["simulate", "--config", write_config(tmp_path, d)])
    assert status == 0
    rows = read_csv(tmp_path / "zero" / "series.csv")
    assert list(rows[0].keys()) == ["t", "name", "value"]
    energy = [float(r["value"]) for r in rows if r["name"] == "energy"]
    # 41 uniform times on 16 steps of 0.125: each step serves the times nearest to it
    assert len(energy) == 17 and all(v == 0.0 for v in energy)
    fits = json.loads((tmp_path / "zero" / "fits.json").read_text())
    assert fits["energy_drift"] == 0.0 and fits["dirichlet_ok"]
    meta = json.loads((tmp_path / "zero" / "run_meta.json").read_text())
    assert meta["seed"] == 1 and meta["config"]["initial"]["amplitude"] == 0.0


def test_simulate_rerun_bit_identical(tmp_path):
    for name in ("a", "b"):
        d = small(tmp_path, name, initial={"kind": "random_smooth", "center": [3.0, 0.0], "radius": 1.5,
                                           "cutoff": 3, "amplitude": 0.5})
        assert cli.run(cli.RunConfig.from_dict(d)) == 0
    a = (tmp_path / "a" / "series.csv").read_bytes()
    b = (tmp_path / "b" / "series.csv").read_bytes()
    assert a == b
    assert len(a) > 1000


def test_seed_changes_random_data(tmp_path):
    out = []
    for seed in (1, 2):
        d = small(tmp_path, f"s{seed}", seed=seed,
                  initial={"kind": "random_smooth", "center": [3.0, 0.0], "radius": 1.5, "cutoff": 3,
                           "amplitude": 0.5})
        cli.run(cli.RunConfig.from_dict(d))
        out.append((tmp_path / f"s{seed}" / "series.csv").read_bytes())
    assert out[0] != out[1]


def test_flux_sweep_artifact_and_summary(tmp_path):
    d = small(tmp_path, "flux", p=3.0, params={"R": 1.0, "n_t": 20, "n_r": 20})
    assert cli.main(["flux", "--config", write_config(tmp_path, d)]) == 0
    rows = read_csv(tmp_path / "flux" / "flux_sweep.csv")
    assert list(rows[0].keys()) == ["t", "r", "p", "R", "Xr_value", "sign_ok"]
    assert len(rows) == 400
    assert all(r["sign_ok"] == "true" for r in rows)
    assert min(float(r["Xr_value"]) for r in rows) >= -1e-10
    report = cli.summarize(str(tmp_path))
    assert "flux positivity: PASS (min Xr = " in report


def test_flux_workers_match_serial(tmp_path):
    outs = []
    for w in (1, 2):
        d = small(tmp_path, f"w{w}", params={"p_values": [2, 5], "n_t": 6, "n_r": 6})
        cli.run(cli.RunConfig.from_dict({**d, "experiment": "flux"}), workers=w)
        outs.append((tmp_path / f"w{w}" / "flux_sweep.csv").read_bytes())
    assert outs[0] == outs[1]


def test_decay_reference_run_reports_fit(tmp_path):
    d = small(tmp_path, "decay", p=4.0, T_final=16.0, grid={"h": 0.25},
              snapshots={"schedule": "auto", "t0": 1.0, "n": 30}, params={"window": [4.0, 14.0]})
    assert cli.main(["decay", "--config", write_config(tmp_path, d)]) == 0
    fits = json.loads((tmp_path / "decay" / "fits.json").read_text())
    it = fits["interior_sup"]
    assert {"slope", "r2", "intercept", "window", "predicted"} <= set(it)
    assert it["predicted"] == pytest.approx(-0.75)
    assert fits["wave_zone_sup"]["predicted"] == pytest.approx(-0.375)
    assert fits["dirichlet_ok"]
    rows = read_csv(tmp_path / "decay" / "series.csv")
    t = sorted({float(r["t"]) for r in rows if r["name"] == "interior_sup"})
    assert t[0] == 0.0  # early-time anchor of the weighted potential
    t = t[1:]
    target = np.geomspace(1.0, 16.0, 30)
    nearest = target[np.argmin(np.abs(np.subtract.outer(t, target)), axis=1)]
    assert np.all(np.abs(np.array(t) - nearest) <= 0.0625 + 1e-12)  # steps nearest a geometric schedule
    report = cli.summarize(str(tmp_path / "decay"))
    assert "interior decay p=4.0" in report and "predicted -0.750, measured" in report


def test_convergence_and_scatter_and_spectrum(tmp_path):
    base = {"obstacle": None, "initial": {"center": [0.0, 0.0]}, "T_final": 2.0}
    cfg = cli.RunConfig.from_dict({**base, "experiment": "convergence", "out": str(tmp_path / "c"),
                                   "params": {"hs": [0.2, 0.1], "h_ref": 0.05}})
    assert cli.run(cfg) == 0
    fits = json.loads((tmp_path / "c" / "fits.json").read_text())
    assert 1.5 < fits["order"] < 2.6

    cfg = cli.RunConfig.from_dict({"experiment": "scatter", "p": 4.0, "grid": {"h": 0.25}, "T_final": 8.0,
                                   "out": str(tmp_path / "s"), "params": {"T1": [2.0, 4.0]}})
    assert cli.run(cfg) == 0
    fits = json.loads((tmp_path / "s" / "fits.json").read_text())
    assert fits["energy_scattering_regime"] and fits["predicted_tail"] == pytest.approx(-5 / 16)

    cfg = cli.RunConfig.from_dict({"experiment": "spectrum", "grid": {"h": 0.5, "L": 12.0},
                                   "out": str(tmp_path / "k"), "params": {"k": 3}})
    assert cli.run(cfg) == 0
    fits = json.loads((tmp_path / "k" / "fits.json").read_text())
    assert fits["lambda_min"] == pytest.approx(fits["eigenvalues"][0])
    report = cli.summarize(str(tmp_path))
    assert report.count("\n") == 2


def test_multiplier_divergence_report(tmp_path):
    cfg = cli.RunConfig.from_dict({"experiment": "multiplier", "grid": {"h": 0.1}, "T_final": 1.0,
                                   "out": str(tmp_path / "m"), "params": {"field": "X1"}})
    assert cli.run(cfg) == 0
    rep = json.loads((tmp_path / "m" / "identity_report.json").read_text())
    assert rep["field_id"] == "X1tilde" and rep["times"] == [1.0]
    assert "divergence closed form" in cli.summarize(str(tmp_path))


def test_summarize_empty_dir_raises(tmp_path):
    with pytest.raises(MissingArtifacts):
        cli.summarize(str(tmp_path))
    with pytest.raises(MissingArtifacts):
        cli.summarize(str(tmp_path / "nowhere"))


def test_module_entry_point(tmp_path):
    d = small(tmp_path, "e", initial={"amplitude": 0.0}, T_final=0.5)
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "extwave.cli", "simulate", "--config", write_config(tmp_path, d)],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "extwave.cli", "summarize", str(tmp_path)],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0 and "energy conservation: PASS" in r.stdout
    r = subprocess.run([sys.executable, "-m", "extwave.cli", "summarize", str(tmp_path / "none")],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 1
