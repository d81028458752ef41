"""Command-line experiment driver.

A run is described by one JSON document (see :class:`RunConfig`); individual
keys can be overridden with ``--set dotted.key=value``.  Every run writes
into its own output directory: ``series.csv`` (t, name, value), ``fits.json``,
``flux_sweep.csv``, ``identity_report.json`` as applicable, and
``run_meta.json`` with the resolved config, versions and wall-clock data.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functionals as F
from . import geometry as G
from . import multiplier as M
from . import solver as S
from . import spectral as P
from .errors import ConfigInvalid, ExtWaveError, MissingArtifacts

EXPERIMENTS = ("simulate", "convergence", "decay", "scatter", "multiplier", "flux", "spectrum")


@dataclass
class RunConfig:
    experiment: str = "simulate"
    p: float = 3.0
    obstacle: dict | None = field(default_factory=lambda: {"kind": "disk", "coeffs": [1.0], "n_theta": 256})
    grid: dict = field(default_factory=lambda: {"h": 0.1, "L": None, "lam": 0.5})
    initial: dict = field(default_factory=lambda: {"kind": "gaussian", "center": [3.0, 0.0],
                                                    "width": 1.0, "amplitude": 1.0})
    T_final: float = 20.0
    snapshots: dict = field(default_factory=lambda: {"schedule": "auto", "t0": 1.0, "n": 41})
    seed: int = 1
    out: str = "out"
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown config keys: {sorted(extra)}")
        base = cls().to_dict()
        _merge(base, copy.deepcopy(d))
        return cls(**base)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigInvalid(f"experiment must be one of {EXPERIMENTS}")
        try:
            S.make_exponents(self.p)
        except (ExtWaveError, TypeError) as e:
            raise ConfigInvalid(str(e)) from e
        h = self.grid.get("h")
        if not (isinstance(h, (int, float)) and h > 0):
            raise ConfigInvalid("grid.h must be a positive number")
        lam = self.grid.get("lam", 0.5)
        if not 0 < lam <= S.CFL_LIMIT:
            raise ConfigInvalid(f"grid.lam must lie in (0, {S.CFL_LIMIT:.4f}]")
        if not (isinstance(self.T_final, (int, float)) and self.T_final >= 0):
            raise ConfigInvalid("T_final must be non-negative")
        if self.snapshots.get("schedule") not in ("auto", "uniform", "geometric", "list"):
            raise ConfigInvalid("snapshots.schedule must be auto, uniform, geometric or list")
        return self


def _merge(base, new):
    """Recursive dict update.

    A ``None`` or non-dict value replaces the whole entry, and so does a table
    naming a different ``kind`` (its keys belong to another constructor).
    """
    for k, v in new.items():
        old = base.get(k)
        if isinstance(v, dict) and isinstance(old, dict) and v.get("kind", old.get("kind")) == old.get("kind"):
            _merge(base[k], v)
        else:
            base[k] = v


def set_path(d, dotted, value):
    """Assign ``value`` at a dot-separated key path, creating dicts on the way."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if cur.get(k) is None:
            cur[k] = {}
        elif not isinstance(cur[k], dict):
            raise ConfigInvalid(f"{k!r} in {dotted!r} is not a table")
        cur = cur[k]
    cur[keys[-1]] = value


def parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    d = {}
    if path:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigInvalid(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigInvalid(f"config {path} must hold a JSON object")
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalid(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        set_path(d, k.strip(), parse_value(v))
    return RunConfig.from_dict(d).validate()


# --- building blocks --------------------------------------------------------------

def _profile(cfg):
    ob = cfg.obstacle
    if not ob:
        return None
    return G.build_profile(ob["kind"], ob["coeffs"], ob.get("n_theta", 256))


def _initial_spec(cfg):
    d = dict(cfg.initial)
    if d.get("kind") == "random_smooth":
        d.setdefault("seed", cfg.seed)
    try:
        return S.initial_from_dict(d)
    except (KeyError, TypeError) as e:
        raise ConfigInvalid(f"bad initial-data spec {cfg.initial}: {e}") from e


def _box_half_width(cfg, spec, h, T):
    L = cfg.grid.get("L")
    if L is None:
        L = math.ceil((spec.support_radius() + T + 2 * h) / h - 1e-9) * h
    return float(L)


def _setup(cfg, h=None, T=None, L=None):
    h = cfg.grid["h"] if h is None else h
    T = cfg.T_final if T is None else T
    spec = _initial_spec(cfg)
    L = _box_half_width(cfg, spec, h, T) if L is None else L
    grid = G.GridSpec.make(h, L, cfg.grid.get("lam", 0.5))
    mask = G.build_mask(_profile(cfg), grid)
    state = S.make_initial(spec, grid, mask, cfg.p, T_final=T, seed=cfg.seed)
    return state


def _schedule(cfg, T):
    sch = cfg.snapshots
    kind = sch.get("schedule", "auto")
    if kind == "auto":
        # log-uniform samples suit log-log fits; everything else samples uniformly
        kind = "geometric" if cfg.experiment == "decay" else "uniform"
    if kind == "list":
        return [float(t) for t in sch["times"]]
    n = int(sch.get("n", 41))
    if kind == "geometric":
        return F.geometric_times(float(sch.get("t0", 1.0)), T, n)
    return list(np.linspace(0.0, T, n))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fit_dict(fit):
    return json.loads(fit.to_json())


# --- experiments --------------------------------------------------------------------

def _simulate(cfg, out):
    s0 = _setup(cfg)
    diags = {"energy": F.energy, "discrete_energy": F.discrete_energy,
             "potential_energy": F.potential_energy, "weighted_potential": F.weighted_potential}
    rec = F.SeriesRecorder(diags, _schedule(cfg, cfg.T_final))
    watch = S.DirichletWatch()
    export = cfg.params.get("export")
    snaps = sorted(set(rec.pending)) if export else None
    traj = S.evolve(s0, cfg.T_final, snapshot_times=snaps, observers=[rec, watch])
    F.write_series_csv(os.path.join(out, "series.csv"), rec.series())
    if export:
        S.export_trajectory(traj, os.path.join(out, "snapshots"), fmt=export)
    e = rec.values["discrete_energy"]
    drift = max(abs(v - e[0]) for v in e) / e[0] if e and e[0] > 0 else 0.0
    _write_json(os.path.join(out, "fits.json"), {"energy_drift": drift, "dirichlet_ok": watch.ok})
    return {"steps": traj.meta["steps"]}


def _convergence_error(args):
    cfg_d, h, h_ref, L, T = args
    cfg = RunConfig.from_dict(cfg_d)
    s = S.evolve(_setup(cfg, h=h, T=T, L=L), T).snapshots[-1]
    return h, s.phi


def _convergence(cfg, out, workers):
    hs = [float(h) for h in cfg.params.get("hs", [0.2, 0.1, 0.05])]
    h_ref = float(cfg.params.get("h_ref", min(hs) / 2))
    T = cfg.T_final
    spec = _initial_spec(cfg)
    L = _box_half_width(cfg, spec, max(hs), T)
    L = math.ceil(L / max(hs) - 1e-9) * max(hs)
    jobs = [(cfg.to_dict(), h, h_ref, L, T) for h in hs + [h_ref]]
    fields = dict(_map(_convergence_error, jobs, workers))
    ref = fields[h_ref]
    errors = {}
    for h in hs:
        k = int(round(h / h_ref))
        diff = fields[h] - ref[::k, ::k]
        errors[h] = float(np.sqrt(np.sum(diff * diff)) * h)
    x, y = np.log(hs), np.log([errors[h] for h in hs])
    order = float(np.polyfit(x, y, 1)[0])
    ser = [F.EnergySeries(f"l2_error_h={h!r}", [T], [errors[h]]) for h in hs]
    F.write_series_csv(os.path.join(out, "series.csv"), ser)
    _write_json(os.path.join(out, "fits.json"), {"order": order, "errors": {repr(h): e for h, e in errors.items()},
                                                 "h_ref": h_ref, "T": T})
    return {"order": order}


def _decay(cfg, out):
    s0 = _setup(cfg)
    ex = s0.exponents
    diags = {"interior_sup": lambda s: F.sup_by_region(s).interior if s.t > 0 else 0.0,
             "wave_zone_sup": lambda s: F.sup_by_region(s).wave_zone if s.t > 0 else 0.0,
             "weighted_potential": F.weighted_potential}
    # t = 0 anchors the early-time reference of the weighted potential
    times = sorted(set([0.0] + list(_schedule(cfg, cfg.T_final))))
    rec = F.SeriesRecorder(diags, times)
    watch = S.DirichletWatch()
    S.evolve(s0, cfg.T_final, observers=[rec, watch])
    ser = rec.series()
    F.write_series_csv(os.path.join(out, "series.csv"), ser)
    by = {s.name: s for s in ser}
    window = tuple(cfg.params.get("window", (10.0, 0.8 * cfg.T_final)))
    fits = {"p": ex.p, "dirichlet_ok": watch.ok}
    for name, pred in (("interior_sup", -(ex.p5 - 1) / 4), ("wave_zone_sup", -(ex.p5 - 1) / 8)):
        try:
            d = _fit_dict(F.fit_decay(by[name], window))
        except ExtWaveError as e:
            d = {"error": str(e)}
        d["predicted"] = pred
        fits[name] = d
    wp = by["weighted_potential"]
    early = wp.values[wp.times <= 1.0 + 1e-9]
    fits["weighted_potential"] = {
        "max_ratio": float(wp.values.max() / early.max()) if early.size and early.max() > 0 else None,
        "slope": float(np.polyfit(wp.times, wp.values / max(wp.values.max(), 1e-300), 1)[0]),
    }
    _write_json(os.path.join(out, "fits.json"), fits)
    return {"fits": fits}


def _scatter(cfg, out):
    T1s = [float(t) for t in cfg.params.get("T1", [10.0, 20.0, 40.0])]
    norm = cfg.params.get("norm", "energy")
    s0 = _setup(cfg)
    traj = S.evolve(s0, cfg.T_final, snapshot_times=sorted(set(T1s + [cfg.T_final])))
    op = P.assemble(s0.grid, s0.mask) if norm == "fractional" else None
    res = [F.scattering_residual(traj, t1, cfg.T_final, norm=norm, s=cfg.params.get("s"), op=op) for t1 in T1s]
    F.write_series_csv(os.path.join(out, "series.csv"),
                       [F.EnergySeries("scattering_residual", T1s, res, {"norm": norm})])
    ex = s0.exponents
    fits = {"residuals": {repr(t): r for t, r in zip(T1s, res)}, "norm": norm,
            "strictly_decreasing": bool(all(b < a for a, b in zip(res, res[1:]))),
            "energy_scattering_regime": ex.energy_scattering,
            "predicted_tail": -(ex.p5 ** 2 + 2 * ex.p5 - 19) / 16}
    if len(T1s) >= 2 and all(r > 0 for r in res):
        fits["slope"] = float(np.polyfit(np.log(T1s), np.log(res), 1)[0])
    _write_json(os.path.join(out, "fits.json"), fits)
    return {"fits": fits}


def _multiplier(cfg, out):
    field_id = cfg.params.get("field", "spherical")
    s0 = _setup(cfg)
    if field_id in M.IDENTITY_FIELDS:
        R = cfg.params.get("R")
        if R is None and field_id == "spherical":
            R = math.ceil(_initial_spec(cfg).support_radius())
        rep = M.energy_identity_check(s0, field_id, cfg.T_final, R=R)
        d = rep.to_dict()
    else:
        t = float(cfg.params.get("t", cfg.T_final))
        dt = s0.grid.dt
        traj = S.evolve(s0, t + dt, snapshot_times=[t - dt, t, t + dt])
        rep = M.divergence_check(traj, field_id, times=[t])
        d = rep._asdict()
        d["times"] = list(d["times"])
    _write_json(os.path.join(out, "identity_report.json"), d)
    return {"report": d}


def _flux_one(args):
    p, R, t_max, n_t, n_r = args
    return M.flux_sweep((p,), R, t_max, n_t, n_r)


def _flux(cfg, out, workers):
    ps = [float(p) for p in cfg.params.get("p_values", [cfg.p])]
    R = float(cfg.params.get("R", 1.0))
    args = [(p, R, float(cfg.params.get("t_max", 50.0)), int(cfg.params.get("n_t", 100)),
             int(cfg.params.get("n_r", 100))) for p in ps]
    parts = _map(_flux_one, args, workers)
    sweep = {k: np.concatenate([part[k] for part in parts]) for k in M.FLUX_COLUMNS}
    M.write_flux_csv(os.path.join(out, "flux_sweep.csv"), sweep)
    fits = {"min_Xr": float(sweep["Xr_value"].min()), "all_sign_ok": bool(sweep["sign_ok"].all()),
            "rows": int(sweep["t"].size)}
    _write_json(os.path.join(out, "fits.json"), fits)
    return {"fits": fits}


def _spectrum(cfg, out):
    s0 = _setup(cfg, T=0.0)
    op = P.assemble(s0.grid, s0.mask)
    s_list = [float(s) for s in cfg.params.get("s", [0.0, 0.5, 1.0])]
    norms = {repr(s): P.frac_norm(op, s0.phi, s) for s in s_list}
    fits = {"nodes": op.size, "lambda_min": op.lam_min, "norms": norms}
    k = int(cfg.params.get("k", 0))
    if k:
        from scipy.sparse.linalg import eigsh
        lam = np.sort(eigsh(op.A, k=k, sigma=0, which="LM", return_eigenvectors=False))
        F.write_series_csv(os.path.join(out, "series.csv"),
                           [F.EnergySeries("eigenvalue", np.arange(1, k + 1), lam)])
        fits["eigenvalues"] = [float(v) for v in lam]
    _write_json(os.path.join(out, "fits.json"), fits)
    return {"fits": fits}


def _map(fn, args, workers):
    if workers and workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, args))
    return [fn(a) for a in args]


def run(cfg, workers=1):
    """Execute one experiment; returns a process exit status."""
    cfg.validate()
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    started = time.time()
    exp = cfg.experiment
    if exp == "simulate":
        info = _simulate(cfg, out)
    elif exp == "convergence":
        info = _convergence(cfg, out, workers)
    elif exp == "decay":
        info = _decay(cfg, out)
    elif exp == "scatter":
        info = _scatter(cfg, out)
    elif exp == "multiplier":
        info = _multiplier(cfg, out)
    elif exp == "flux":
        info = _flux(cfg, out, workers)
    else:
        info = _spectrum(cfg, out)
    meta = {"config": cfg.to_dict(), "experiment": exp, "seed": cfg.seed,
            "started": started, "wall_seconds": time.time() - started,
            "python": platform.python_version(), "numpy": np.__version__,
            "info": _jsonable(info)}
    _write_json(os.path.join(out, "run_meta.json"), meta)
    return 0


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


# --- summaries -----------------------------------------------------------------------

def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def summarize(output_dir):
    """Pass/fail lines for every artifact set found under ``output_dir``."""
    if not os.path.isdir(output_dir):
        raise MissingArtifacts(f"{output_dir} is not a directory")
    lines = []
    for root, _, files in sorted(os.walk(output_dir)):
        if "run_meta.json" not in files:
            continue
        meta = _read_json(os.path.join(root, "run_meta.json"))
        exp = meta.get("experiment")
        fits = _read_json(os.path.join(root, "fits.json")) if "fits.json" in files else {}
        tag = os.path.relpath(root, output_dir)
        if exp == "flux" and "flux_sweep.csv" in files:
            with open(os.path.join(root, "flux_sweep.csv")) as fh:
                rows = list(csv.DictReader(fh))
            vmin = min(float(r["Xr_value"]) for r in rows)
            ok = vmin >= -1e-10 and all(r["sign_ok"] == "true" for r in rows)
            lines.append(f"[{tag}] flux positivity: {'PASS' if ok else 'FAIL'} (min Xr = {vmin:.3e}, bar -1e-10)")
        elif exp == "simulate":
            drift = fits.get("energy_drift", math.inf)
            lines.append(f"[{tag}] energy conservation: {'PASS' if drift < 1e-3 else 'FAIL'}"
                         f" (relative drift = {drift:.3e}, bar 1e-3)")
        elif exp == "convergence":
            order = fits.get("order")
            lines.append(f"[{tag}] convergence order: {order:.3f} (free-space target 2.0 +- 0.3)")
        elif exp == "decay":
            wp = fits.get("weighted_potential", {})
            ratio = wp.get("max_ratio")
            ok = ratio is not None and ratio <= 3 and wp.get("slope", 1) <= 0.05
            lines.append(f"[{tag}] weighted potential boundedness: {'PASS' if ok else 'FAIL'} "
                         f"(max ratio = {ratio}, slope = {wp.get('slope')}, bars 3 and 0.05)")
            it = fits.get("interior_sup", {})
            if "slope" in it:
                ok = it["slope"] <= -0.3 and it["r2"] >= 0.8
                lines.append(f"[{tag}] interior decay p={fits.get('p')}: {'PASS' if ok else 'FAIL'} "
                             f"(predicted {it['predicted']:.3f}, measured {it['slope']:.3f}, r2 = {it['r2']:.3f}, bars slope <= -0.3 and r2 >= 0.8)")
        elif exp == "scatter":
            ok = fits.get("strictly_decreasing") and fits.get("slope", 0) <= -0.2
            verdict = ("PASS" if ok else "FAIL") if fits.get("energy_scattering_regime") else "REPORT"
            lines.append(f"[{tag}] scattering residual ({fits.get('norm')}): {verdict} "
                         f"(slope = {fits.get('slope')}, predicted tail {fits.get('predicted_tail'):.4f}, bar slope <= -0.2)")
        elif exp == "multiplier" and "identity_report.json" in files:
            rep = _read_json(os.path.join(root, "identity_report.json"))
            if "residual" in rep:
                ok = rep["residual"] <= 0.02
                lines.append(f"[{tag}] Stokes identity ({rep['field_id']}): {'PASS' if ok else 'FAIL'} "
                             f"(relative residual = {rep['residual']:.3e}, bar 0.02)")
            else:
                ok = rep["rel_l1"] <= 0.1
                lines.append(f"[{tag}] divergence closed form ({rep['field_id']}): {'PASS' if ok else 'FAIL'} "
                             f"(relative L1 = {rep['rel_l1']:.3e}, bar 0.1)")
        elif exp == "spectrum":
            lines.append(f"[{tag}] spectral operator: {'PASS' if fits.get('lambda_min', 0) > 0 else 'FAIL'} "
                         f"(lambda_min = {fits.get('lambda_min'):.4e}, nodes = {fits.get('nodes')})")
    if not lines:
        raise MissingArtifacts(f"no run artifacts under {output_dir}")
    return "\n".join(lines)


# --- entry point ---------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="extwave", description="Exterior-domain defocusing wave experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (dot path, JSON value)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help="output directory (overrides the config)")
    sp = sub.add_parser("summarize", help="pass/fail report for an output directory")
    sp.add_argument("output_dir")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "summarize":
            print(summarize(args.output_dir))
            return 0
        overrides = list(args.set) + [f"experiment={json.dumps(args.command)}"]
        if args.out:
            overrides.append(f"out={json.dumps(args.out)}")
        cfg = load_config(args.config, overrides)
        return run(cfg, args.workers)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ExtWaveError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
