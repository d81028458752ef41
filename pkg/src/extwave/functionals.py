"""Scalar diagnostics of wave states and trajectories.

Spatial integrals are node sums times ``h^2`` over exterior nodes.  Squared
gradients inside quadratic energies are taken edge by edge (forward
differences at edge midpoints), which is the quadratic form the leapfrog
scheme conserves; pointwise gradients use centred differences with
second-order one-sided stencils next to the obstacle.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (BadExponent, InsufficientData, NonPositiveValues,
                     UnsupportedK)
from .solver import acceleration, linear_propagate


# --- discrete calculus --------------------------------------------------------

def _axis_gradient(f, ext, h, axis):
    f = np.moveaxis(f, axis, 0)
    ext = np.moveaxis(ext, axis, 0)
    g = np.zeros_like(f)
    g[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    g[0] = (f[1] - f[0]) / h
    g[-1] = (f[-1] - f[-2]) / h
    # a neighbour inside the obstacle: switch to a one-sided stencil away from it
    lo_bad = np.zeros_like(ext)
    hi_bad = np.zeros_like(ext)
    lo_bad[1:] = ~ext[:-1]
    hi_bad[:-1] = ~ext[1:]
    fwd_ok = np.zeros_like(ext)
    fwd_ok[:-2] = ext[1:-1] & ext[2:]
    bwd_ok = np.zeros_like(ext)
    bwd_ok[2:] = ext[1:-1] & ext[:-2]
    fwd2 = np.zeros_like(f)
    fwd2[:-2] = (-3 * f[:-2] + 4 * f[1:-1] - f[2:]) / (2 * h)
    bwd2 = np.zeros_like(f)
    bwd2[2:] = (3 * f[2:] - 4 * f[1:-1] + f[:-2]) / (2 * h)
    use_fwd = ext & lo_bad & ~hi_bad & fwd_ok
    use_bwd = ext & hi_bad & ~lo_bad & bwd_ok
    g = np.where(use_fwd, fwd2, g)
    g = np.where(use_bwd, bwd2, g)
    g = np.where(ext, g, 0.0)
    return np.moveaxis(g, 0, axis)


def node_gradient(f, mask):
    """(d/dx1, d/dx2) of a grid field at exterior nodes (zero elsewhere)."""
    ext = mask.exterior
    h = mask.grid.h
    return _axis_gradient(f, ext, h, 0), _axis_gradient(f, ext, h, 1)


def edge_sq_integral(f, grid, weight=None):
    """Integral of ``w |grad f|^2`` as a sum over grid edges.

    ``weight`` is a callable of midpoint coordinates ``(x1, x2)``.
    """
    x = grid.x
    dx = f[1:, :] - f[:-1, :]
    dy = f[:, 1:] - f[:, :-1]
    if weight is None:
        return float(np.sum(dx * dx) + np.sum(dy * dy))
    xm = 0.5 * (x[1:] + x[:-1])
    wx = weight(*np.meshgrid(xm, x, indexing="ij"))
    wy = weight(*np.meshgrid(x, xm, indexing="ij"))
    return float(np.sum(wx * dx * dx) + np.sum(wy * dy * dy))


def second_derivative_sq_integral(f, grid, weight=None):
    """Integral of ``w (f_xx^2 + 2 f_xy^2 + f_yy^2)``; obstacle nodes enter as zeros."""
    h = grid.h
    x = grid.x
    fxx = np.zeros_like(f)
    fyy = np.zeros_like(f)
    fxx[1:-1, :] = (f[2:, :] - 2 * f[1:-1, :] + f[:-2, :]) / h ** 2
    fyy[:, 1:-1] = (f[:, 2:] - 2 * f[:, 1:-1] + f[:, :-2]) / h ** 2
    fxy = (f[1:, 1:] - f[1:, :-1] - f[:-1, 1:] + f[:-1, :-1]) / h ** 2
    if weight is None:
        wn = 1.0
        wc = 1.0
    else:
        wn = weight(*np.meshgrid(x, x, indexing="ij"))
        xm = 0.5 * (x[1:] + x[:-1])
        wc = weight(*np.meshgrid(xm, xm, indexing="ij"))
    return float(h * h * (np.sum(wn * (fxx ** 2 + fyy ** 2)) + 2 * np.sum(wc * fxy ** 2)))


def _area_sum(values, state):
    h = state.grid.h
    return float(np.sum(values[state.mask.exterior]) * h * h)


# --- energies -------------------------------------------------------------------

def potential_energy(state):
    p = state.exponents.p
    return _area_sum(np.abs(state.phi) ** (p + 1), state) / (p + 1)


def energy(state, nonlinear=True):
    """Conserved energy  int 1/2 (phit^2 + |grad phi|^2) + |phi|^{p+1}/(p+1).

    ``nonlinear=False`` drops the potential term (energy of the free flow).
    """
    kin = 0.5 * _area_sum(state.phit ** 2, state)
    grad = 0.5 * edge_sq_integral(state.phi, state.grid)
    return kin + grad + (potential_energy(state) if nonlinear else 0.0)


def discrete_energy(state, nonlinear=True):
    """Leapfrog-compatible energy: ``energy - dt^2/8 int |a|^2``.

    ``a`` is the scheme's acceleration.  For the free flow this is exactly the
    average of the two staggered invariants of the three-level scheme, so it
    is conserved to round-off; with the nonlinearity the drift is O(dt^2).
    """
    g = state.grid
    a = acceleration(state.phi, state.exponents.p, g.h, state.mask.free, nonlinear)
    return energy(state, nonlinear) - g.dt ** 2 / 8 * _area_sum(a * a, state)


def weighted_energy(state, k, gamma):
    """Weighted energy norm with spatial weights ``(1+|x|)^(gamma+2l)``, l <= k."""
    if k not in (0, 1):
        raise UnsupportedK(f"k must be 0 or 1, got {k}")
    p = state.exponents.p
    g = state.grid
    w = lambda a: (lambda x1, x2: (1 + np.hypot(x1, x2)) ** a)
    X, Y = g.mesh()
    r1 = 1 + np.hypot(X, Y)
    total = edge_sq_integral(state.phi, g, w(gamma)) + _area_sum(r1 ** gamma * state.phit ** 2, state)
    total += _area_sum(r1 ** gamma * np.abs(state.phi) ** (p + 1), state)
    if k == 1:
        total += second_derivative_sq_integral(state.phi, g, w(gamma + 2))
        total += edge_sq_integral(state.phit, g, w(gamma + 2))
    return total


def conformal_energy(state, parts=False):
    """Energy of the conformal multiplier (r^2+t^2+1) d_t + 2 t r d_r."""
    t = state.t
    p = state.exponents.p
    X, Y = state.grid.mesh()
    a = state.phit
    fx, fy = node_gradient(state.phi, state.mask)
    phi = state.phi
    scaling = (t * a + X * fx + Y * fy + phi) ** 2
    boosts = (t * fx + X * a) ** 2 + (t * fy + Y * a) ** 2
    rotation = (X * fy - Y * fx) ** 2
    plain = a * a + fx * fx + fy * fy
    pot = (t * t + X * X + Y * Y + 1) * np.abs(phi) ** (p + 1) / (p + 1)
    comp = {
        "scaling": 0.5 * _area_sum(scaling, state),
        "boosts": 0.5 * _area_sum(boosts, state),
        "rotation": 0.5 * _area_sum(rotation, state),
        "energy": 0.5 * _area_sum(plain, state),
        "potential": _area_sum(pot, state),
    }
    total = sum(comp.values())
    if parts:
        comp["total"] = total
        return comp
    return total


def weighted_potential(state, weight_exponent=None):
    """int (1 + |t| + |x|)^((p5-1)/2) |phi|^{p+1} dx."""
    ex = state.exponents
    if weight_exponent is None:
        weight_exponent = (ex.p5 - 1) / 2
    r = state.grid.radius()
    w = (1 + abs(state.t) + r) ** weight_exponent
    return _area_sum(w * np.abs(state.phi) ** (ex.p + 1), state)


class KedReport(NamedTuple):
    angular: float  # (1+t)^2 ||angular derivative||^2 on r > R
    null_weighted: float  # ||(1+|t-r|) d phi||^2
    l2: float  # ||phi||^2
    h2: float  # ||phi||_{H^2}


def ked_report(state, R=None):
    t = state.t
    g = state.grid
    if R is None:
        R = state.mask.R
    X, Y = g.mesh()
    r = np.hypot(X, Y)
    fx, fy = node_gradient(state.phi, state.mask)
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = np.where(r > 0, (X * fy - Y * fx) / np.where(r > 0, r, 1.0), 0.0)
    angular = (1 + t) ** 2 * _area_sum(np.where(r > R, ang * ang, 0.0), state)
    dphi2 = state.phit ** 2 + fx * fx + fy * fy
    null_weighted = _area_sum((1 + np.abs(t - r)) ** 2 * dphi2, state)
    l2 = _area_sum(state.phi ** 2, state)
    h2 = math.sqrt(l2 + edge_sq_integral(state.phi, g) + second_derivative_sq_integral(state.phi, g))
    return KedReport(angular, null_weighted, l2, h2)


class RegionSup(NamedTuple):
    interior: float  # r <= t/2
    wave_zone: float  # t/2 <= r <= 3t/2
    far: float  # r >= 3t/2


def sup_by_region(state):
    t = state.t
    if t <= 0:
        raise ValueError("sup_by_region needs t > 0")
    r = state.grid.radius()
    a = np.where(state.mask.exterior, np.abs(state.phi), 0.0)

    def mx(sel):
        return float(a[sel].max()) if np.any(sel) else 0.0

    return RegionSup(mx(r <= t / 2), mx((r >= t / 2) & (r <= 1.5 * t)), mx(r >= 1.5 * t))


def sup_near_ray(state, offset, width):
    """max |phi| on the band |r - (t + offset)| <= width (outgoing ray r = t + c)."""
    r = state.grid.radius()
    sel = state.mask.exterior & (np.abs(r - state.t - offset) <= width)
    return float(np.abs(state.phi[sel]).max()) if np.any(sel) else 0.0


# --- X^{h,s} norms ----------------------------------------------------------------

def lebesgue_norm(f, grid, q, region):
    vals = np.abs(f[region])
    if vals.size == 0:
        return 0.0
    m = float(vals.max())
    if math.isinf(q) or m == 0:
        return m
    # scale by the maximum so large q neither underflows nor overflows
    return m * float((np.sum((vals / m) ** q) * grid.h ** 2) ** (1 / q))


def xhs_norm(f, h_exp, s, mask, R=None):
    """||f||_{L^{2/(1-s)}(r<3R)} + ||f||_{L^h(r>2R)} over exterior nodes."""
    if not (1 <= h_exp < math.inf):
        raise BadExponent(f"need 1 <= h < inf, got {h_exp}")
    if not (0 < s < 1):
        raise BadExponent(f"need 0 < s < 1, got {s}")
    if R is None:
        R = mask.R
    g = mask.grid
    r = g.radius()
    ext = mask.exterior
    return (lebesgue_norm(f, g, 2 / (1 - s), ext & (r < 3 * R))
            + lebesgue_norm(f, g, h_exp, ext & (r > 2 * R)))


def suitable_pair(q, h_exp, s, tol=1e-12):
    """Exponent triples admitted by the exterior Strichartz estimate."""
    if (q, h_exp, s) == (6, 6, 0.5):
        return True
    iq = 0.0 if math.isinf(q) else 1.0 / q
    return bool(q > h_exp and abs(iq + 2.0 / h_exp - (1 - s)) <= tol
                and iq + 1.0 / (2 * h_exp) < 0.25)


# --- scattering -----------------------------------------------------------------

def energy_norm(w, wt, mask):
    """||(w, wt)||_{H1dot x L2}."""
    g = mask.grid
    kin = float(np.sum(wt[mask.exterior] ** 2)) * g.h ** 2
    return math.sqrt(edge_sq_integral(w, g) + kin)


def scattering_residual(traj, T1, T2, norm="energy", s=None, op=None):
    """|| Phi(T2) - L(T2 - T1) Phi(T1) || in H1dot x L2 or Hdot^s x Hdot^{s-1}."""
    if T2 < T1:
        raise ValueError("need T1 <= T2")
    a = traj.at(T1)
    b = traj.at(T2)
    lin = linear_propagate(a, T2 - T1).snapshots[-1]
    w = b.phi - lin.phi
    wt = b.phit - lin.phit
    if norm == "energy":
        return energy_norm(w, wt, b.mask)
    if norm == "fractional":
        from .spectral import assemble, pair_norm
        if s is None:
            s = b.exponents.sp
        if op is None:
            op = assemble(b.grid, b.mask)
        return pair_norm(op, w, wt, s)
    raise ValueError(f"unknown norm {norm!r}")


# --- series and fits ------------------------------------------------------------

@dataclass
class EnergySeries:
    name: str
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("series times must increase")


def series(traj, fn, name=None, **kw):
    states = list(traj)
    return EnergySeries(name or fn.__name__, [s.t for s in states], [fn(s, **kw) for s in states],
                        dict(getattr(traj, "meta", {})))


def geometric_times(t0, t1, n):
    """``n`` times ``t0 * rho^k`` running from ``t0`` to ``t1``."""
    return list(t0 * (t1 / t0) ** (np.arange(n) / (n - 1)))


class SeriesRecorder:
    """Observer that evaluates diagnostics at the steps nearest to scheduled times.

    ``diagnostics`` maps a series name to a function of a state.  A time
    ``s`` is served by the first step with ``t >= s - dt/2``.
    """

    def __init__(self, diagnostics, times):
        self.diagnostics = dict(diagnostics)
        self.pending = sorted(float(t) for t in times)
        self.times = []
        self.values = {k: [] for k in self.diagnostics}

    def __call__(self, state):
        half = 0.5 * state.grid.dt
        hit = False
        while self.pending and state.t >= self.pending[0] - half:
            self.pending.pop(0)
            hit = True
        if hit:
            self.times.append(state.t)
            for name, fn in self.diagnostics.items():
                self.values[name].append(fn(state))

    def series(self, meta=None):
        return [EnergySeries(k, self.times, v, dict(meta or {})) for k, v in self.values.items()]


def write_series_csv(path, all_series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "name", "value"])
        for s in all_series:
            for t, v in zip(s.times, s.values):
                w.writerow([repr(float(t)), s.name, repr(float(v))])


def read_series_csv(path):
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["name"], ([], []))
            out[row["name"]][0].append(float(row["t"]))
            out[row["name"]][1].append(float(row["value"]))
    return {k: EnergySeries(k, t, v) for k, (t, v) in out.items()}


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple

    def to_json(self):
        d = asdict(self)
        return json.dumps({"slope": d["slope"], "intercept": d["intercept"],
                           "r2": d["r_squared"], "window": list(d["window"])})


def fit_decay(series, window=None, min_points=5):
    """Least-squares line through (log t, log value) inside ``window``."""
    if isinstance(series, EnergySeries):
        t, v = series.times, series.values
    else:
        t, v = (np.asarray(a, dtype=float) for a in series)
    if window is None:
        window = (10.0, 0.8 * float(np.max(t)))
    lo, hi = window
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if np.count_nonzero(sel) < min_points:
        raise InsufficientData(f"{np.count_nonzero(sel)} points in window {window}")
    if np.any(v[sel] <= 0):
        raise NonPositiveValues("log-log fit needs positive values")
    x, y = np.log(t[sel]), np.log(v[sel])
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(y * y))) else max(0.0, 1 - ss_res / ss_tot)
    return DecayFit(float(slope), float(intercept), float(min(r2, 1.0)), (float(lo), float(hi)))
