"""Leapfrog time stepping for the defocusing Dirichlet wave equation.

The scheme is the standard three-level leapfrog
``phi^{n+1} = 2 phi^n - phi^{n-1} + dt^2 (lap_h phi^n - |phi^n|^{p-1} phi^n)``
written in its one-step (velocity Verlet) form so that a state
``(phi^n, phit^n)`` carries everything needed to continue.  ``phit^n`` equals
the centred difference ``(phi^{n+1} - phi^{n-1}) / (2 dt)`` exactly.
Obstacle nodes and the outer box edge are pinned to zero.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import BadP, CFLViolation, MissingSnapshot, NonFinite, SupportTooLarge

CUTOFF_WIDTHS = 6.1  # exp(-6.1^2) < 1e-16: gaussian tails below double precision
CFL_LIMIT = 1 / math.sqrt(2)


@dataclass(frozen=True)
class Exponents:
    p: float
    p5: float
    sp: float
    thresh_energy: float = 2 * math.sqrt(5) - 1
    thresh_critical: float = 1 + 2 * math.sqrt(2)

    @property
    def energy_scattering(self):
        return self.p > self.thresh_energy

    @property
    def critical_scattering(self):
        return self.p > self.thresh_critical


def make_exponents(p):
    p = float(p)
    if not p > 1:
        raise BadP(f"p must exceed 1, got {p}")
    return Exponents(p=p, p5=min(p, 5.0), sp=(p - 3) / (p - 1))


# --- initial data -----------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    center: tuple = (3.0, 0.0)
    width: float = 1.0
    amplitude: float = 1.0
    kind: str = "gaussian"

    def support_radius(self):
        return math.hypot(*self.center) + CUTOFF_WIDTHS * self.width

    def fields(self, X, Y, rng):
        d2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
        phi = self.amplitude * np.exp(-d2 / self.width ** 2)
        phi[d2 > (CUTOFF_WIDTHS * self.width) ** 2] = 0.0
        return phi, np.zeros_like(phi)


@dataclass(frozen=True)
class Ring:
    radius: float = 3.0
    width: float = 1.0
    amplitude: float = 1.0
    kind: str = "ring"

    def support_radius(self):
        return self.radius + CUTOFF_WIDTHS * self.width

    def fields(self, X, Y, rng):
        d = np.hypot(X, Y) - self.radius
        phi = self.amplitude * np.exp(-(d / self.width) ** 2)
        phi[np.abs(d) > CUTOFF_WIDTHS * self.width] = 0.0
        return phi, np.zeros_like(phi)


@dataclass(frozen=True)
class RandomSmooth:
    seed: int = 1
    cutoff: int = 4
    amplitude: float = 1.0
    center: tuple = (3.0, 0.0)
    radius: float = 2.0
    kind: str = "random_smooth"

    def support_radius(self):
        return math.hypot(*self.center) + self.radius

    def fields(self, X, Y, rng):
        u = (X - self.center[0]) / self.radius
        v = (Y - self.center[1]) / self.radius
        s2 = u * u + v * v
        bump = np.zeros_like(X)
        inside = s2 < 1
        bump[inside] = np.exp(1 - 1 / (1 - s2[inside]))
        ks = np.arange(-self.cutoff, self.cutoff + 1)
        out = []
        for _ in range(2):
            acc = np.zeros_like(X)
            for k1 in ks:
                for k2 in ks:
                    a, b = rng.standard_normal(2) / (1.0 + k1 * k1 + k2 * k2)
                    arg = np.pi * (k1 * u + k2 * v)
                    acc += a * np.cos(arg) + b * np.sin(arg)
            f = acc * bump
            m = np.max(np.abs(f))
            out.append(self.amplitude * f / m if m > 0 else f)
        return out[0], out[1]


def initial_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if "center" in d:
        d["center"] = tuple(d["center"])
    cls = {"gaussian": Gaussian, "ring": Ring, "random_smooth": RandomSmooth}[kind]
    return cls(**d)


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    f = lambda z: np.where(z > 0, np.exp(-1 / np.where(z > 0, z, 1.0)), 0.0)
    a, b = f(s), f(1 - s)
    return a / (a + b)


def obstacle_taper(grid, mask, width):
    """Smooth factor vanishing on the obstacle and equal to 1 at radial gap >= width."""
    if mask.profile is None:
        return np.ones((grid.n, grid.n))
    X, Y = grid.mesh()
    gap = np.hypot(X, Y) - mask.profile.radius(np.arctan2(Y, X))
    return smooth_step(gap / width)


@dataclass(frozen=True, eq=False)
class WaveState:
    t: float
    phi: np.ndarray = field(repr=False)
    phit: np.ndarray = field(repr=False)
    exponents: Exponents
    grid: "object"
    mask: "object" = field(repr=False)

    def replace(self, **kw):
        d = dict(t=self.t, phi=self.phi, phit=self.phit, exponents=self.exponents,
                 grid=self.grid, mask=self.mask)
        d.update(kw)
        return WaveState(**d)


def make_initial(spec, grid, mask, exponents, T_final=None, taper_width=0.5, seed=None):
    """Dirichlet-compatible Cauchy data at t = 0.

    ``spec`` is a :class:`Gaussian`, :class:`Ring`, :class:`RandomSmooth` or a
    dict with a ``kind`` key.  Data are multiplied by a smooth taper that
    vanishes on the obstacle.
    """
    if isinstance(spec, dict):
        spec = initial_from_dict(spec)
    if not isinstance(exponents, Exponents):
        exponents = make_exponents(exponents)
    reach = spec.support_radius() + (T_final or 0.0) + 2 * grid.h
    if reach > grid.L:
        raise SupportTooLarge(f"support + T + 2h = {reach:.4g} exceeds L = {grid.L}")
    if seed is None:
        seed = getattr(spec, "seed", 0)
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh()
    phi, phit = spec.fields(X, Y, rng)
    taper = obstacle_taper(grid, mask, taper_width)
    free = mask.free
    phi = np.where(free, phi * taper, 0.0)
    phit = np.where(free, phit * taper, 0.0)
    return WaveState(0.0, phi, phit, exponents, grid, mask)


# --- stepping ---------------------------------------------------------------

def power_nonlinearity(phi, p):
    """|phi|^{p-1} phi, with integer p done by multiplication."""
    if float(p).is_integer() and 1 < p <= 9:
        k = int(p)
        out = phi * phi
        for _ in range(k - 2):
            out = out * phi
        if k % 2 == 0:
            out = out * np.sign(phi)
        return out
    return np.abs(phi) ** (p - 1) * phi


def laplacian(phi, h, out=None):
    lap = np.zeros_like(phi) if out is None else out
    c = lap[1:-1, 1:-1]
    np.add(phi[2:, 1:-1], phi[:-2, 1:-1], out=c)
    c += phi[1:-1, 2:]
    c += phi[1:-1, :-2]
    c -= 4.0 * phi[1:-1, 1:-1]
    c *= 1.0 / (h * h)
    return lap


def acceleration(phi, p, h, free, nonlinear=True):
    """lap_h phi - |phi|^{p-1} phi on free nodes, zero elsewhere."""
    a = laplacian(phi, h)
    if nonlinear:
        a -= power_nonlinearity(phi, p)
    if free.dtype == bool:
        a[~free] = 0.0
    else:
        a *= free
    return a


@njit(cache=True)
def _nl(x, p, kp):
    if kp == 0:
        return abs(x) ** (p - 1.0) * x
    y = x
    for _ in range(kp - 1):
        y *= x
    if kp % 2 == 0 and x < 0.0:
        y = -y
    return y


@njit(cache=True)
def _advance_kernel(phi, phit, a, pin, new, v_new, a_new, dt, p, kp, h, nonlinear, i0, i1, j0, j1):
    # rows/cols i0..i1, j0..j1 hold the support of phi^{n+1}, phit^{n+1} and a^{n+1};
    # the old fields vanish outside it, and pinned nodes have pin == 0
    c = 0.5 * dt * dt
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            new[i, j] = (phi[i, j] + dt * phit[i, j] + c * a[i, j]) * pin[i, j]
    ih2 = 1.0 / (h * h)
    n = phi.shape[0]
    for i in range(max(i0, 1), min(i1, n - 2) + 1):
        for j in range(max(j0, 1), min(j1, n - 2) + 1):
            if pin[i, j] == 0.0:
                continue
            u = new[i, j]
            acc = (new[i + 1, j] + new[i - 1, j] + new[i, j + 1] + new[i, j - 1] - 4.0 * u) * ih2
            if nonlinear:
                acc -= _nl(u, p, kp)
            a_new[i, j] = acc
            v_new[i, j] = (u - phi[i, j]) / dt + 0.5 * dt * acc
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            if pin[i, j] == 0.0:
                a_new[i, j] = 0.0


def _int_power(p):
    return int(p) if float(p).is_integer() and 1 < p <= 9 else 0


def _advance(phi, phit, a, dt, p, h, pin, nonlinear, win=None):
    """One step on the node box ``win``; returns fresh ``(phi, phit)`` and updates ``a`` in place."""
    n = phi.shape[0]
    i0, i1, j0, j1 = (0, n - 1, 0, n - 1) if win is None else win
    new, v_new = np.zeros_like(phi), np.zeros_like(phit)
    _advance_kernel(phi, phit, a, pin, new, v_new, a, dt, float(p), _int_power(p), h,
                    bool(nonlinear), i0, i1, j0, j1)
    if not np.isfinite(v_new[i0:i1 + 1, j0:j1 + 1].sum()):
        raise NonFinite("field became non-finite")
    return new, v_new


def _check_cfl(grid):
    if grid.dt / grid.h > CFL_LIMIT + 1e-12:
        raise CFLViolation(f"dt/h = {grid.dt / grid.h:.4g} exceeds 1/sqrt(2)")


def step(state, nonlinearity_on=True):
    """Advance one leapfrog step."""
    g = state.grid
    _check_cfl(g)
    pin = state.mask.free.astype(float)
    p = state.exponents.p
    a = acceleration(state.phi, p, g.h, pin, nonlinearity_on)
    phi, phit = _advance(state.phi, state.phit, a, g.dt, p, g.h, pin, nonlinearity_on)
    return state.replace(t=state.t + g.dt, phi=phi, phit=phit)


def reverse(state):
    """Flip the velocity; stepping then runs the scheme backwards in time."""
    return state.replace(phit=-state.phit)


@dataclass
class Trajectory:
    snapshots: list
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    def at(self, t, tol=1e-9):
        times = self.times
        if len(times) == 0:
            raise MissingSnapshot(f"no snapshot at t = {t}")
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > tol * max(1.0, abs(t)):
            raise MissingSnapshot(f"no snapshot at t = {t} (nearest {times[i]})")
        return self.snapshots[i]

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)


def _interp(s0, s1, t):
    w = (t - s0.t) / (s1.t - s0.t)
    return s0.replace(t=t, phi=(1 - w) * s0.phi + w * s1.phi, phit=(1 - w) * s0.phit + w * s1.phit)


def _grow(win, n, k=1):
    i0, i1, j0, j1 = win
    return max(i0 - k, 0), min(i1 + k, n - 1), max(j0 - k, 0), min(j1 + k, n - 1)


def _support_box(*fields):
    nz = np.zeros(fields[0].shape, dtype=bool)
    for f in fields:
        nz |= f != 0.0
    rows, cols = np.flatnonzero(nz.any(axis=1)), np.flatnonzero(nz.any(axis=0))
    if rows.size == 0:
        return 0, 0, 0, 0
    return rows[0], rows[-1], cols[0], cols[-1]


def evolve(initial, T_final, snapshot_times=None, nonlinearity_on=True, observers=()):
    """Run from ``initial.t`` to ``T_final``.

    Snapshots falling on a step are exact; others are linear interpolations
    between the two neighbouring steps.  Every observer is called with each
    step's state (including the initial one).

    Work is confined to the discrete domain of dependence of the data, a box
    that grows by one node per step, so the result is identical to sweeping
    the whole grid.
    """
    g = initial.grid
    _check_cfl(g)
    t0, dt = initial.t, g.dt
    nsteps = max(0, int(math.ceil((T_final - t0) / dt - 1e-9)))
    if snapshot_times is None:
        snapshot_times = [T_final]
    req = sorted(float(s) for s in snapshot_times)
    if req and (req[0] < t0 - 1e-12 or req[-1] > t0 + nsteps * dt + 1e-9):
        raise ValueError(f"snapshot times must lie in [{t0}, {T_final}]")
    if any(b <= a for a, b in zip(req, req[1:])):
        raise ValueError("snapshot times must be strictly increasing")

    pin = initial.mask.free.astype(float)
    p = initial.exponents.p
    n = g.n
    tol = 1e-9 * dt
    snaps = []
    k = 0

    def collect(prev, cur):
        nonlocal k
        while k < len(req):
            s = req[k]
            if abs(s - cur.t) <= tol:
                snaps.append(cur.replace(t=s))
            elif s < cur.t:
                snaps.append(_interp(prev, cur, s))
            else:
                break
            k += 1

    cur = initial
    for obs in observers:
        obs(cur)
    collect(None, cur)
    phi, phit = initial.phi, initial.phit
    a = acceleration(phi, p, g.h, pin, nonlinearity_on)
    win = _grow(_support_box(phi, phit), n)  # holds the support of phi, phit and a
    for step_no in range(1, nsteps + 1):
        win = _grow(win, n)
        phi, phit = _advance(phi, phit, a, dt, p, g.h, pin, nonlinearity_on, win)
        prev, cur = cur, initial.replace(t=t0 + step_no * dt, phi=phi, phit=phit)
        for obs in observers:
            obs(cur)
        collect(prev, cur)
    meta = {"p": p, "h": g.h, "L": g.L, "dt": dt, "nonlinear": bool(nonlinearity_on), "steps": nsteps}
    return Trajectory(snaps, meta)


def linear_propagate(state, span, snapshot_times=None):
    """Free Dirichlet wave flow L(span) applied to the Cauchy pair in ``state``."""
    if span == 0:
        return Trajectory([state], {"nonlinear": False, "steps": 0})
    if snapshot_times is None:
        snapshot_times = [state.t + span]
    return evolve(state, state.t + span, snapshot_times, nonlinearity_on=False)


class DirichletWatch:
    """Observer asserting phi == 0 and phit == 0 exactly off the free nodes."""

    def __init__(self):
        self.checked = 0
        self.violations = 0

    def __call__(self, state):
        pinned = ~state.mask.free
        if np.any(state.phi[pinned] != 0.0) or np.any(state.phit[pinned] != 0.0):
            self.violations += 1
        self.checked += 1

    @property
    def ok(self):
        return self.checked > 0 and self.violations == 0


# --- export -----------------------------------------------------------------

def export_trajectory(traj, directory, fmt="bin", extra_meta=None):
    """Write one file per snapshot plus ``run_meta.json``.

    ``bin``: little-endian float64, header ``(t, h, L, p)`` then ``phi`` and
    ``phit`` in row-major order.  ``csv``: a ``# t,h,L,p`` header line, the
    header values, then one ``phi,phit`` row per node in row-major order.
    """
    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, s in enumerate(traj.snapshots):
        head = np.array([s.t, s.grid.h, s.grid.L, s.exponents.p], dtype="<f8")
        if fmt == "bin":
            path = os.path.join(directory, f"snapshot_{k:04d}.bin")
            with open(path, "wb") as fh:
                fh.write(head.tobytes())
                fh.write(np.ascontiguousarray(s.phi, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(s.phit, dtype="<f8").tobytes())
        elif fmt == "csv":
            path = os.path.join(directory, f"snapshot_{k:04d}.csv")
            body = np.column_stack([s.phi.ravel(), s.phit.ravel()])
            with open(path, "w") as fh:
                fh.write("# t,h,L,p\n")
                fh.write(",".join(repr(float(v)) for v in head) + "\n")
                fh.write("phi,phit\n")
                np.savetxt(fh, body, delimiter=",", fmt="%.17g")
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(path)
    meta = dict(traj.meta)
    meta["times"] = [float(s.t) for s in traj.snapshots]
    meta["files"] = [os.path.basename(p) for p in paths]
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(directory, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return paths


def read_snapshot(path):
    """Return ``(header, phi, phit)`` from a file written by :func:`export_trajectory`."""
    if path.endswith(".bin"):
        raw = np.fromfile(path, dtype="<f8")
        head = raw[:4]
        n = int(round(2 * head[2] / head[1])) + 1
        return head, raw[4:4 + n * n].reshape(n, n), raw[4 + n * n:].reshape(n, n)
    with open(path) as fh:
        fh.readline()
        head = np.array([float(v) for v in fh.readline().split(",")])
        fh.readline()
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    n = int(round(2 * head[2] / head[1])) + 1
    return head, body[:, 0].reshape(n, n), body[:, 1].reshape(n, n)


def spec_to_dict(spec):
    return asdict(spec)
