"""Vector-field multipliers: energy-momentum tensor, currents and their divergences.

Conventions: coordinates ``(t, x1, x2)``, metric ``m = diag(-1, 1, 1)``,
potential ``V = |phi|^{p+1}/(p+1)``.  For a field ``X`` and weight ``chi``

    T_{mu nu} = d_mu phi d_nu phi - 1/2 m_{mu nu} (d^s phi d_s phi + 2 V)
    J_mu      = T_{mu nu} X^nu - 1/2 d_mu chi phi^2 + chi phi d_mu phi

so ``T_00`` is the energy density.  On solutions of the defocusing equation

    d^mu J_mu = T_{mu nu} d^mu X^nu - 1/2 (box chi) phi^2 + chi (|phi|^{p+1} + d^s phi d_s phi)

which :func:`general_divergence` evaluates for any field; the named fields
below also carry their simplified closed forms.

Fields
------
``X0``        ``(r^2 + t^2 + 1) d_t + 2 t r d_r`` with ``chi = t``.
``X1``        the Lorentz-boosted conformal field centred on the ray ``x1 = t``
              with ``chi = t - x1``.
``X2``        its companion in the region ``t > x1`` built from powers of
              ``w = t - x1 + 1``, with ``chi = w^{(p-3)/2}``.
``mixed``     ``4 X1`` on ``{t <= x1}`` and ``X2`` on ``{t > x1}``.
``spherical`` the average of the mixed field over rotations, evaluated at
              the shifted time ``t + R``; it has only ``d_t`` and ``d_r``
              components.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import DomainViolation, QuadratureUnderresolved, RegimeViolation, SnapshotSpacingTooCoarse
from .geometry import boundary_quadrature
from .functionals import _axis_gradient, discrete_energy, node_gradient
from .solver import _grow, _support_box, acceleration, evolve

METRIC = np.array([-1.0, 1.0, 1.0])
FIELD_IDS = ("X0", "X1tilde", "X2tilde", "mixed", "spherical")
IDENTITY_FIELDS = ("dt", "X0", "spherical")
QUAD_RTOL = 1e-8
# normal derivative at the boundary from a quadratic through samples at these
# multiples of h along the normal (the staircase makes phi(boundary) != 0)
NORMAL_PROBES = np.array([2.0, 3.0, 4.0])
_NORMAL_WEIGHTS = tuple(
    -sum(NORMAL_PROBES[k] for k in range(3) if k != i)
    / np.prod([NORMAL_PROBES[i] - NORMAL_PROBES[k] for k in range(3) if k != i])
    for i in range(3))
_ALIASES = {"X1": "X1tilde", "X2": "X2tilde"}


# --- tensor calculus ------------------------------------------------------------

class CurrentSample(NamedTuple):
    J: np.ndarray
    T: np.ndarray


def _potential(phi, p):
    return np.abs(phi) ** (p + 1) / (p + 1)


def _lagrangian(dphi):
    return -dphi[..., 0] ** 2 + dphi[..., 1] ** 2 + dphi[..., 2] ** 2


def energy_momentum(dphi, phi, p):
    """``T_{mu nu}`` for gradients ``dphi[..., 3]``; returns shape ``(..., 3, 3)``."""
    dphi = np.asarray(dphi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    trace = _lagrangian(dphi) + 2 * _potential(phi, p)
    T = dphi[..., :, None] * dphi[..., None, :]
    T = T - 0.5 * np.einsum("ij,...->...ij", np.diag(METRIC), trace)
    return T


def current(T, X, chi, phi, dphi, dchi=None):
    """``J_mu = T_{mu nu} X^nu - 1/2 d_mu chi phi^2 + chi phi d_mu phi``."""
    X = np.asarray(X, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    J = np.einsum("...ij,...j->...i", T, X)
    J = J + (np.asarray(chi) * phi)[..., None] * dphi
    if dchi is not None:
        J = J - 0.5 * np.asarray(dchi, dtype=float) * (phi * phi)[..., None]
    return J


def current_sample(dphi, phi, p, X, chi, dchi=None):
    T = energy_momentum(dphi, phi, p)
    return CurrentSample(current(T, X, chi, phi, dphi, dchi), T)


def general_divergence(dphi, phi, p, dX, chi, box_chi):
    """On-shell ``d^mu J_mu`` from the Jacobian ``dX[..., mu, nu] = d_mu X^nu``."""
    T = energy_momentum(dphi, phi, p)
    bulk = np.einsum("...mn,m,...mn->...", T, METRIC, np.asarray(dX, dtype=float))
    phi = np.asarray(phi, dtype=float)
    return (bulk - 0.5 * np.asarray(box_chi) * phi * phi
            + np.asarray(chi) * (np.abs(phi) ** (p + 1) + _lagrangian(np.asarray(dphi, dtype=float))))


def boundary_current(X_dot_N, dN_phi):
    """Normal current on a Dirichlet boundary, where ``phi = phi_t = 0``."""
    return 0.5 * X_dot_N * dN_phi ** 2


# --- pointwise fields -------------------------------------------------------------

@dataclass
class MultiplierEval:
    """A field and its weight at a batch of points.

    ``X`` holds Cartesian components ``(X^t, X^1, X^2)`` when the field has
    them.  The closed-form divergence on solutions is
    ``div_coeff |phi|^{p+1} + div_quad_coeff (div_form . dphi)^2``.
    """

    field_id: str
    Xt: np.ndarray
    Xr: np.ndarray
    chi: np.ndarray
    dchi: tuple = None
    X: tuple = None
    Xth: np.ndarray = None
    div_coeff: np.ndarray = None
    div_quad_coeff: np.ndarray = None
    div_form: tuple = None

    def closed_form_divergence(self, phi, dphi, p):
        if self.div_coeff is None and self.div_quad_coeff is None:
            raise ValueError(f"{self.field_id}: no closed-form divergence without p")
        out = 0.0
        if self.div_coeff is not None:
            out = out + self.div_coeff * np.abs(phi) ** (p + 1)
        if self.div_quad_coeff is not None:
            lin = sum(c * d for c, d in zip(self.div_form, dphi))
            out = out + self.div_quad_coeff * lin * lin
        return out


def _polar(x1, x2, X1, X2):
    r = np.hypot(x1, x2)
    safe = np.where(r > 0, r, 1.0)
    c, s = np.where(r > 0, x1 / safe, 1.0), np.where(r > 0, x2 / safe, 0.0)
    return X1 * c + X2 * s, -X1 * s + X2 * c


def eval_X0(t, r, p=None):
    """The conformal field at time ``t`` and radius ``r`` (polar form)."""
    t, r = np.asarray(t, dtype=float), np.asarray(r, dtype=float)
    coeff = None if p is None else (p - 5) / (p + 1) * t
    one = np.ones_like(t + r)
    return MultiplierEval("X0", r * r + t * t + 1, 2 * t * r, t * one, dchi=(one, 0 * one, 0 * one),
                          Xth=0 * one, div_coeff=coeff)


def _X0_cartesian(t, x1, x2, p):
    ev = eval_X0(t, np.hypot(x1, x2), p)
    ev.X = (ev.Xt, 2 * t * x1 + 0 * x2, 2 * t * x2 + 0 * x1)
    return ev


def eval_X1(t, x1, x2, p):
    t, x1, x2 = (np.asarray(v, dtype=float) for v in (t, x1, x2))
    d = t - x1
    Xt = x2 * x2 + d * d + 1
    X1 = x2 * x2 - d * d
    X2 = 2 * d * x2
    Xr, Xth = _polar(x1, x2, X1, X2)
    one = np.ones_like(d + x2)
    return MultiplierEval("X1tilde", Xt, Xr, d + 0 * x2, dchi=(one, -one, 0 * one), X=(Xt, X1, X2),
                          Xth=Xth, div_coeff=(5 - p) / (p + 1) * (x1 - t) + 0 * x2)


def eval_X2(t, x1, x2, p):
    t, x1, x2 = (np.asarray(v, dtype=float) for v in (t, x1, x2))
    w = t - x1 + 1
    if np.any(w <= 0):
        raise DomainViolation("the second field needs t - x1 + 1 > 0")
    a, b, c = (p - 1) / 2, (p - 5) / 2, (p - 3) / 2
    wa, wb, wc = w ** a, w ** b, w ** c
    Xt = wa + wb * x2 * x2
    X1 = -wa + wb * x2 * x2
    X2 = 2 * wc * x2
    Xr, Xth = _polar(x1, x2, X1, X2)
    dc = c * w ** (c - 1)
    zero = 0 * (w + x2)
    return MultiplierEval("X2tilde", Xt, Xr, wc + zero, dchi=(dc + zero, -dc + zero, zero),
                          X=(Xt, X1, X2), Xth=Xth,
                          div_quad_coeff=(5 - p) / 2 * w ** ((p - 7) / 2) + zero,
                          div_form=(x2 + zero, x2 + zero, w + zero))


def eval_mixed(t, x1, x2, p):
    """``4 X1`` on the closed set ``{t <= x1}``, ``X2`` elsewhere."""
    t, x1, x2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x1, x2)))
    left = t <= x1
    e1 = eval_X1(t, x1, x2, p)
    e2 = eval_X2(np.where(left, x1, t), x1, x2, p)  # dummy point on the X1 side
    pick = lambda u, v: np.where(left, 4 * u, v)
    ev = MultiplierEval("mixed", pick(e1.Xt, e2.Xt), pick(e1.Xr, e2.Xr), pick(e1.chi, e2.chi),
                        dchi=tuple(pick(u, v) for u, v in zip(e1.dchi, e2.dchi)),
                        X=tuple(pick(u, v) for u, v in zip(e1.X, e2.X)), Xth=pick(e1.Xth, e2.Xth))
    ev.div_coeff = np.where(left, 4 * e1.div_coeff, 0.0)
    ev.div_quad_coeff = np.where(left, 0.0, e2.div_quad_coeff)
    ev.div_form = e2.div_form
    return ev


def field_at(field_id, t, x1, x2, p):
    """Cartesian evaluation of a named pointwise field."""
    field_id = _ALIASES.get(field_id, field_id)
    if field_id == "X0":
        return _X0_cartesian(t, x1, x2, p)
    if field_id == "X1tilde":
        return eval_X1(t, x1, x2, p)
    if field_id == "X2tilde":
        return eval_X2(t, x1, x2, p)
    if field_id == "mixed":
        return eval_mixed(t, x1, x2, p)
    raise ValueError(f"no Cartesian evaluation for field {field_id!r}")


def null_plane_flux_X1(x2, dphi, phi, p):
    """Flux of the first field through ``{t = x1}`` along ``d_t + d_1``."""
    s = dphi[0] + dphi[1]
    return (x2 * x2 + 0.5) * s * s + 0.5 * dphi[2] ** 2 + _potential(phi, p)


def null_plane_flux_X2_main(x2, dphi, phi, p):
    """Principal part of the second field's flux through ``{t = x1}``."""
    s = x2 * (dphi[0] + dphi[1]) + dphi[2]
    return s * s + 2 * _potential(phi, p)


# --- spherical average ------------------------------------------------------------

class SphericalTable(NamedTuple):
    """Averaged field data at one time on a set of radii.

    ``Q`` (shape ``(3, 3, k)``) and ``cV`` give the on-shell divergence
    ``g^T Q g + cV |phi|^{p+1}`` with ``g = (phi_t, phi_r, r^{-1} phi_theta)``,
    valid away from the jump surface ``r cos(angle) = t + R``.
    """

    t: float
    r: np.ndarray
    Xt: np.ndarray
    Xr: np.ndarray
    Xth: np.ndarray
    chi: np.ndarray
    chit: np.ndarray
    chir: np.ndarray
    Q: np.ndarray
    cV: np.ndarray


_NQ = 13  # Xt Xr Xth chi chit chir Q00 Q01 Q02 Q11 Q12 Q22 cV
_QIDX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))




def _integrand(tau, r, psi, p, left):
    """Polar data of the mixed field at angle ``psi`` (shifted time ``tau``).

    ``left`` selects the ``4 X1`` branch; callers pass it explicitly so that
    quadrature nodes on an arc end stay on their own side of the jump.
    """
    c, s = np.cos(psi), np.sin(psi)
    y1, y2 = r * c, r * s
    shape = np.broadcast(y1, left).shape
    left = np.broadcast_to(left, shape)
    d = tau - y1
    w = np.where(left, 1.0, d + 1)
    a, b, e = (p - 1) / 2, (p - 5) / 2, (p - 3) / 2
    wa, wb, we = w ** a, w ** b, w ** e
    X1 = np.where(left, 4 * (y2 * y2 - d * d), -wa + wb * y2 * y2)
    X2 = np.where(left, 8 * d * y2, 2 * we * y2)
    dw = e * w ** (e - 1)
    out = np.empty((_NQ,) + shape)
    out[0] = np.where(left, 4 * (y2 * y2 + d * d + 1), wa + wb * y2 * y2)
    out[1] = X1 * c + X2 * s
    out[2] = -X1 * s + X2 * c
    out[3] = np.where(left, 4 * d, we)
    out[4] = np.where(left, 4.0, dw)
    out[5] = np.where(left, -4.0, -dw) * c
    v = (y2, y2 * c + w * s, -y2 * s + w * c)
    q = np.where(left, 0.0, (5 - p) / 2 * w ** ((p - 7) / 2))
    for k, (i, j) in enumerate(_QIDX):
        out[6 + k] = q * v[i] * v[j]
    out[12] = np.where(left, 4 * (5 - p) / (p + 1) * (-d), 0.0)
    return out


def _angular_integrals(tau, r, p, n):
    """Integrals over a full turn for each radius in the 1-D array ``r``.

    For ``r <= tau`` the integrand is smooth and periodic (periodic
    trapezoid).  Otherwise the circle splits at ``+-arccos(tau/r)`` into a
    ``4 X1`` arc and an ``X2`` arc, each done by Gauss-Legendre.
    """
    out = np.zeros((_NQ, r.size))
    inner = r <= tau
    if inner.any():
        psi = 2 * np.pi * np.arange(n) / n
        vals = _integrand(tau, r[inner, None], psi[None, :], p, False)
        out[:, inner] = vals.sum(axis=-1) * (2 * np.pi / n)
    if (~inner).any():
        ro = r[~inner, None]
        g = np.arccos(tau / ro)
        x, wts = np.polynomial.legendre.leggauss(n)
        v1 = _integrand(tau, ro, g * x[None, :], p, True) * (g * wts[None, :])
        v2 = _integrand(tau, ro, np.pi + (np.pi - g) * x[None, :], p, False) * ((np.pi - g) * wts[None, :])
        out[:, ~inner] = v1.sum(axis=-1) + v2.sum(axis=-1)
    return out


def _certified_integrals(tau, r, p, n_quad, rtol=QUAD_RTOL):
    if n_quad < 64:
        raise ValueError("n_quad must be at least 64")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError("radii must be non-negative")
    lo = _angular_integrals(tau, r, p, n_quad)
    hi = _angular_integrals(tau, r, p, 2 * n_quad)
    mag = np.abs(hi).max(axis=1)
    scale = np.empty(_NQ)
    # compare within families: odd-symmetric entries integrate to roundoff
    for fam in ((0, 1, 2), (3, 4, 5), tuple(range(6, 12)), (12,)):
        scale[list(fam)] = mag[list(fam)].max()
    scale = scale[:, None]
    err = np.max(np.abs(hi - lo) / np.maximum(scale, 1e-300))
    if err > rtol:
        raise QuadratureUnderresolved(f"angular quadrature changed by {err:.2e} on doubling n_quad={n_quad}")
    return hi


def spherical_table(t, r, p, R, n_quad=256):
    """Rotation average of the mixed field at time ``t`` (shift ``R``) on radii ``r``."""
    v = _certified_integrals(t + R, r, p, n_quad)
    Q = np.empty((3, 3, v.shape[1]))
    for k, (i, j) in enumerate(_QIDX):
        Q[i, j] = Q[j, i] = v[6 + k]
    return SphericalTable(float(t), np.atleast_1d(np.asarray(r, dtype=float)), v[0], v[1], v[2],
                          v[3], v[4], v[5], Q, v[12])


def spherical_X(t, r, p, R, n_quad=256):
    """The averaged field at one point; ``Xth`` is the (vanishing) angular part."""
    tab = spherical_table(t, [r], p, R, n_quad)
    return MultiplierEval("spherical", tab.Xt[0], tab.Xr[0], tab.chi[0],
                          dchi=(tab.chit[0], tab.chir[0], 0.0), Xth=tab.Xth[0], div_coeff=tab.cV[0])


class FluxValue(NamedTuple):
    value: np.ndarray
    sign_ok: np.ndarray


def _folded_flux(t, r, p, R, n):
    x, wts = np.polynomial.legendre.leggauss(n)
    th = (np.pi / 4) * (x + 1)
    wts = (np.pi / 4) * wts
    c, s2 = np.cos(th), np.sin(th) ** 2
    base = (t + R + 1)[..., None]
    rc = r[..., None] * c
    wm, wp = base - rc, base + rc
    a, b, e = (p - 1) / 2, (p - 5) / 2, (p - 3) / 2
    rr = r[..., None]
    first = 2 * ((wp ** a - wm ** a) * c) @ wts
    second = 2 * ((wm ** b - wp ** b) * rr * rr * c * s2) @ wts
    third = 4 * ((wm ** e + wp ** e) * rr * s2) @ wts
    return first + second + third, np.abs(first) + np.abs(second) + np.abs(third)


def boundary_flux_Xr(t, r, p, R, n_quad=64):
    """Radial component of the averaged field where ``t + R >= r``.

    Uses the quarter-turn folded form, in which every integrand is visibly
    non-negative; the value is certified by doubling ``n_quad``.
    """
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(r < 0) or np.any(t + R < r - 1e-12 * np.maximum(1.0, r)):
        raise RegimeViolation("boundary flux form needs 0 <= r <= t + R")
    lo, _ = _folded_flux(t, r, p, R, n_quad)
    hi, scale = _folded_flux(t, r, p, R, 2 * n_quad)
    err = np.abs(hi - lo)
    if np.any(err > QUAD_RTOL * np.maximum(scale, 1e-300)):
        raise QuadratureUnderresolved("folded flux quadrature not converged; raise n_quad")
    tol = np.maximum(err, 1e-14 * scale)
    return FluxValue(hi, hi >= -tol)


FLUX_COLUMNS = ("t", "r", "p", "R", "Xr_value", "sign_ok")


def flux_sweep(p_values=(2, 3, 4, 5), R=1.0, t_max=50.0, n_t=100, n_r=100, n_quad=64):
    """Boundary flux on a ``t`` x ``r/(t+R)`` grid; returns a dict of columns."""
    cols = {k: [] for k in FLUX_COLUMNS}
    tt = np.linspace(0.0, t_max, n_t)
    ss = np.linspace(0.0, 1.0, n_r)
    T, S = np.meshgrid(tt, ss, indexing="ij")
    Rr = S * (T + R)
    for p in p_values:
        val, ok = boundary_flux_Xr(T, Rr, p, R, n_quad)
        cols["t"].append(T.ravel())
        cols["r"].append(Rr.ravel())
        cols["p"].append(np.full(T.size, float(p)))
        cols["R"].append(np.full(T.size, float(R)))
        cols["Xr_value"].append(val.ravel())
        cols["sign_ok"].append(ok.ravel())
    return {k: np.concatenate(v) for k, v in cols.items()}


def write_flux_csv(path, sweep):
    with open(path, "w") as fh:
        fh.write(",".join(FLUX_COLUMNS) + "\n")
        for row in zip(*(sweep[k] for k in FLUX_COLUMNS)):
            *nums, ok = row
            fh.write(",".join(repr(float(v)) for v in nums) + ("," + ("true" if ok else "false")) + "\n")


# --- checks on simulated solutions --------------------------------------------------

class DivergenceReport(NamedTuple):
    field_id: str
    times: tuple
    rel_l1: float
    max_abs: float
    l1_residual: float
    l1_closed: float
    l1_fd: float


def _space_time_gradient(state):
    gx, gy = node_gradient(state.phi, state.mask)
    return (state.phit, gx, gy)


def _grid_current(ev, state, p):
    d = _space_time_gradient(state)
    phi = state.phi
    lag = -d[0] ** 2 + d[1] ** 2 + d[2] ** 2
    pot = _potential(phi, p)
    Xd = sum(x * g for x, g in zip(ev.X, d))
    J = []
    for mu in range(3):
        # T_{mu nu} X^nu = d_mu phi (X . d phi) - 1/2 m_{mu mu} X^mu (lag + 2V)
        Tx = d[mu] * Xd - 0.5 * METRIC[mu] * ev.X[mu] * (lag + 2 * pot)
        J.append(Tx - 0.5 * ev.dchi[mu] * phi * phi + ev.chi * phi * d[mu])
    return J, d


def _domain_safe_x1(field_id, t, X1, margin):
    # points outside the second field's domain are parked where it is defined
    if field_id in ("X2tilde", "mixed"):
        return np.where(t - X1 + 1 > margin, X1, t)
    return X1


def divergence_check(traj, field_id="X1tilde", region=None, times=None, erode=3):
    """Compare a centred-difference divergence of the current with its closed form.

    ``times`` name snapshots that have equally spaced neighbours on both
    sides (spacing at most two solver steps).  The comparison region is the
    exterior eroded by ``erode`` nodes, intersected with ``region`` and with
    the field's own domain.
    """
    field_id = _ALIASES.get(field_id, field_id)
    snaps = list(traj.snapshots)
    if len(snaps) < 3:
        raise SnapshotSpacingTooCoarse("need at least three snapshots")
    g, mask, p = snaps[0].grid, snaps[0].mask, snaps[0].exponents.p
    h = g.h
    stimes = np.array([s.t for s in snaps])
    if times is None:
        idx = list(range(1, len(snaps) - 1))
    else:
        idx = [int(np.argmin(np.abs(stimes - tq))) for tq in times]
    X1g, X2g = g.mesh()
    base = ndimage.binary_erosion(mask.exterior, iterations=erode, border_value=0)
    if region is not None:
        base &= region
    res_l1 = cf_l1 = fd_l1 = 0.0
    max_abs = 0.0
    used = []
    for i in idx:
        if i <= 0 or i >= len(snaps) - 1:
            raise SnapshotSpacingTooCoarse(f"snapshot at t = {stimes[i]} lacks a neighbour")
        d1, d2 = stimes[i] - stimes[i - 1], stimes[i + 1] - stimes[i]
        if abs(d1 - d2) > 1e-9 * max(d1, 1.0) or d1 > 2 * g.dt * (1 + 1e-9):
            raise SnapshotSpacingTooCoarse(f"spacing {d1:.4g}, {d2:.4g} around t = {stimes[i]}")
        t = stimes[i]
        reg = base.copy()
        if field_id == "X2tilde":
            reg &= t - d1 - X1g + 1 > 0.5
        elif field_id == "mixed":
            reg &= np.abs(t - X1g) > 2 * (h + d1)
        Js = []
        for s in (snaps[i - 1], snaps[i], snaps[i + 1]):
            x1 = _domain_safe_x1(field_id, s.t, X1g, 0.25)
            ev = field_at(field_id, s.t, x1, X2g, p)
            Js.append(_grid_current(ev, s, p))
        (Jm, _), (J0, dmid), (Jp, _) = Js
        fd = -(Jp[0] - Jm[0]) / (2 * d1)
        fd[1:-1, :] += (J0[1][2:, :] - J0[1][:-2, :]) / (2 * h)
        fd[:, 1:-1] += (J0[2][:, 2:] - J0[2][:, :-2]) / (2 * h)
        x1 = _domain_safe_x1(field_id, t, X1g, 0.25)
        cf = field_at(field_id, t, x1, X2g, p).closed_form_divergence(snaps[i].phi, dmid, p)
        diff = np.abs(fd - cf)[reg]
        res_l1 += diff.sum() * h * h
        cf_l1 += np.abs(cf[reg]).sum() * h * h
        fd_l1 += np.abs(fd[reg]).sum() * h * h
        max_abs = max(max_abs, float(diff.max()) if diff.size else 0.0)
        used.append(float(t))
    rel = res_l1 / cf_l1 if cf_l1 > 0 else (0.0 if res_l1 == 0 else math.inf)
    return DivergenceReport(field_id, tuple(used), float(rel), max_abs, res_l1, cf_l1, fd_l1)


class IdentityReport(NamedTuple):
    field_id: str
    T: float
    J0_initial: float
    J0_final: float
    bulk: float
    boundary: float
    residual: float
    steps: int
    jump_crossings: int

    def to_dict(self):
        return self._asdict()


class IdentityMonitor:
    """Observer accumulating the terms of the space-time Stokes identity

        int_{t=T} J_0 + int_0^T int d^mu J_mu = int_{t=0} J_0 - int_0^T int_{dK} J_N

    for ``field_id`` in ``dt`` (energy), ``X0`` or ``spherical`` (shift ``R``).
    The bulk uses the closed-form divergence, the boundary term
    ``1/2 (X . N) (d_N phi)^2`` from one-sided normal differences.
    ``nonlinear=False`` checks the identity for the free wave flow, where the
    potential and the ``|phi|^{p+1}`` bulk terms are absent.
    """

    def __init__(self, field_id="spherical", R=None, n_boundary=None, n_table=512, n_quad=128,
                 nonlinear=True):
        if field_id not in IDENTITY_FIELDS:
            raise ValueError(f"identity field must be one of {IDENTITY_FIELDS}")
        self.field_id = field_id
        self.R = R
        self.n_boundary = n_boundary
        self.n_table = n_table
        self.n_quad = n_quad
        self.nonlinear = bool(nonlinear)
        self.times, self.bulk, self.flux = [], [], []
        self.J0_first = self.J0_last = None
        self.jump_crossings = 0
        self._geom = None

    def _setup(self, state):
        g, mask = state.grid, state.mask
        X1, X2 = g.mesh()
        r = np.hypot(X1, X2)
        safe = np.where(r > 0, r, 1.0)
        geom = {"r": r, "cos": np.where(r > 0, X1 / safe, 1.0), "sin": np.where(r > 0, X2 / safe, 0.0)}
        xm = 0.5 * (g.x[1:] + g.x[:-1])
        geom["r_ex"] = np.hypot(*np.meshgrid(xm, g.x, indexing="ij"))
        geom["r_ey"] = np.hypot(*np.meshgrid(g.x, xm, indexing="ij"))
        geom["ext"] = mask.exterior
        if mask.profile is not None:
            n_b = self.n_boundary or max(64, int(4 * np.pi * mask.profile.R_outer / g.h))
            pts, nrm, wts = boundary_quadrature(mask.profile, n_b)
            rb = np.hypot(pts[:, 0], pts[:, 1])
            probes = [np.stack([(pts[:, 0] + d * nrm[:, 0] + g.L) / g.h, (pts[:, 1] + d * nrm[:, 1] + g.L) / g.h])
                      for d in NORMAL_PROBES * g.h]
            geom["bnd"] = (rb, np.sum(pts * nrm, axis=1) / rb, wts, probes)
        if self.R is None:
            self.R = mask.R
        self._geom = geom

    def _crop(self, state):
        """Slices covering the live support of the state plus a two-node margin."""
        n = state.grid.n
        i0, i1, j0, j1 = _grow(_support_box(state.phi, state.phit), n, 2)
        return np.s_[i0:i1 + 1, j0:j1 + 1], np.s_[i0:i1, j0:j1 + 1], np.s_[i0:i1 + 1, j0:j1]

    def _radial(self, state):
        """Field profiles as functions of radius at the state's time."""
        t, p = state.t, state.exponents.p
        if self.field_id == "dt":
            return None
        if self.field_id == "X0":
            return {"Xt": lambda r: r * r + t * t + 1, "Xr": lambda r: 2 * t * r,
                    "chi": lambda r: t + 0 * r, "chit": lambda r: 1.0 + 0 * r}
        rmax = float(self._geom["r"][self._view[0]].max())
        rt = np.linspace(0.0, rmax, self.n_table)
        tab = spherical_table(t, rt, p, self.R, self.n_quad)
        f = lambda arr: (lambda r: np.interp(r, rt, arr))
        out = {k: f(getattr(tab, k)) for k in ("Xt", "Xr", "chi", "chit", "cV")}
        out["Q"] = {(i, j): f(tab.Q[i, j]) for i, j in _QIDX}
        return out

    def _boundary_term(self, state, Xr_of_r):
        if "bnd" not in self._geom or Xr_of_r is None:
            return 0.0
        rb, xn, wts, probes = self._geom["bnd"]
        f = [ndimage.map_coordinates(state.phi, c, order=1, mode="constant") for c in probes]
        dn = sum(c * v for c, v in zip(_NORMAL_WEIGHTS, f)) / state.grid.h
        return float(np.sum(wts * boundary_current(Xr_of_r(rb) * xn, dn)))

    def _gradient(self, state, view):
        ext = self._geom["ext"][view]
        h = state.grid.h
        f = state.phi[view]
        return _axis_gradient(f, ext, h, 0), _axis_gradient(f, ext, h, 1)

    def _J0(self, state, prof):
        if prof is None:
            return discrete_energy(state, self.nonlinear)
        geo = self._geom
        v, vx, vy = self._view
        p, h = state.exponents.p, state.grid.h
        phi, pt = state.phi[v], state.phit[v]
        r = geo["r"][v]
        gx, gy = self._gradient(state, v)
        pr = gx * geo["cos"][v] + gy * geo["sin"][v]
        acc = acceleration(phi, p, h, state.mask.free[v], self.nonlinear)
        # kinetic term in the leapfrog-conserved form, as in discrete_energy
        kin = 0.5 * pt * pt - state.grid.dt ** 2 / 8 * acc * acc
        pot = _potential(phi, p) if self.nonlinear else 0.0
        dens = prof["Xt"](r) * (kin + pot) + pt * prof["Xr"](r) * pr \
            - 0.5 * prof["chit"](r) * phi * phi + prof["chi"](r) * phi * pt
        full = state.phi
        dx = full[1:, :][vx] - full[:-1, :][vx]
        dy = full[:, 1:][vy] - full[:, :-1][vy]
        grad = np.sum(prof["Xt"](geo["r_ex"][vx]) * dx * dx) + np.sum(prof["Xt"](geo["r_ey"][vy]) * dy * dy)
        return float(np.sum(dens[geo["ext"][v]]) * h * h + 0.5 * grad)

    def _bulk(self, state, prof):
        if prof is None:
            return 0.0
        v = self._view[0]
        p, h, t = state.exponents.p, state.grid.h, state.t
        phi = state.phi[v]
        ext = self._geom["ext"][v]
        if self.field_id == "X0":
            if not self.nonlinear:
                return 0.0
            return float((p - 5) / (p + 1) * t * np.sum(np.abs(phi[ext]) ** (p + 1)) * h * h)
        geo = self._geom
        r, c, s = geo["r"][v], geo["cos"][v], geo["sin"][v]
        gx, gy = self._gradient(state, v)
        g = (state.phit[v], gx * c + gy * s, -gx * s + gy * c)
        dens = prof["cV"](r) * np.abs(phi) ** (p + 1) if self.nonlinear else np.zeros_like(phi)
        for i, j in _QIDX:
            dens = dens + (1 if i == j else 2) * prof["Q"][(i, j)](r) * g[i] * g[j]
        live = np.abs(phi) > 1e-12 * max(np.abs(phi).max(), 1e-300)
        self.jump_crossings += int(np.count_nonzero(live & (r > t + self.R)))
        return float(np.sum(dens[ext]) * h * h)

    def __call__(self, state):
        if self._geom is None:
            self._setup(state)
        self._view = self._crop(state)
        prof = self._radial(state)
        J0 = self._J0(state, prof)
        if self.J0_first is None:
            self.J0_first = J0
        self.J0_last = J0
        self.times.append(state.t)
        self.bulk.append(self._bulk(state, prof))
        self.flux.append(self._boundary_term(state, None if prof is None else prof["Xr"]))

    def report(self):
        t = np.array(self.times)
        bulk = float(np.trapezoid(self.bulk, t)) if len(t) > 1 else 0.0
        flux = float(np.trapezoid(self.flux, t)) if len(t) > 1 else 0.0
        lhs = self.J0_last + bulk
        rhs = self.J0_first - flux
        scale = abs(self.J0_first)
        resid = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
        return IdentityReport(self.field_id, float(t[-1] - t[0]) if len(t) else 0.0, self.J0_first,
                              self.J0_last, bulk, flux, float(resid), len(t) - 1, self.jump_crossings)


def energy_identity_check(source, field_id="spherical", T=None, **kw):
    """Residual of the Stokes identity over ``[t0, t0 + T]``.

    ``source`` is either an initial :class:`WaveState` (the run is done here
    with the monitor attached) or a trajectory holding every step.
    """
    mon = IdentityMonitor(field_id, **kw)
    if hasattr(source, "snapshots"):
        snaps = list(source.snapshots)
        if len(snaps) > 2:
            dts = np.diff([s.t for s in snaps])
            if np.max(dts) > snaps[0].grid.dt * (1 + 1e-9):
                raise SnapshotSpacingTooCoarse("identity check needs a snapshot at every step")
        for s in snaps:
            mon(s)
    else:
        if T is None:
            raise ValueError("T is required when starting from a state")
        evolve(source, source.t + T, nonlinearity_on=mon.nonlinear, observers=[mon])
    return mon.report()
