"""Star-shaped obstacles, the computational grid and node classification.

Obstacles are radial graphs ``r = rho(theta)`` around the origin.  Every
profile is held as a truncated trigonometric series, so ``rho`` and ``rho'``
are evaluated exactly (spectral differentiation of the sample table).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridTooSmall, NonPositiveRadius, NonStarShaped

PROFILE_KINDS = ("disk", "ellipse-graph", "bumpy", "table")
DENSE_SWEEP = 100_000
EXTERIOR, OBSTACLE = 0, 1


@dataclass(frozen=True)
class ObstacleProfile:
    kind: str
    coeffs: tuple
    n_theta: int
    cos_modes: np.ndarray = field(repr=False)
    sin_modes: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)  # samples at 2*pi*k/n_theta, k = 0..n_theta
    R_outer: float = 0.0

    def radius(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.arange(len(self.cos_modes))
        ang = np.multiply.outer(theta, k)
        return np.cos(ang) @ self.cos_modes + np.sin(ang) @ self.sin_modes

    def radius_derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.arange(len(self.cos_modes))
        ang = np.multiply.outer(theta, k)
        return np.cos(ang) @ (k * self.sin_modes) - np.sin(ang) @ (k * self.cos_modes)

    def star_margin(self, theta):
        """x . N at the boundary point with polar angle ``theta``."""
        r = self.radius(theta)
        dr = self.radius_derivative(theta)
        return r * r / np.hypot(r, dr)

    def area(self):
        # 1/2 int rho^2 from the Fourier coefficients (Parseval)
        a, b = self.cos_modes, self.sin_modes
        return math.pi * (a[0] ** 2 + 0.5 * np.sum(a[1:] ** 2 + b[1:] ** 2))

    def to_json(self):
        return json.dumps({"kind": self.kind, "coeffs": list(self.coeffs), "n_theta": self.n_theta})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else dict(text)
        return build_profile(d["kind"], d["coeffs"], n_theta=d.get("n_theta", 256))


def _ellipse_radius(theta, a, b):
    return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)


def _modes_from_samples(samples):
    n = len(samples)
    F = np.fft.rfft(samples)
    cos_modes = 2.0 * F.real / n
    sin_modes = -2.0 * F.imag / n
    cos_modes[0] /= 2.0
    sin_modes[0] = 0.0
    if n % 2 == 0:
        cos_modes[-1] /= 2.0
        sin_modes[-1] = 0.0
    return cos_modes, sin_modes


def _truncate(cos_modes, sin_modes, rtol=1e-15):
    mag = np.hypot(cos_modes, sin_modes)
    keep = np.flatnonzero(mag > rtol * abs(cos_modes[0]))
    m = keep[-1] + 1 if keep.size else 1
    return cos_modes[:m].copy(), sin_modes[:m].copy()


def build_profile(kind, coeffs, n_theta=256):
    """Build a star-shaped obstacle profile.

    ``disk``: ``coeffs = [radius]``; ``bumpy``: cosine series
    ``[c0, c1, ...]`` meaning ``c0 + sum c_k cos(k theta)``;
    ``ellipse-graph``: ``[a, b]`` semi-axes along x and y; ``table``:
    ``n_theta`` samples of rho on a uniform periodic angle grid.
    """
    coeffs = tuple(float(c) for c in np.atleast_1d(coeffs))
    if kind == "disk":
        if len(coeffs) != 1:
            raise ValueError("disk takes a single radius")
        cos_modes, sin_modes = np.array(coeffs), np.zeros(1)
    elif kind == "bumpy":
        cos_modes, sin_modes = np.array(coeffs), np.zeros(len(coeffs))
    elif kind == "ellipse-graph":
        a, b = coeffs
        if a <= 0 or b <= 0:
            raise NonPositiveRadius(f"semi-axes must be positive, got {a}, {b}")
        theta = 2 * np.pi * np.arange(n_theta) / n_theta
        cos_modes, sin_modes = _truncate(*_modes_from_samples(_ellipse_radius(theta, a, b)))
    elif kind == "table":
        n_theta = len(coeffs)
        cos_modes, sin_modes = _truncate(*_modes_from_samples(np.array(coeffs)))
    else:
        raise ValueError(f"unknown profile kind {kind!r}; expected one of {PROFILE_KINDS}")

    if 2 * (len(cos_modes) - 1) >= n_theta:
        raise ValueError(f"n_theta={n_theta} cannot resolve {len(cos_modes) - 1} modes")

    prof = ObstacleProfile(kind, coeffs, int(n_theta), cos_modes, sin_modes, np.zeros(1), 0.0)
    dense = 2 * np.pi * np.arange(DENSE_SWEEP) / DENSE_SWEEP
    rd = prof.radius(dense)
    if np.min(rd) <= 0:
        i = int(np.argmin(rd))
        raise NonPositiveRadius(f"rho({dense[i]:.4f}) = {rd[i]:.4g} <= 0")
    margin = prof.star_margin(dense)
    if np.min(margin) <= 0:
        raise NonStarShaped(f"x.N = {np.min(margin):.3g} <= 0")

    table = prof.radius(2 * np.pi * np.arange(n_theta + 1) / n_theta)
    table[-1] = table[0]
    object.__setattr__(prof, "rho", table)
    object.__setattr__(prof, "R_outer", float(np.max(table)))
    return prof


def disk(radius=1.0):
    return build_profile("disk", [radius])


def boundary_normal(profile, theta):
    """Outward unit normal of ``{r = rho(theta)}``; vectorised over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    r = profile.radius(theta)
    dr = profile.radius_derivative(theta)
    c, s = np.cos(theta), np.sin(theta)
    nrm = np.hypot(r, dr)
    return np.stack([(r * c + dr * s) / nrm, (r * s - dr * c) / nrm], axis=-1)


def boundary_point(profile, theta):
    theta = np.asarray(theta, dtype=float)
    r = profile.radius(theta)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def boundary_quadrature(profile, n):
    """Periodic trapezoid rule on the boundary curve.

    Returns ``(points, normals, weights)`` with ``weights`` summing to the
    curve length.
    """
    if n < 8:
        raise ValueError("boundary quadrature needs n >= 8")
    theta = 2 * np.pi * np.arange(n) / n
    speed = np.hypot(profile.radius(theta), profile.radius_derivative(theta))
    return boundary_point(profile, theta), boundary_normal(profile, theta), speed * (2 * np.pi / n)


@dataclass(frozen=True)
class GridSpec:
    """Uniform square grid on ``[-L, L]^2`` with leapfrog time step ``dt = lam * h``."""

    h: float
    L: float
    dt: float
    lam: float

    @classmethod
    def make(cls, h, L, lam=0.5):
        cells = 2 * L / h
        if abs(cells - round(cells)) > 1e-9 * max(cells, 1.0):
            raise ValueError(f"2L/h = {cells} must be an integer")
        return cls(float(h), float(L), float(lam * h), float(lam))

    @property
    def n(self):
        return int(round(2 * self.L / self.h)) + 1

    @property
    def x(self):
        return -self.L + self.h * np.arange(self.n)

    def mesh(self):
        return np.meshgrid(self.x, self.x, indexing="ij")

    def radius(self):
        X, Y = self.mesh()
        return np.hypot(X, Y)

    def node_index(self, x1, x2):
        """Index of the node at (x1, x2); raises if the point is not a node."""
        i = (x1 + self.L) / self.h
        j = (x2 + self.L) / self.h
        ii, jj = int(round(i)), int(round(j))
        if abs(i - ii) > 1e-9 or abs(j - jj) > 1e-9 or not (0 <= ii < self.n and 0 <= jj < self.n):
            raise KeyError(f"({x1}, {x2}) is not a grid node")
        return ii, jj


@dataclass(frozen=True)
class Mask:
    grid: GridSpec
    profile: ObstacleProfile | None
    kind: np.ndarray = field(repr=False)  # EXTERIOR / OBSTACLE per node
    boundary_nodes: np.ndarray = field(repr=False)  # (k, 2) node indices
    boundary_normals: np.ndarray = field(repr=False)  # (k, 2)

    @property
    def obstacle(self):
        return self.kind == OBSTACLE

    @property
    def exterior(self):
        return self.kind == EXTERIOR

    @cached_property
    def free(self):
        """Exterior nodes off the outer box edge: the nodes that are evolved (read-only)."""
        f = self.kind == EXTERIOR
        f[0, :] = f[-1, :] = f[:, 0] = f[:, -1] = False
        f.setflags(write=False)
        return f

    @property
    def R(self):
        return self.profile.R_outer if self.profile is not None else 0.0


def build_mask(profile, grid):
    """Classify nodes: OBSTACLE iff ``|x| <= rho(atan2(x2, x1))``.

    ``profile=None`` gives an obstacle-free grid.
    """
    n = grid.n
    if profile is None:
        kind = np.zeros((n, n), dtype=np.int8)
        return Mask(grid, None, kind, np.zeros((0, 2), dtype=int), np.zeros((0, 2)))
    if grid.L < profile.R_outer + 2 * grid.h:
        raise GridTooSmall(f"L = {grid.L} does not cover B_R with R = {profile.R_outer:.4g}")

    X, Y = grid.mesh()
    r = np.hypot(X, Y)
    kind = np.zeros((n, n), dtype=np.int8)
    near = r <= profile.R_outer
    theta = np.arctan2(Y[near], X[near])
    kind[near] = (r[near] <= profile.radius(theta)).astype(np.int8)

    obs = kind == OBSTACLE
    touch = np.zeros_like(obs)
    touch[1:, :] |= obs[:-1, :]
    touch[:-1, :] |= obs[1:, :]
    touch[:, 1:] |= obs[:, :-1]
    touch[:, :-1] |= obs[:, 1:]
    bnodes = np.argwhere(touch & ~obs)
    th = np.arctan2(Y[bnodes[:, 0], bnodes[:, 1]], X[bnodes[:, 0], bnodes[:, 1]])
    return Mask(grid, profile, kind, bnodes, boundary_normal(profile, th))
