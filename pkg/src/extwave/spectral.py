"""Discrete Dirichlet Laplacian on the free nodes and its fractional powers.

``A`` is the 5-point ``-Delta_h`` restricted to free nodes (exterior nodes
off the box edge); obstacle nodes and the box edge enter as zeros, so ``A``
is symmetric positive definite.  ``A^{s/2} f`` is computed exactly from a
dense eigendecomposition for small operators and by Lanczos otherwise.
Norms use the grid L2 inner product ``h^2 sum``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import ConvergenceFailure, EmptyExterior

DENSE_MAX = 4000
LANCZOS_RTOL = 1e-8
EIG_FLOOR = 1e-12  # relative cutoff for negative powers


@dataclass(eq=False)
class DirichletOperator:
    A: sp.csr_matrix = field(repr=False)
    index: np.ndarray = field(repr=False)  # node -> row, -1 off the free set
    grid: object
    lam_min: float
    _eig: tuple = field(default=None, repr=False)

    @property
    def size(self):
        return self.A.shape[0]

    @property
    def h(self):
        return self.grid.h

    def to_vector(self, f):
        f = np.asarray(f, dtype=float)
        if f.ndim == 1:
            if f.size != self.size:
                raise ValueError(f"vector of length {f.size}, operator has {self.size} rows")
            return f
        return f[self.index >= 0]

    def to_field(self, v):
        out = np.zeros(self.index.shape)
        out[self.index >= 0] = v
        return out

    def eig(self):
        """Dense eigenpairs (ascending), cached."""
        if self._eig is None:
            if self.size > DENSE_MAX:
                raise MemoryError(f"dense eigendecomposition refused for {self.size} > {DENSE_MAX} nodes")
            self._eig = sla.eigh(self.A.toarray())
        return self._eig


def assemble(grid, mask):
    """Build ``-Delta_h`` on free nodes and verify positivity of its bottom eigenvalue."""
    free = mask.free
    n_free = int(np.count_nonzero(free))
    if n_free == 0:
        raise EmptyExterior("no free nodes to build the operator on")
    index = -np.ones(free.shape, dtype=np.int64)
    index[free] = np.arange(n_free)
    rows, cols = [], []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = np.roll(np.roll(index, -di, axis=0), -dj, axis=1)
        ok = free & (nb >= 0)
        # np.roll wraps around; the box edge is never free, so wrapped pairs are excluded
        rows.append(index[ok])
        cols.append(nb[ok])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    h2 = grid.h * grid.h
    off = sp.csr_matrix((-np.ones(rows.size) / h2, (rows, cols)), shape=(n_free, n_free))
    A = (sp.identity(n_free, format="csr") * (4.0 / h2) + off).tocsr()
    if n_free <= 64:
        lam = float(sla.eigvalsh(A.toarray())[0])
    else:
        lam = float(eigsh(A, k=1, sigma=0, which="LM", return_eigenvectors=False)[0])
    if not lam > 0:
        raise ArithmeticError(f"operator is not positive definite (lambda_min = {lam:.3g})")
    return DirichletOperator(A, index, grid, lam)


# --- Lanczos ------------------------------------------------------------------------

class _Lanczos:
    """Incremental Lanczos with full reorthogonalisation."""

    def __init__(self, A, v):
        self.A = A
        self.norm = float(np.linalg.norm(v))
        self.V = np.zeros((64, v.size))
        self.V[0] = v / self.norm
        self.alpha, self.beta = [], []
        self.done = False

    def extend(self, m):
        n = self.V.shape[1]
        while len(self.alpha) < m and not self.done:
            k = len(self.alpha)
            q = self.V[k]
            w = self.A @ q
            if k > 0:
                w -= self.beta[-1] * self.V[k - 1]
            a = float(q @ w)
            w -= a * q
            Q = self.V[:k + 1]
            w -= Q.T @ (Q @ w)
            self.alpha.append(a)
            b = float(np.linalg.norm(w))
            if b <= 1e-13 * max(abs(a), 1.0) or k + 1 >= n:
                self.done = True  # invariant subspace found: the result is exact
                break
            self.beta.append(b)
            if k + 1 >= self.V.shape[0]:
                self.V = np.vstack([self.V, np.zeros_like(self.V)])
            self.V[k + 1] = w / b

    def ritz(self):
        k = len(self.alpha)
        theta, S = sla.eigh_tridiagonal(np.array(self.alpha), np.array(self.beta[:k - 1]))
        return np.maximum(theta, 0.0), S


def _lanczos_run(A, v, evaluate, rtol=LANCZOS_RTOL, max_iter=2000, chunk=40):
    lz = _Lanczos(A, v)
    prev = None
    m = chunk
    while True:
        lz.extend(m)
        val = evaluate(lz)
        if lz.done:
            return val
        if prev is not None and np.linalg.norm(val - prev) <= rtol * np.linalg.norm(val):
            return val
        if m >= max_iter:
            raise ConvergenceFailure(f"Lanczos did not reach rtol={rtol} in {max_iter} steps")
        prev = val
        m = min(m + chunk, max_iter)


def _lanczos_apply(A, v, e):
    """``A^e v`` from the Krylov basis."""
    def evaluate(lz):
        theta, S = lz.ritz()
        y = S @ (_power(theta, e) * S[0]) * lz.norm
        return lz.V[:len(y)].T @ y
    return _lanczos_run(A, v, evaluate)


def _lanczos_quadratic(A, v, e, rtol=LANCZOS_RTOL, max_iter=20000, chunk=40):
    """``v^T A^e v`` by Gauss quadrature on the Lanczos tridiagonal.

    Only the three-term recurrence is kept (no basis, no reorthogonalisation):
    the Gauss rule stays accurate under loss of orthogonality, which merely
    delays convergence, so memory is O(n) even when many steps are needed.
    """
    norm = float(np.linalg.norm(v))
    q_prev = np.zeros_like(v)
    q = v / norm
    alpha, beta = [], []
    prev = None
    b = 0.0
    while True:
        w = A @ q - b * q_prev
        a = float(q @ w)
        w -= a * q
        alpha.append(a)
        b = float(np.linalg.norm(w))
        done = b <= 1e-13 * max(abs(a), 1.0) or len(alpha) >= v.size
        if done or len(alpha) % chunk == 0:
            theta, S = sla.eigh_tridiagonal(np.array(alpha), np.array(beta))
            val = norm ** 2 * float(np.sum(S[0] ** 2 * _power(np.maximum(theta, 0.0), e)))
            if done or (prev is not None and abs(val - prev) <= rtol * abs(val)):
                return val
            if len(alpha) >= max_iter:
                raise ConvergenceFailure(f"Lanczos did not reach rtol={rtol} in {max_iter} steps")
            prev = val
        beta.append(b)
        q_prev, q = q, w / b


def _power(lam, e):
    lam = np.asarray(lam, dtype=float)
    if e >= 0:
        return lam ** e
    floor = EIG_FLOOR * lam.max()
    return np.where(lam > floor, np.maximum(lam, floor) ** e, 0.0)


# --- public API ----------------------------------------------------------------------

def frac_apply(op, f, s):
    """``A^{s/2} f``; returns a grid field if given one, else a vector.

    Negative ``s`` acts on the span of eigenvalues above ``1e-12 lambda_max``.
    """
    as_field = np.ndim(f) == 2
    v = op.to_vector(f).copy()
    if s == 0 or not np.any(v):
        out = v
    elif s == 2:
        out = op.A @ v
    elif op.size <= DENSE_MAX:
        lam, U = op.eig()
        out = U @ (_power(lam, s / 2) * (U.T @ v))
    else:
        out = _lanczos_apply(op.A, v, s / 2)
    return op.to_field(out) if as_field else out


def frac_norm(op, f, s):
    """Grid L2 norm of ``A^{s/2} f``."""
    v = op.to_vector(f)
    if not np.any(v):
        return 0.0
    if s == 0:
        q = float(v @ v)
    elif s == 2:
        Av = op.A @ v
        q = float(Av @ Av)
    elif op.size <= DENSE_MAX:
        lam, U = op.eig()
        c = U.T @ v
        q = float(np.sum(_power(lam, s) * c * c))
    else:
        q = _lanczos_quadratic(op.A, v, s)
    return float(np.sqrt(max(q, 0.0)) * op.h)


def pair_norm(op, f, g, s):
    """Norm of a Cauchy pair in ``H^s x H^{s-1}``."""
    return frac_norm(op, f, s) + frac_norm(op, g, s - 1)


def dump_coo(op, path):
    """Write the matrix as ``row col value`` lines (0-based)."""
    C = op.A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
