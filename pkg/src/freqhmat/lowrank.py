"""Adaptive cross approximation with a reference cross, and recompression.

An entry generator is any object with a ``shape`` attribute and methods
``row(i)`` and ``col(j)`` returning one full row or column of the target
block.  Generators may expose ``entry_cost`` (FLOP per entry) for the
operation counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .validation import check_int, check_tolerance

#: magnitudes at or below this are treated as an exact zero pivot
ZERO_PIVOT = 1e-300


@dataclass
class ACACounter:
    """Instrumentation of one or more ACA runs.

    ``entries`` counts generated matrix entries, ``arith`` the FLOP spent on
    residual updates, scaling and norms; ``flops`` adds the entry cost.
    """

    entries: int = 0
    arith: int = 0
    entry_cost: float = 1.0
    refreshes: int = 0

    @property
    def flops(self):
        return self.entries * self.entry_cost + self.arith

    def merge(self, other):
        self.entries += other.entries
        self.arith += other.arith
        self.refreshes += other.refreshes
        return self


def flop_counter(entry_cost=1.0):
    """Fresh :class:`ACACounter`; pass it to :func:`aca_plus` via ``counter=``."""
    return ACACounter(entry_cost=float(entry_cost))


@dataclass
class LowRankFactor:
    """``X @ Y.T`` with the row/column pivots of the cross approximation.

    After :func:`recompress` the pivots still describe the ACA skeleton and
    may be longer than the new rank.
    """

    X: np.ndarray
    Y: np.ndarray
    row_pivots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    col_pivots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    converged: bool = True

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=complex)
        self.Y = np.asarray(self.Y, dtype=complex)
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[1] != self.Y.shape[1]:
            raise ValueError("X and Y must be 2D with the same number of columns")
        self.row_pivots = np.asarray(self.row_pivots, dtype=np.int64)
        self.col_pivots = np.asarray(self.col_pivots, dtype=np.int64)

    @classmethod
    def zeros(cls, m, n):
        return cls(np.zeros((m, 0), complex), np.zeros((n, 0), complex))

    @property
    def rank(self):
        return self.X.shape[1]

    @property
    def shape(self):
        return (self.X.shape[0], self.Y.shape[0])

    @property
    def nbytes(self):
        """Payload bytes, 16 per complex number."""
        return 16 * self.rank * (self.X.shape[0] + self.Y.shape[0])

    def to_dense(self):
        return self.X @ self.Y.T

    def matvec(self, v):
        return self.X @ (self.Y.T @ v)

    def row(self, i):
        return self.Y @ self.X[i]

    def col(self, j):
        return self.X @ self.Y[j]

    def entries(self, rows, cols):
        return np.einsum("ik,ik->i", self.X[rows], self.Y[cols])


class DenseGenerator:
    """Entry generator over an explicit matrix."""

    entry_cost = 1.0

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix)
        if self.matrix.ndim != 2:
            raise ValueError("matrix must be 2D")
        self.shape = self.matrix.shape

    def row(self, i):
        return self.matrix[i, :].astype(complex)

    def col(self, j):
        return self.matrix[:, j].astype(complex)


class KernelGenerator:
    """Rows and columns of a kernel block ``B[rows][:, cols]`` at one wavenumber.

    ``extracted=True`` generates the frequency-extracted block.
    """

    def __init__(self, kernel, rows, cols, kappa, extracted=False):
        self.kernel = kernel
        self.rows = np.ascontiguousarray(rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(cols, dtype=np.int64)
        self.kappa = float(kappa)
        self.extracted = bool(extracted)
        self.shape = (self.rows.shape[0], self.cols.shape[0])
        self.entry_cost = float(kernel.q**4)

    def row(self, i):
        return self.kernel.block(self.rows[i : i + 1], self.cols, self.kappa, self.extracted)[0]

    def col(self, j):
        return self.kernel.block(self.rows, self.cols[j : j + 1], self.kappa, self.extracted)[:, 0]


def default_max_rank(shape):
    return max(1, min(shape) // 2)


def _argmax_free(v, used):
    """Index of the largest ``|v|`` among unused entries; lowest index on ties."""
    a = np.abs(v)
    a[used] = -1.0
    return int(np.argmax(a))


def _next_free(start, used):
    n = used.shape[0]
    for off in range(1, n + 1):
        k = (start + off) % n
        if not used[k]:
            return k
    return None


def aca_plus(gen, tol=1e-5, max_rank=None, counter=None):
    """ACA+ cross approximation of the block described by ``gen``.

    Parameters
    ----------
    gen : entry generator
        Provides ``shape``, ``row(i)`` and ``col(j)``.
    tol : float
        Stop once ``|x_k| |y_k| <= tol |x_0| |y_0|``; the cross that
        triggers the stop is discarded.
    max_rank : int, optional
        Rank cap, default ``min(#t, #s) // 2``.  Hitting it sets
        ``converged=False`` on the result.
    counter : ACACounter, optional
        Accumulates entry and FLOP counts.

    Returns
    -------
    LowRankFactor

    Notes
    -----
    The reference row starts at the middle row; the reference column is
    the column of smallest modulus in that row.  Each step takes the pivot
    from whichever reference holds the larger residual entry and searches the
    other index in the residual cross.  A reference consumed as a pivot is
    rebuilt at the next unused index.
    """
    tol = check_tolerance(tol)
    m, n = gen.shape
    if max_rank is None:
        max_rank = default_max_rank((m, n))
    max_rank = check_int(max_rank, "max_rank", minimum=1)
    max_rank = min(max_rank, m, n)
    cnt = counter if counter is not None else ACACounter()
    cnt.entry_cost = float(getattr(gen, "entry_cost", cnt.entry_cost))
    if m == 0 or n == 0:
        return LowRankFactor.zeros(m, n)

    xs, ys, piv_i, piv_j = [], [], [], []
    used_r = np.zeros(m, dtype=bool)
    used_c = np.zeros(n, dtype=bool)

    def residual_row(i):
        r = np.asarray(gen.row(i), dtype=complex).copy()
        cnt.entries += n
        for x, y in zip(xs, ys):
            r -= x[i] * y
        cnt.arith += 8 * n * len(xs)
        return r

    def residual_col(j):
        c = np.asarray(gen.col(j), dtype=complex).copy()
        cnt.entries += m
        for x, y in zip(xs, ys):
            c -= y[j] * x
        cnt.arith += 8 * m * len(xs)
        return c

    i_ref = m // 2
    row_ref = residual_row(i_ref)
    j_ref = int(np.argmin(np.abs(row_ref)))
    col_ref = residual_col(j_ref)
    norm0 = None
    converged = False

    while len(xs) < max_rank:
        rmax = np.max(np.abs(np.where(used_c, 0, row_ref))) if row_ref is not None else 0.0
        cmax = np.max(np.abs(np.where(used_r, 0, col_ref))) if col_ref is not None else 0.0
        if max(rmax, cmax) <= ZERO_PIVOT:
            converged = True
            break
        if rmax >= cmax:
            j = _argmax_free(row_ref, used_c)
            col = residual_col(j)
            i = _argmax_free(col, used_r)
            row = residual_row(i)
        else:
            i = _argmax_free(col_ref, used_r)
            row = residual_row(i)
            j = _argmax_free(row, used_c)
            col = residual_col(j)
        pivot = row[j]
        if abs(pivot) <= ZERO_PIVOT:
            converged = True
            break
        x = col / pivot
        y = row
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        cnt.arith += 8 * m + 8 * (m + n)
        if norm0 is None:
            norm0 = nx * ny
        elif nx * ny <= tol * norm0:
            converged = True
            break
        xs.append(x)
        ys.append(y)
        piv_i.append(i)
        piv_j.append(j)
        used_r[i] = True
        used_c[j] = True
        if row_ref is not None:
            row_ref = row_ref - x[i_ref] * y
            cnt.arith += 8 * n
        if col_ref is not None:
            col_ref = col_ref - y[j_ref] * x
            cnt.arith += 8 * m
        if i == i_ref:
            i_ref = _next_free(i_ref, used_r)
            row_ref = residual_row(i_ref) if i_ref is not None else None
            cnt.refreshes += 1
        if j == j_ref:
            j_ref = _next_free(j_ref, used_c)
            col_ref = residual_col(j_ref) if j_ref is not None else None
            cnt.refreshes += 1
    else:
        converged = len(xs) == min(m, n)

    if not xs:
        return LowRankFactor(np.zeros((m, 0), complex), np.zeros((n, 0), complex), converged=converged)
    return LowRankFactor(np.stack(xs, axis=1), np.stack(ys, axis=1), piv_i, piv_j, converged)


def truncation_rank(sigma, eps, shape):
    """Number of singular values kept at relative tolerance ``eps``.

    Values ``sigma_l <= eps |sigma|_2 / sqrt(min(shape))`` are dropped, which
    bounds the discarded Frobenius mass by ``eps |sigma|_2`` and makes the
    truncation idempotent.
    """
    if sigma.size == 0:
        return 0
    thresh = eps * np.linalg.norm(sigma) / np.sqrt(min(shape))
    return int(np.count_nonzero(sigma > thresh))


def recompress(f, eps=1e-7):
    """QR of both factors plus an SVD of ``R_X R_Y^T``, truncated at ``eps``.

    Returns a factor whose product differs from ``f`` by at most
    ``eps * |f|_F`` in Frobenius norm; its rank never exceeds ``f.rank``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps!r}")
    if f.rank == 0:
        return f
    qx, rx = scipy.linalg.qr(f.X, mode="economic")
    qy, ry = scipy.linalg.qr(f.Y, mode="economic")
    u, s, vh = scipy.linalg.svd(rx @ ry.T, full_matrices=False, lapack_driver="gesvd")
    r = truncation_rank(s, eps, f.shape)
    X = qx @ (u[:, :r] * s[:r])
    Y = qy @ vh[:r].T
    return LowRankFactor(X, Y, f.row_pivots, f.col_pivots, f.converged)
