"""Compact frequency representation of admissible blocks by AAA-ACA.

For an admissible block the phase-free matrix function ``kappa -> B(kappa)``
is approximated by ``sum_k M_k f_k(kappa)`` with rational traces ``f_k`` and
matrices ``M_k = sum_{nu <= k} C[nu, k] X_nu Y_nu^T`` built from per-wavenumber
ACA snapshots.  Only ``C``, the snapshots and the traces are stored.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .lowrank import ACACounter, LowRankFactor, aca_plus
from .rational import DEFAULT_MAX_DEGREE, BarycentricRational, SampleGrid, aaa
from .validation import check_int, check_tolerance

MAGIC = b"CBR1"
VERSION = 1


class ExtrapolationWarning(UserWarning):
    """Evaluation outside the interval the representation was built on."""


class CompactFormatError(ValueError):
    """Malformed, truncated or mismatched compact container."""


# ---------------------------------------------------------------------------
# coefficient matrix


class CoeffMatrix:
    """Upper triangular coefficient matrix with unit diagonal."""

    def __init__(self, data=None):
        data = np.zeros((0, 0), complex) if data is None else np.array(data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError("coefficient matrix must be square")
        if data.size and (np.any(np.diag(data) != 1) or np.any(np.tril(data, -1) != 0)):
            raise ValueError("coefficient matrix must be upper triangular with unit diagonal")
        self._data = data
        self._data.setflags(write=False)

    @property
    def dim(self):
        return self._data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    @property
    def array(self):
        return self._data

    def __matmul__(self, v):
        return self._data @ v

    def __eq__(self, other):
        return isinstance(other, CoeffMatrix) and np.array_equal(self._data, other._data)

    def __repr__(self):
        return f"CoeffMatrix(dim={self.dim})"


def coeff_update(C, fvals):
    """Grow ``C`` by one column ``-C @ fvals`` over a trailing 1.

    ``fvals[mu] = f_mu(kappa_{k+1})`` for the traces already in ``C``.
    """
    C = C if isinstance(C, CoeffMatrix) else CoeffMatrix(C)
    f = np.asarray(fvals, dtype=complex).ravel()
    if f.shape[0] != C.dim:
        raise ValueError(f"expected {C.dim} trace values, got {f.shape[0]}")
    k = C.dim
    out = np.zeros((k + 1, k + 1), dtype=complex)
    out[:k, :k] = C.array
    out[:k, k] = -(C.array @ f)
    out[k, k] = 1.0
    return CoeffMatrix(out)


# ---------------------------------------------------------------------------
# sampled norm


def block_rng(seed, block_id):
    """Counter-based generator keyed by ``(seed, block_id)``."""
    key = np.array([int(seed) & (2**64 - 1), int(block_id) & (2**64 - 1)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_pairs(shape, m, rng):
    """``m`` distinct index pairs drawn uniformly from a ``shape`` block."""
    t, s = shape
    total = t * s
    m = min(int(m), total)
    if m == total:
        flat = np.arange(total)
    else:
        flat = rng.choice(total, size=m, replace=False)
    return flat // s, flat % s


def norm_estimate(entries, shape, m, rng=None):
    """Sampled Frobenius norm ``sqrt(#t #s / m * sum_{E_m} |M_ij|^2)``.

    Parameters
    ----------
    entries : callable
        ``entries(I, J)`` returns the block values at index pairs.
    shape : tuple
        Block shape ``(#t, #s)``.
    m : int
        Sample count; values at or above ``#t #s`` give the exact norm.
    rng : numpy.random.Generator, optional
    """
    m = check_int(m, "m", minimum=1)
    rng = np.random.default_rng(0) if rng is None else rng
    total = shape[0] * shape[1]
    I, J = sample_pairs(shape, m, rng)
    vals = np.asarray(entries(I, J))
    return float(np.sqrt(total / I.shape[0] * np.sum(np.abs(vals) ** 2)))


def lowrank_frobenius(Xs, Ys, coeffs):
    """Exact ``|sum_nu c_nu X_nu Y_nu^T|_F`` through Gram matrices."""
    if not Xs:
        return 0.0
    X = np.hstack([c * x for c, x in zip(coeffs, Xs)])
    Y = np.hstack(list(Ys))
    val = np.real(np.sum((X.conj().T @ X) * (Y.conj().T @ Y)))
    return float(np.sqrt(max(val, 0.0)))


# ---------------------------------------------------------------------------
# entry generators over (rows, cols, nodes)


class TensorGenerator:
    """Base class for block generators evaluated on all grid nodes at once.

    Subclasses implement ``_rows(I)`` returning ``(len(I), nS, #s)`` and
    ``_cols(J)`` returning ``(len(J), nS, #t)`` plus ``entries(I, J, kappa)``
    at arbitrary wavenumbers.  Whole rows and columns are cached.
    """

    entry_cost = 1.0

    def __init__(self, shape, nodes):
        self.shape = tuple(int(v) for v in shape)
        self.nodes = np.asarray(nodes, dtype=float)
        self._row_cache = {}
        self._col_cache = {}
        self.evaluations = 0

    def row_all(self, i):
        i = int(i)
        if i not in self._row_cache:
            self._row_cache[i] = self._rows(np.array([i]))[0]
            self.evaluations += self._row_cache[i].size
        return self._row_cache[i]

    def col_all(self, j):
        j = int(j)
        if j not in self._col_cache:
            self._col_cache[j] = self._cols(np.array([j]))[0]
            self.evaluations += self._col_cache[j].size
        return self._col_cache[j]

    def clear(self):
        self._row_cache.clear()
        self._col_cache.clear()

    def at_node(self, k):
        return _NodeSlice(self, int(k))

    def dense(self):
        """Full ``(nS, #t, #s)`` tensor; test helper for small blocks."""
        return np.stack([self.row_all(i) for i in range(self.shape[0])], axis=1)


class _NodeSlice:
    def __init__(self, tgen, k):
        self.tgen = tgen
        self.k = k
        self.shape = tgen.shape
        self.entry_cost = tgen.entry_cost

    def row(self, i):
        return self.tgen.row_all(i)[self.k]

    def col(self, j):
        return self.tgen.col_all(j)[self.k]


class FunctionTensorGenerator(TensorGenerator):
    """Generator from a vectorised ``fn(I, J, kappa) -> values``."""

    def __init__(self, fn, shape, nodes):
        super().__init__(shape, nodes)
        self.fn = fn

    def _rows(self, I):
        s = np.arange(self.shape[1])
        return np.stack([np.stack([self.fn(np.full(s.size, i), s, k) for k in self.nodes]) for i in I])

    def _cols(self, J):
        t = np.arange(self.shape[0])
        return np.stack([np.stack([self.fn(t, np.full(t.size, j), k) for k in self.nodes]) for j in J])

    def entries(self, I, J, kappa):
        return np.asarray(self.fn(np.asarray(I), np.asarray(J), float(kappa)), dtype=complex)


class KernelTensorGenerator(TensorGenerator):
    """Extracted (or plain) kernel block on all grid nodes."""

    def __init__(self, kernel, rows, cols, nodes, extracted=True):
        self.rows = np.ascontiguousarray(rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(cols, dtype=np.int64)
        super().__init__((self.rows.size, self.cols.size), nodes)
        self.kernel = kernel
        self.extracted = bool(extracted)
        self.entry_cost = float(kernel.q**4)

    def _rows(self, I):
        # (nS, len(I), #s) -> (len(I), nS, #s)
        return self.kernel.block(self.rows[I], self.cols, self.nodes, self.extracted).transpose(1, 0, 2)

    def _cols(self, J):
        return self.kernel.block(self.rows, self.cols[J], self.nodes, self.extracted).transpose(2, 0, 1)

    def entries(self, I, J, kappa):
        return self.kernel.entries(self.rows[np.asarray(I)], self.cols[np.asarray(J)], float(kappa), self.extracted)


# ---------------------------------------------------------------------------
# representation


@dataclass
class CompactBlockRep:
    """Compact representation ``{C, {X_k, Y_k}, {f_k}}`` of one block.

    Attributes
    ----------
    C : CoeffMatrix
    X, Y : list of ndarray
        ACA snapshot factors at ``kappas[k]``.
    traces : list of BarycentricRational
        ``f_k`` with ``f_k(kappas[k]) == 1``.
    trace_values : ndarray
        ``(R_T, nS)`` values of the traces on the grid nodes.
    pivots : ndarray
        ``(R_T, 3)`` rows of ``(i_k, j_k, node index)``.
    """

    block_id: int
    shape: tuple
    interval: tuple
    C: CoeffMatrix
    X: list
    Y: list
    kappas: np.ndarray
    traces: list
    trace_values: np.ndarray
    pivots: np.ndarray
    row_skeletons: list = field(default_factory=list)
    col_skeletons: list = field(default_factory=list)
    rank_cap_hit: bool = False
    eps_history: list = field(default_factory=list)

    @property
    def tensor_rank(self):
        return self.C.dim

    @property
    def ranks(self):
        return [x.shape[1] for x in self.X]

    @property
    def nbytes(self):
        """Payload bytes: snapshots, coefficients and traces (complex = 16 bytes)."""
        snaps = sum(16 * x.shape[1] * (x.shape[0] + y.shape[0]) for x, y in zip(self.X, self.Y))
        coeff = 16 * self.tensor_rank * (self.tensor_rank + 1) // 2
        traces = sum(8 * r.support.size + 32 * r.support.size for r in self.traces)
        return snaps + coeff + traces + 16 * self.trace_values.size

    def trace_vector(self, kappa):
        """``[f_1(kappa), ..., f_RT(kappa)]``."""
        return np.array([r(kappa) for r in self.traces], dtype=complex)

    def m_vector(self, kappa, warn=True):
        """``m = C f(kappa)``; the block at ``kappa`` is ``sum_k m_k X_k Y_k^T``."""
        kappa = float(kappa)
        if warn and not (self.interval[0] <= kappa <= self.interval[1]):
            warnings.warn(f"kappa={kappa} outside {self.interval}", ExtrapolationWarning, stacklevel=2)
        if self.tensor_rank == 0:
            return np.zeros(0, complex)
        return self.C.array @ self.trace_vector(kappa)

    def factor(self, kappa, warn=True):
        """The slice at ``kappa`` as one stacked low-rank factor."""
        m = self.m_vector(kappa, warn)
        if self.tensor_rank == 0:
            return LowRankFactor.zeros(*self.shape)
        X = np.hstack([mk * x for mk, x in zip(m, self.X)])
        Y = np.hstack(self.Y)
        return LowRankFactor(X, Y)

    def eval_entry(self, i, j, kappa, return_flag=False):
        """Value of the tensor approximant at ``(i, j, kappa)``.

        ``i`` and ``j`` may be arrays of equal length.  With
        ``return_flag=True`` returns ``(value, extrapolated)`` instead of
        warning.
        """
        out_of_range = not (self.interval[0] <= float(kappa) <= self.interval[1])
        m = self.m_vector(kappa, warn=not return_flag)
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        val = np.zeros(np.broadcast(i, j).shape, dtype=complex)
        for mk, x, y in zip(m, self.X, self.Y):
            val = val + mk * np.sum(x[i] * y[j], axis=-1)
        return (val, out_of_range) if return_flag else val

    def materialize_M(self, k):
        """Dense ``M_k`` (0-based ``k``); small blocks only."""
        c = self.C.array[: k + 1, k]
        return sum(c[nu] * (self.X[nu] @ self.Y[nu].T) for nu in range(k + 1))

    def to_dense(self, kappa):
        return self.factor(kappa).to_dense()


def _deflation_matrix(rep_X, rep_Y, C, idx, axis):
    """Rows (axis 0) or columns (axis 1) of all ``M_mu`` at ``idx``: ``(k, len)``."""
    if not rep_X:
        return None
    if axis == 0:
        G = np.stack([rep_Y[nu] @ rep_X[nu][idx] for nu in range(len(rep_X))])
    else:
        G = np.stack([rep_X[nu] @ rep_Y[nu][idx] for nu in range(len(rep_X))])
    # (M_mu)_row = sum_nu C[nu, mu] G[nu]
    return C.array.T @ G


@dataclass
class _BuildState:
    tgen: object
    grid: SampleGrid
    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    C: CoeffMatrix = field(default_factory=CoeffMatrix)
    fvals: list = field(default_factory=list)  # each (nS,)
    traces: list = field(default_factory=list)

    def F(self):
        return np.array(self.fvals) if self.fvals else np.zeros((0, len(self.grid)), complex)

    def residual_row(self, i):
        vals = self.tgen.row_all(i)  # (nS, #s)
        D = _deflation_matrix(self.X, self.Y, self.C, i, 0)
        return vals if D is None else vals - self.F().T @ D

    def residual_col(self, j):
        vals = self.tgen.col_all(j)
        D = _deflation_matrix(self.X, self.Y, self.C, j, 1)
        return vals if D is None else vals - self.F().T @ D

    def M_entries(self, k, I, J):
        """Entries of ``M_k`` at pairs ``(I, J)``; ``k`` is 0-based."""
        c = self.C.array[: k + 1, k]
        out = np.zeros(np.asarray(I).shape, dtype=complex)
        for nu in range(k + 1):
            out += c[nu] * np.einsum("ik,ik->i", self.X[nu][I], self.Y[nu][J])
        return out


def _skeleton_pivot(state, rows, cols):
    """Largest residual over skeleton rows/columns and all nodes; ties to the first."""
    best = (-1.0, None)
    for i in rows:
        R = state.residual_row(i)  # (nS, #s)
        a = np.abs(R)
        flat = int(np.argmax(a))
        if a.flat[flat] > best[0]:
            mk, j = np.unravel_index(flat, a.shape)
            best = (float(a.flat[flat]), (int(i), int(j), int(mk)))
    for j in cols:
        R = state.residual_col(j)  # (nS, #t)
        a = np.abs(R)
        flat = int(np.argmax(a))
        if a.flat[flat] > best[0]:
            mk, i = np.unravel_index(flat, a.shape)
            best = (float(a.flat[flat]), (int(i), int(j), int(mk)))
    return best


def _full_pivot(state):
    rows = range(state.tgen.shape[0])
    return _skeleton_pivot(state, rows, [])


def build_block(tgen, grid, tol=1e-4, max_tensor_rank=None, aca_tol=1e-5, aaa_tol=None,
                max_degree=DEFAULT_MAX_DEGREE, block_id=0, seed=0, norm_samples=None,
                exact_norm=False, search="skeleton", interval=None, counter=None):
    """Linear-time AAA-ACA for one admissible block.

    Parameters
    ----------
    tgen : TensorGenerator
        Block values on ``grid.nodes`` plus pointwise entries.
    grid : SampleGrid
    tol : float
        Stop once ``|f_k| |M_k|_{F,m} / (|f_1| |M_1|_F) <= tol``.
    max_tensor_rank : int, optional
        Cap on ``R_T``; default ``len(grid)``.  Hitting it sets
        ``rank_cap_hit``.
    aca_tol : float
        Tolerance of the per-node ACA+ snapshots.
    aaa_tol : float, optional
        AAA tolerance for the traces, default ``0.1 * tol``.
    norm_samples : int, optional
        Sample count for ``|M_k|_{F,m}``; default ``R_k (#t + #s)``.
    exact_norm : bool
        Use the exact Frobenius norm instead of sampling.
    search : {"skeleton", "full"}
        Pivot search space; "full" scans the whole block (small blocks).

    Returns
    -------
    CompactBlockRep
    """
    tol = check_tolerance(tol)
    aca_tol = check_tolerance(aca_tol, "aca_tol")
    aaa_tol = 0.1 * tol if aaa_tol is None else check_tolerance(aaa_tol, "aaa_tol")
    nS = len(grid)
    max_tensor_rank = nS if max_tensor_rank is None else check_int(max_tensor_rank, "max_tensor_rank", 1)
    if search not in ("skeleton", "full"):
        raise ValueError("search must be 'skeleton' or 'full'")
    t, s = tgen.shape
    rng = block_rng(seed, block_id)
    state = _BuildState(tgen, grid)
    piv, row_sk, col_sk, kap, eps_hist = [], [], [], [], []
    skel_rows, skel_cols = [t // 2], [s // 2]
    f1_norm = m1_norm = None
    cnt = counter if counter is not None else ACACounter()
    rank_cap = False

    while True:
        if len(piv) >= max_tensor_rank:
            rank_cap = True
            break
        if search == "skeleton":
            val, where = _skeleton_pivot(state, skel_rows, skel_cols)
        else:
            val, where = _full_pivot(state)
        if where is None or val == 0.0:
            break
        i_k, j_k, m_k = where
        # deflated trace at the pivot, normalised so that f_k(kappa_k) = 1
        v = state.residual_row(i_k)[:, j_k]
        g = v / v[m_k]
        r = aaa(grid.nodes, g, aaa_tol, max_degree, seed=m_k)
        fk = r(grid.nodes)
        fk[m_k] = 1.0
        snap = aca_plus(tgen.at_node(m_k), aca_tol, max_rank=min(t, s), counter=cnt)
        if state.fvals:
            state.C = coeff_update(state.C, state.F()[:, m_k])
        else:
            state.C = CoeffMatrix(np.ones((1, 1)))
        state.X.append(snap.X)
        state.Y.append(snap.Y)
        state.fvals.append(fk)
        state.traces.append(r)
        piv.append((i_k, j_k, m_k))
        kap.append(grid.nodes[m_k])
        row_sk.append(snap.row_pivots)
        col_sk.append(snap.col_pivots)
        k = len(piv) - 1
        # stopping estimate
        fnorm = grid.norm(fk)
        coeffs = state.C.array[: k + 1, k]
        if k == 0:
            f1_norm = fnorm
            m1_norm = lowrank_frobenius(state.X, state.Y, coeffs)
            mnorm = m1_norm
        elif exact_norm:
            mnorm = lowrank_frobenius(state.X, state.Y, coeffs)
        else:
            m = norm_samples if norm_samples is not None else max(snap.rank, 1) * (t + s)
            mnorm = norm_estimate(lambda I, J: state.M_entries(k, I, J), (t, s), m, rng)
        denom = f1_norm * m1_norm
        eps = fnorm * mnorm / denom if denom > 0 else 0.0
        eps_hist.append(eps)
        if eps <= tol:
            # like the terminating ACA cross, the term that meets the
            # tolerance is negligible and is dropped
            for lst in (state.X, state.Y, state.fvals, state.traces, piv, kap, row_sk, col_sk):
                lst.pop()
            state.C = CoeffMatrix(state.C.array[:k, :k])
            break
        if snap.rank:
            skel_rows, skel_cols = list(snap.row_pivots), list(snap.col_pivots)

    a, b = interval if interval is not None else (grid.a, grid.b)
    return CompactBlockRep(
        block_id=int(block_id),
        shape=(t, s),
        interval=(float(a), float(b)),
        C=state.C,
        X=state.X,
        Y=state.Y,
        kappas=np.array(kap, dtype=float),
        traces=state.traces,
        trace_values=np.array(state.fvals, dtype=complex).reshape(len(piv), nS),
        pivots=np.array(piv, dtype=np.int64).reshape(len(piv), 3),
        row_skeletons=row_sk,
        col_skeletons=col_sk,
        rank_cap_hit=rank_cap,
        eps_history=eps_hist,
    )


def naive_aaa_aca(tensor, grid, tol=1e-4, max_tensor_rank=None, aca_tol=1e-5, aaa_tol=None,
                  max_degree=DEFAULT_MAX_DEGREE):
    """Conceptual AAA-ACA on a dense ``(nS, #t, #s)`` tensor.

    Materialises every ``M_k``, searches the full residual and uses exact
    norms.  Returns ``(Ms, fvals, pivots)``; quadratic cost, for testing.
    """
    T = np.asarray(tensor, dtype=complex)
    nS, t, s = T.shape
    aaa_tol = 0.1 * tol if aaa_tol is None else aaa_tol
    max_tensor_rank = nS if max_tensor_rank is None else max_tensor_rank
    from .lowrank import DenseGenerator

    Ms, fs, piv = [], [], []
    m1 = f1 = None
    while len(Ms) < max_tensor_rank:
        resid = T - sum(np.multiply.outer(f, M) for M, f in zip(Ms, fs)) if Ms else T
        a = np.abs(resid)
        # same scan order as the skeleton search: row by row, node-major within a row
        flat = int(np.argmax(a.transpose(1, 0, 2).reshape(t, -1).ravel()))
        i_k, rem = divmod(flat, nS * s)
        m_k, j_k = divmod(rem, s)
        if a[m_k, i_k, j_k] == 0:
            break
        v = resid[:, i_k, j_k]
        r = aaa(grid.nodes, v / v[m_k], aaa_tol, max_degree, seed=m_k)
        fk = r(grid.nodes)
        fk[m_k] = 1.0
        snap = aca_plus(DenseGenerator(T[m_k]), aca_tol, max_rank=min(t, s))
        Mk = snap.to_dense() - sum(f[m_k] * M for M, f in zip(Ms, fs))
        Ms.append(Mk)
        fs.append(fk)
        piv.append((i_k, j_k, m_k))
        fn, mn = grid.norm(fk), np.linalg.norm(Mk)
        if m1 is None:
            f1, m1 = fn, mn
        if fn * mn / (f1 * m1) <= tol:
            Ms.pop()
            fs.pop()
            piv.pop()
            break
    return Ms, np.array(fs), np.array(piv, dtype=np.int64)


@dataclass
class CompactHRep:
    """Compact representations of a subset of admissible blocks."""

    blocks: dict
    grid: SampleGrid
    mesh_fingerprint: str = ""
    tree_fingerprint: str = ""
    kind: str = "slp"
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.blocks)

    @property
    def nbytes(self):
        return int(sum(b.nbytes for b in self.blocks.values()))

    def block_ids(self):
        return sorted(self.blocks)

    def summary(self):
        reps = [self.blocks[b] for b in self.block_ids()]
        rt = np.array([r.tensor_rank for r in reps], dtype=float)
        return {
            "n_blocks": len(reps),
            "memory_bytes": self.nbytes,
            "mean_tensor_rank": float(rt.mean()) if rt.size else 0.0,
            "max_tensor_rank": int(rt.max()) if rt.size else 0,
            "rank_cap_hits": int(sum(r.rank_cap_hit for r in reps)),
        }


def build_compact(kernel, block_tree, grid, tol=1e-4, aca_tol=1e-5, max_degree=DEFAULT_MAX_DEGREE,
                  blocks=None, seed=0, max_tensor_rank=None, aaa_tol=None, config=None, counter=None):
    """Compact representation of the extracted far field of ``kernel``.

    ``blocks`` restricts the build to a subset of admissible block ids.
    """
    from .clustering import tree_fingerprint

    keep = None if blocks is None else set(int(b) for b in blocks)
    reps = {}
    for b in block_tree.far_field():
        if keep is not None and b.id not in keep:
            continue
        tgen = KernelTensorGenerator(kernel, b.row.indices, b.col.indices, grid.nodes, extracted=True)
        reps[b.id] = build_block(tgen, grid, tol, max_tensor_rank, aca_tol, aaa_tol, max_degree,
                                 block_id=b.id, seed=seed, counter=counter)
        tgen.clear()
    return CompactHRep(reps, grid, kernel.mesh.fingerprint, tree_fingerprint(block_tree),
                       kernel.kind.value, dict(config or {}))


# ---------------------------------------------------------------------------
# container


def _w(fh, fmt, *vals):
    fh.write(struct.pack("<" + fmt, *vals))


def _warr(fh, arr, dtype):
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def serialize(rep, path):
    """Write a :class:`CompactHRep` to ``path``; returns the byte count."""
    cfg = json.dumps(rep.config, sort_keys=True).encode("utf-8")
    g = rep.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _w(fh, "I", VERSION)
        fh.write(rep.mesh_fingerprint.encode("ascii").ljust(32, b"\0")[:32])
        fh.write(rep.tree_fingerprint.encode("ascii").ljust(32, b"\0")[:32])
        fh.write(rep.kind.encode("ascii").ljust(4, b"\0")[:4])
        _w(fh, "ddQQ", g.a, g.b, len(g.nodes), len(g.heldout))
        _warr(fh, g.nodes, "<f8")
        _warr(fh, g.heldout, "<f8")
        _warr(fh, g.weights, "<f8")
        _w(fh, "Q", len(cfg))
        fh.write(cfg)
        _w(fh, "Q", len(rep.blocks))
        for bid in rep.block_ids():
            b = rep.blocks[bid]
            rt = b.tensor_rank
            _w(fh, "qQQQddB", b.block_id, b.shape[0], b.shape[1], rt, b.interval[0], b.interval[1],
               int(b.rank_cap_hit))
            iu = np.triu_indices(rt)
            _warr(fh, b.C.array[iu], "<c16")
            _warr(fh, b.kappas, "<f8")
            _warr(fh, b.pivots, "<i8")
            _w(fh, "Q", len(b.eps_history))
            _warr(fh, np.asarray(b.eps_history, float), "<f8")
            _warr(fh, b.trace_values, "<c16")
            for k in range(rt):
                x, y = b.X[k], b.Y[k]
                _w(fh, "QQ", x.shape[1], b.row_skeletons[k].size)
                _warr(fh, x, "<c16")
                _warr(fh, y, "<c16")
                _warr(fh, b.row_skeletons[k], "<i8")
                _warr(fh, b.col_skeletons[k], "<i8")
                r = b.traces[k]
                _w(fh, "Q", r.support.size)
                _warr(fh, r.support, "<f8")
                _warr(fh, r.values, "<c16")
                _warr(fh, r.weights, "<c16")
        return fh.tell()


class _R:
    def __init__(self, data):
        self.d = data
        self.p = 0

    def take(self, n):
        if self.p + n > len(self.d):
            raise CompactFormatError("container is truncated")
        out = self.d[self.p : self.p + n]
        self.p += n
        return out

    def u(self, fmt):
        st = struct.Struct("<" + fmt)
        return st.unpack(self.take(st.size))

    def a(self, dtype, n, shape=None):
        dt = np.dtype(dtype)
        arr = np.frombuffer(self.take(dt.itemsize * n), dtype=dt).copy()
        return arr.reshape(shape) if shape is not None else arr


def deserialize(path, mesh_fingerprint=None, tree_fingerprint=None):
    """Read a container; optional fingerprints must match the stored ones."""
    with open(path, "rb") as fh:
        r = _R(fh.read())
    if r.take(4) != MAGIC:
        raise CompactFormatError("bad magic: not a compact-representation container")
    (version,) = r.u("I")
    if version != VERSION:
        raise CompactFormatError(f"unsupported container version {version}")
    mfp = r.take(32).rstrip(b"\0").decode("ascii")
    tfp = r.take(32).rstrip(b"\0").decode("ascii")
    if mesh_fingerprint is not None and mfp != mesh_fingerprint:
        raise CompactFormatError("mesh fingerprint mismatch")
    if tree_fingerprint is not None and tfp != tree_fingerprint:
        raise CompactFormatError("block tree fingerprint mismatch")
    kind = r.take(4).rstrip(b"\0").decode("ascii")
    a, b, nn, nh = r.u("ddQQ")
    nodes, heldout, weights = r.a("<f8", nn), r.a("<f8", nh), r.a("<f8", nn)
    grid = SampleGrid.from_nodes(a, b, nodes, heldout, weights)
    (clen,) = r.u("Q")
    config = json.loads(r.take(clen).decode("utf-8"))
    (nb,) = r.u("Q")
    blocks = {}
    for _ in range(nb):
        bid, t, s, rt, ia, ib, cap = r.u("qQQQddB")
        C = np.zeros((rt, rt), dtype=complex)
        C[np.triu_indices(rt)] = r.a("<c16", rt * (rt + 1) // 2)
        kappas = r.a("<f8", rt)
        pivots = r.a("<i8", 3 * rt, (rt, 3))
        (neps,) = r.u("Q")
        eps = r.a("<f8", neps).tolist()
        tv = r.a("<c16", rt * nn, (rt, nn))
        X, Y, rs, cs, traces = [], [], [], [], []
        for _k in range(rt):
            rank, npiv = r.u("QQ")
            X.append(r.a("<c16", t * rank, (t, rank)))
            Y.append(r.a("<c16", s * rank, (s, rank)))
            rs.append(r.a("<i8", npiv))
            cs.append(r.a("<i8", npiv))
            (ns,) = r.u("Q")
            traces.append(BarycentricRational(r.a("<f8", ns), r.a("<c16", ns), r.a("<c16", ns)))
        blocks[bid] = CompactBlockRep(bid, (t, s), (ia, ib), CoeffMatrix(C), X, Y, kappas, traces, tv,
                                      pivots, rs, cs, bool(cap), eps)
    if r.p != len(r.d):
        raise CompactFormatError("trailing bytes after last block")
    return CompactHRep(blocks, grid, mfp, tfp, kind, config)


# ---------------------------------------------------------------------------
# estimator


class CompactRepresentation(BaseEstimator):
    """Estimator-style front end: ``fit(mesh)`` builds, ``predict(kappa)`` reconstructs.

    Wavenumber arguments are dimensional; ``interval`` defaults to the
    dimensionless range ``[10, 100]`` divided by the mesh diameter.
    """

    def __init__(self, kind="slp", interval=None, n_nodes=16, tol=1e-4, aca_tol=1e-5,
                 max_degree=DEFAULT_MAX_DEGREE, q=5, eta=2.0, adm="min", n_min=32, seed=0,
                 subset=None):
        self.kind = kind
        self.interval = interval
        self.n_nodes = n_nodes
        self.tol = tol
        self.aca_tol = aca_tol
        self.max_degree = max_degree
        self.q = q
        self.eta = eta
        self.adm = adm
        self.n_min = n_min
        self.seed = seed
        self.subset = subset

    def fit(self, mesh, y=None):
        from .clustering import build_block_tree, build_cluster_tree
        from .kernel import GalerkinKernel

        a, b = self.interval if self.interval is not None else (10 / mesh.diameter, 100 / mesh.diameter)
        self.grid_ = SampleGrid.chebyshev(a, b, self.n_nodes)
        tree = build_cluster_tree(mesh, self.n_min)
        self.block_tree_ = build_block_tree(tree, tree, self.eta, self.adm)
        self.kernel_ = GalerkinKernel(mesh, self.kind, self.q)
        self.mesh_ = mesh
        self.rep_ = build_compact(self.kernel_, self.block_tree_, self.grid_, self.tol, self.aca_tol,
                                  self.max_degree, blocks=self.subset, seed=self.seed,
                                  config=self.get_params())
        return self

    def predict(self, kappa, with_nearfield=False):
        from .reconstruct import reconstruct_hmatrix

        if not hasattr(self, "rep_"):
            raise RuntimeError("CompactRepresentation is not fitted yet")
        return reconstruct_hmatrix(self.rep_, self.mesh_, self.block_tree_, self.kind, kappa,
                                   self.aca_tol, with_nearfield=with_nearfield, kernel=self.kernel_)
