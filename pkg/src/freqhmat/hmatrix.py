"""Hierarchical matrices for the SLP/DLP and their frequency-extracted forms.

An :class:`HMatrix` stores one payload per leaf of a block partition: a dense
array on inadmissible leaves and a :class:`~freqhmat.lowrank.LowRankFactor`
on admissible ones.  Leaves refer to contiguous ranges of the row/column
cluster permutations, so the matrix is self-contained once built and can be
written to and read from a little-endian binary container.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import tree_fingerprint
from .kernel import GalerkinKernel, KernelKind
from .lowrank import ACACounter, KernelGenerator, LowRankFactor, aca_plus, default_max_rank, recompress
from .validation import check_kappa, check_tolerance, check_vector

MAGIC = b"HMAT"
VERSION = 1
DENSE_EXPORT_LIMIT = 4096


class HMatrixError(RuntimeError):
    """Assembly failure with the offending block id attached."""

    def __init__(self, block_id, cause):
        super().__init__(f"block {block_id}: {cause}")
        self.block_id = block_id


class ContainerError(ValueError):
    """Malformed, truncated or mismatched binary container."""


@dataclass
class Leaf:
    id: int
    rows: tuple  # (start, stop) in the row permutation
    cols: tuple
    admissible: bool
    level: int
    payload: object = None  # ndarray, LowRankFactor or None when omitted
    dense_fallback: bool = False

    @property
    def shape(self):
        return (self.rows[1] - self.rows[0], self.cols[1] - self.cols[0])

    @property
    def rank(self):
        return self.payload.rank if isinstance(self.payload, LowRankFactor) else None

    @property
    def nbytes(self):
        if self.payload is None:
            return 0
        if isinstance(self.payload, LowRankFactor):
            return self.payload.nbytes
        return 16 * self.payload.size

    def to_dense(self):
        p = self.payload
        return p.to_dense() if isinstance(p, LowRankFactor) else np.asarray(p)


@dataclass
class HMatrix:
    """Block-partitioned matrix with dense and low-rank leaves.

    Attributes
    ----------
    leaves : list of Leaf
        Leaf payloads in depth-first order of the block tree.
    row_perm, col_perm : ndarray
        Cluster permutations; leaf ``rows=(a, b)`` covers the matrix rows
        ``row_perm[a:b]``.
    extracted : bool
        If true, far-field payloads approximate the phase-free block and
        :meth:`entries` can re-attach the phase on read.
    centers : ndarray, optional
        Panel centroids used for the phases; required when ``extracted``.
    """

    leaves: list
    row_perm: np.ndarray
    col_perm: np.ndarray
    kind: KernelKind
    kappa: float
    extracted: bool = False
    centers: np.ndarray = None
    fingerprint: str = ""
    timings: dict = field(default_factory=dict)
    counter: ACACounter = field(default_factory=ACACounter)

    @property
    def shape(self):
        return (self.row_perm.shape[0], self.col_perm.shape[0])

    def far_leaves(self):
        return [lf for lf in self.leaves if lf.admissible]

    def near_leaves(self):
        return [lf for lf in self.leaves if not lf.admissible]

    def leaf(self, block_id):
        for lf in self.leaves:
            if lf.id == block_id:
                return lf
        raise KeyError(block_id)

    def leaf_indices(self, lf):
        return (self.row_perm[lf.rows[0] : lf.rows[1]], self.col_perm[lf.cols[0] : lf.cols[1]])

    # -- products and exports -------------------------------------------

    def matvec(self, v):
        """``A @ v`` in mesh ordering; leaves without payload are skipped.

        Extracted far-field leaves act as their phase-free payload, i.e. this
        is the product with the stored matrix, not with ``H o B-hat``.
        """
        v = check_vector(v, self.shape[1])
        out = np.zeros(self.shape[0], dtype=complex)
        for lf in self.leaves:
            if lf.payload is None:
                continue
            r, c = self.leaf_indices(lf)
            p = lf.payload
            out[r] += p.matvec(v[c]) if isinstance(p, LowRankFactor) else p @ v[c]
        return out

    def to_dense(self, force=False, with_phase=False):
        """Dense matrix in mesh ordering; refused above 4096 DOFs unless ``force``."""
        if max(self.shape) > DENSE_EXPORT_LIMIT and not force:
            raise ValueError(f"refusing dense export of {self.shape} (> {DENSE_EXPORT_LIMIT}); pass force=True")
        out = np.zeros(self.shape, dtype=complex)
        for lf in self.leaves:
            if lf.payload is None:
                continue
            r, c = self.leaf_indices(lf)
            blk = lf.to_dense()
            if with_phase and self.extracted and lf.admissible:
                blk = blk * self._phases(r, c)
            out[np.ix_(r, c)] = blk
        return out

    def _phases(self, r, c):
        if self.centers is None:
            raise ValueError("phases requested but the matrix carries no panel centres")
        d = np.linalg.norm(self.centers[r][:, None] - self.centers[c][None, :], axis=-1)
        return np.exp(1j * self.kappa * d)

    def block_entries(self, lf, li, lj, with_phase=False):
        """Entries of leaf ``lf`` at local positions ``(li, lj)``."""
        li = np.asarray(li, dtype=np.int64)
        lj = np.asarray(lj, dtype=np.int64)
        p = lf.payload
        vals = p.entries(li, lj) if isinstance(p, LowRankFactor) else np.asarray(p)[li, lj]
        if with_phase and self.extracted and lf.admissible:
            if self.centers is None:
                raise ValueError("phases requested but the matrix carries no panel centres")
            r, c = self.leaf_indices(lf)
            d = np.linalg.norm(self.centers[r[li]] - self.centers[c[lj]], axis=-1)
            vals = vals * np.exp(1j * self.kappa * d)
        return vals

    def entries(self, I, J, with_phase=False):
        """Entries at global index pairs, optionally with phases re-attached."""
        I = np.atleast_1d(np.asarray(I, dtype=np.int64))
        J = np.atleast_1d(np.asarray(J, dtype=np.int64))
        pr = np.empty_like(self.row_perm)
        pr[self.row_perm] = np.arange(pr.shape[0])
        pc = np.empty_like(self.col_perm)
        pc[self.col_perm] = np.arange(pc.shape[0])
        a, b = pr[I], pc[J]
        out = np.empty(I.shape[0], dtype=complex)
        for lf in self.leaves:
            m = (a >= lf.rows[0]) & (a < lf.rows[1]) & (b >= lf.cols[0]) & (b < lf.cols[1])
            if np.any(m):
                if lf.payload is None:
                    raise ValueError(f"leaf {lf.id} has no payload")
                out[m] = self.block_entries(lf, a[m] - lf.rows[0], b[m] - lf.cols[0], with_phase)
        return out

    def stats(self):
        return hmatrix_stats(self)

    def save(self, path):
        save_hmatrix(self, path)


# ---------------------------------------------------------------------------
# assembly


def _leaf_records(block_tree):
    out = []
    for b in block_tree.leaves():
        out.append(Leaf(b.id, (b.row.start, b.row.stop), (b.col.start, b.col.stop), b.admissible, b.row.level))
    return out


def assemble_nearfield(kernel, block_tree, kappa):
    """Dense payloads of all inadmissible leaves, keyed by block id."""
    out = {}
    for b in block_tree.near_field():
        try:
            out[b.id] = kernel.block(b.row.indices, b.col.indices, kappa)
        except Exception as exc:  # pragma: no cover - propagated with context
            raise HMatrixError(b.id, exc) from exc
    return out


def compress_block(kernel, block, kappa, tol, extracted, eps=None, max_rank=None, counter=None):
    """ACA+ plus recompression of one admissible block.

    Returns ``(payload, fallback)`` where ``fallback`` is true if the rank cap
    was hit and the block was assembled densely instead.
    """
    gen = KernelGenerator(kernel, block.row.indices, block.col.indices, kappa, extracted)
    if max_rank is None:
        max_rank = default_max_rank(gen.shape)
    f = aca_plus(gen, tol, max_rank=max_rank, counter=counter)
    if not f.converged:
        return kernel.block(block.row.indices, block.col.indices, kappa, extracted), True
    return recompress(f, tol * 1e-2 if eps is None else eps), False


def assemble(mesh, block_tree, kind="slp", kappa=1.0, tol=1e-5, extracted=False, q=5,
             eps=None, nearfield=True, kernel=None, near=None, blocks=None):
    """Assemble the (extracted) SLP or DLP as an H-matrix.

    Parameters
    ----------
    mesh : TriangleMesh
    block_tree : BlockNode
        Partition built over the mesh panels.
    kind : {"slp", "dlp"}
    kappa : float
        Wavenumber (not the dimensionless value).
    tol : float
        ACA+ tolerance.
    extracted : bool
        Compress the frequency-extracted far field.
    q : int
        Quadrature order.
    eps : float, optional
        Recompression tolerance, default ``1e-2 * tol``.
    nearfield : bool
        Assemble near-field leaves; when false they carry no payload.
    kernel : GalerkinKernel, optional
        Reuse an existing kernel (must match ``mesh``, ``kind`` and ``q``).
    near : dict, optional
        Precomputed near-field payloads from :func:`assemble_nearfield`,
        shared between plain and extracted assemblies at the same ``kappa``.
    blocks : iterable of int, optional
        Restrict far-field assembly to these admissible block ids.
    """
    kappa = float(check_kappa(kappa))
    tol = check_tolerance(tol)
    kernel = kernel if kernel is not None else GalerkinKernel(mesh, kind, q)
    if kernel.mesh is not mesh or kernel.kind is not KernelKind.parse(kind):
        raise ValueError("kernel does not match mesh/kind")
    leaves = _leaf_records(block_tree)
    nodes = {b.id: b for b in block_tree.leaves()}
    keep = None if blocks is None else set(int(b) for b in blocks)
    counter = ACACounter(entry_cost=float(kernel.q**4))
    timings = {"near": 0.0, "far": 0.0}

    t0 = time.perf_counter()
    if nearfield:
        near = near if near is not None else assemble_nearfield(kernel, block_tree, kappa)
        for lf in leaves:
            if not lf.admissible:
                lf.payload = near[lf.id]
    timings["near"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for lf in leaves:
        if not lf.admissible or (keep is not None and lf.id not in keep):
            continue
        try:
            lf.payload, lf.dense_fallback = compress_block(
                kernel, nodes[lf.id], kappa, tol, extracted, eps, counter=counter
            )
        except Exception as exc:
            raise HMatrixError(lf.id, exc) from exc
    timings["far"] = time.perf_counter() - t0

    return HMatrix(
        leaves,
        np.asarray(block_tree.row.perm),
        np.asarray(block_tree.col.perm),
        kernel.kind,
        kappa,
        bool(extracted),
        kernel.centers.copy(),
        tree_fingerprint(block_tree),
        timings,
        counter,
    )


# ---------------------------------------------------------------------------
# statistics


def hmatrix_stats(A):
    """Memory, rank and timing summary of an :class:`HMatrix`.

    Payload memory counts 16 bytes per stored complex number; index arrays
    (permutations, leaf table, pivots) are reported separately.
    """
    far = [lf for lf in A.far_leaves() if lf.payload is not None]
    near = [lf for lf in A.near_leaves() if lf.payload is not None]
    lowrank = [lf for lf in far if isinstance(lf.payload, LowRankFactor)]
    ranks = np.array([lf.rank for lf in lowrank], dtype=float)
    hist = {}
    for lf in lowrank:
        hist.setdefault(lf.level, []).append(lf.rank)
    index_bytes = 8 * (A.row_perm.size + A.col_perm.size) + 48 * len(A.leaves)
    index_bytes += sum(8 * (lf.payload.row_pivots.size + lf.payload.col_pivots.size) for lf in lowrank)
    return {
        "n_rows": int(A.shape[0]),
        "n_cols": int(A.shape[1]),
        "kind": A.kind.value,
        "kappa": A.kappa,
        "extracted": A.extracted,
        "memory_bytes": int(sum(lf.nbytes for lf in far) + sum(lf.nbytes for lf in near)),
        "farfield_bytes": int(sum(lf.nbytes for lf in far)),
        "nearfield_bytes": int(sum(lf.nbytes for lf in near)),
        "index_bytes": int(index_bytes),
        "n_far_blocks": len(far),
        "n_near_blocks": len(near),
        "n_dense_fallback": int(sum(lf.dense_fallback for lf in far)),
        "mean_rank": float(ranks.mean()) if ranks.size else 0.0,
        "max_rank": int(ranks.max()) if ranks.size else 0,
        "rank_histogram": {int(k): np.bincount(v).tolist() for k, v in sorted(hist.items())},
        "seconds_near": A.timings.get("near", 0.0),
        "seconds_far": A.timings.get("far", 0.0),
        "entry_count": int(A.counter.entries),
    }


# ---------------------------------------------------------------------------
# binary container

_HEADER = struct.Struct("<4sIBBdQQQ32s")
_LEAF = struct.Struct("<qQQQQBBBQ")


def save_hmatrix(A, path):
    """Write ``A`` to ``path`` (little-endian; complex values as float64 pairs)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0 if A.kind is KernelKind.SLP else 1, int(A.extracted),
                              A.kappa, A.shape[0], A.shape[1], len(A.leaves),
                              A.fingerprint.encode("ascii").ljust(32, b"\0")[:32]))
        fh.write(np.asarray(A.row_perm, dtype="<i8").tobytes())
        fh.write(np.asarray(A.col_perm, dtype="<i8").tobytes())
        has_centers = A.centers is not None
        fh.write(struct.pack("<B", int(has_centers)))
        if has_centers:
            fh.write(np.asarray(A.centers, dtype="<f8").tobytes())
        for lf in A.leaves:
            p = lf.payload
            ptype = 0 if p is None else (2 if isinstance(p, LowRankFactor) else 1)
            rank = p.rank if ptype == 2 else 0
            npiv = p.row_pivots.size if ptype == 2 else 0
            fh.write(_LEAF.pack(lf.id, *lf.rows, *lf.cols, int(lf.admissible), ptype,
                                int(lf.dense_fallback), rank))
            fh.write(struct.pack("<QQ", lf.level, npiv))
            if ptype == 1:
                fh.write(np.asarray(p, dtype="<c16").tobytes())
            elif ptype == 2:
                fh.write(np.asarray(p.X, dtype="<c16").tobytes())
                fh.write(np.asarray(p.Y, dtype="<c16").tobytes())
                fh.write(np.asarray(p.row_pivots, dtype="<i8").tobytes())
                fh.write(np.asarray(p.col_pivots, dtype="<i8").tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ContainerError("container is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def array(self, dtype, count, shape=None):
        dt = np.dtype(dtype)
        arr = np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()
        return arr.reshape(shape) if shape is not None else arr


def load_hmatrix(path, expected_fingerprint=None):
    """Read a container written by :func:`save_hmatrix`."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, version, kind, extracted, kappa, n, m, nleaves, fp = r.unpack(_HEADER)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    fp = fp.rstrip(b"\0").decode("ascii")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise ContainerError("container fingerprint does not match the block tree")
    row_perm = r.array("<i8", n)
    col_perm = r.array("<i8", m)
    (has_centers,) = r.unpack(struct.Struct("<B"))
    centers = r.array("<f8", 3 * n, (n, 3)) if has_centers else None
    leaves = []
    for _ in range(nleaves):
        bid, r0, r1, c0, c1, adm, ptype, fb, rank = r.unpack(_LEAF)
        level, npiv = r.unpack(struct.Struct("<QQ"))
        shape = (r1 - r0, c1 - c0)
        payload = None
        if ptype == 1:
            payload = r.array("<c16", shape[0] * shape[1], shape)
        elif ptype == 2:
            X = r.array("<c16", shape[0] * rank, (shape[0], rank))
            Y = r.array("<c16", shape[1] * rank, (shape[1], rank))
            payload = LowRankFactor(X, Y, r.array("<i8", npiv), r.array("<i8", npiv))
        leaves.append(Leaf(bid, (r0, r1), (c0, c1), bool(adm), level, payload, bool(fb)))
    if r.pos != len(r.data):
        raise ContainerError("trailing bytes after last leaf")
    return HMatrix(leaves, row_perm, col_perm, KernelKind.SLP if kind == 0 else KernelKind.DLP,
                   kappa, bool(extracted), centers, fp)
