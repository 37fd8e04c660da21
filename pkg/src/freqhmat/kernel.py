"""Helmholtz kernels and Galerkin entries for piecewise-constant elements.

The matrix entry for row panel ``i`` and column panel ``j`` is

    B_ij = int_{tau_i} int_{tau_j} b(x, y) dS_x dS_y,

with ``y`` on the row panel and ``x`` on the column panel.  For the
double-layer kernel the normal derivative acts on ``x``, so the normal of the
column panel enters.  Far-field entries may be frequency extracted, i.e.
multiplied by ``exp(-i kappa |xi_i - xi_j|)`` with the panel centroids ``xi``.
"""

from __future__ import annotations

import enum
import math

import numba
import numpy as np

from .mesh import Panel, TriangleMesh
from .quadrature import COINCIDENT, EDGE, VERTEX, get_rule
from .validation import check_kappa, check_points

FOUR_PI = 4.0 * math.pi


class KernelKind(str, enum.Enum):
    SLP = "slp"
    DLP = "dlp"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"kernel kind must be 'slp' or 'dlp', got {value!r}") from None


class CoincidentPointError(ValueError):
    """Raised when a point kernel is evaluated at ``x == y``."""


def _distance(x, y):
    x = check_points(x, "x")
    y = check_points(y, "y")
    d = x - y
    r = np.sqrt(np.einsum("ij,ij->i", d, d))
    if np.any(r == 0.0):
        raise CoincidentPointError("kernel is singular at x == y")
    return d, r


def _squeeze(val, *args):
    return val[0] if all(np.ndim(a) == 1 for a in args) else val


def green(x, y, kappa):
    """Helmholtz fundamental solution ``exp(i kappa r) / (4 pi r)``.

    Points may be single 3-vectors or ``(n, 3)`` arrays.
    """
    kappa = float(check_kappa(kappa))
    _, r = _distance(x, y)
    return _squeeze(np.exp(1j * kappa * r) / (FOUR_PI * r), x, y)


def green_dnx(x, y, kappa, nx):
    """Normal derivative of :func:`green` with respect to ``x`` along ``nx``."""
    kappa = float(check_kappa(kappa))
    d, r = _distance(x, y)
    n = check_points(nx, "nx")
    dn = np.einsum("ij,ij->i", d, np.broadcast_to(n, d.shape))
    val = np.exp(1j * kappa * r) * (1j * kappa * r - 1.0) * dn / (FOUR_PI * r**3)
    return _squeeze(val, x, y)


def _center(p):
    return np.asarray(p.center if isinstance(p, Panel) else p, dtype=float)


def phase(i, j, kappa):
    """Extraction phase ``exp(i kappa |xi_i - xi_j|)`` for two panels or centroids."""
    kappa = float(check_kappa(kappa))
    d = float(np.linalg.norm(_center(i) - _center(j)))
    return complex(np.exp(1j * kappa * d))


# ---------------------------------------------------------------------------
# compiled core


@numba.njit(cache=True, nogil=True)
def _relation(vids, i, j, pos_i, pos_j):
    """Number of shared vertex ids; fills the matching local positions.

    Shared vertices are listed by ascending id so both orderings of a pair
    see the same parametrisation.
    """
    n = 0
    for a in range(3):
        for b in range(3):
            if vids[i, a] == vids[j, b]:
                k = n
                while k > 0 and vids[i, pos_i[k - 1]] > vids[i, a]:
                    pos_i[k] = pos_i[k - 1]
                    pos_j[k] = pos_j[k - 1]
                    k -= 1
                pos_i[k] = a
                pos_j[k] = b
                n += 1
    return n


@numba.njit(cache=True, nogil=True)
def _reorder(corners, p, shared, n, out):
    """Copy corners of panel ``p`` with shared vertices first, others after."""
    used = np.zeros(3, dtype=np.bool_)
    for k in range(n):
        out[k, :] = corners[p, shared[k], :]
        used[shared[k]] = True
    k = n
    for a in range(3):
        if not used[a]:
            out[k, :] = corners[p, a, :]
            k += 1


@numba.njit(cache=True, nogil=True)
def _accumulate(acc, kappas, dlp, w, d0, d1, d2, nx):
    r2 = d0 * d0 + d1 * d1 + d2 * d2
    r = math.sqrt(r2)
    if dlp:
        dn = d0 * nx[0] + d1 * nx[1] + d2 * nx[2]
        base = w * dn / (FOUR_PI * r2 * r)
        for m in range(kappas.shape[0]):
            kr = kappas[m] * r
            c = math.cos(kr)
            s = math.sin(kr)
            # exp(i kr) * (i kr - 1)
            acc[m] += base * complex(-c - kr * s, kr * c - s)
    else:
        base = w / (FOUR_PI * r)
        for m in range(kappas.shape[0]):
            kr = kappas[m] * r
            acc[m] += base * complex(math.cos(kr), math.sin(kr))


@numba.njit(cache=True, nogil=True)
def _regular_single(qp, qw, i, j, kappa, dlp, nx):
    """Scalar-accumulator fast path for one wavenumber."""
    nq = qp.shape[1]
    ar = 0.0
    ai = 0.0
    for a in range(nq):
        x0 = qp[j, a, 0]
        x1 = qp[j, a, 1]
        x2 = qp[j, a, 2]
        wa = qw[j, a]
        for b in range(nq):
            d0 = x0 - qp[i, b, 0]
            d1 = x1 - qp[i, b, 1]
            d2 = x2 - qp[i, b, 2]
            r2 = d0 * d0 + d1 * d1 + d2 * d2
            r = math.sqrt(r2)
            kr = kappa * r
            c = math.cos(kr)
            s = math.sin(kr)
            if dlp:
                base = wa * qw[i, b] * (d0 * nx[0] + d1 * nx[1] + d2 * nx[2]) / (r2 * r)
                ar += base * (-c - kr * s)
                ai += base * (kr * c - s)
            else:
                base = wa * qw[i, b] / r
                ar += base * c
                ai += base * s
    return complex(ar, ai) / FOUR_PI


@numba.njit(cache=True, nogil=True)
def _eval_pairs(I, J, kappas, dlp, extract, qp, qw, normals, corners, vids, twoa,
                centers, rx, ry, rw, roff, out):
    nk = kappas.shape[0]
    nq = qp.shape[1]
    acc = np.zeros(nk, dtype=np.complex128)
    pos_i = np.zeros(3, dtype=np.int64)
    pos_j = np.zeros(3, dtype=np.int64)
    ci = np.zeros((3, 3))
    cj = np.zeros((3, 3))
    d = np.zeros(3)
    for p in range(I.shape[0]):
        i = I[p]
        j = J[p]
        acc[:] = 0.0
        nx = normals[j]
        rel = _relation(vids, i, j, pos_i, pos_j)
        if rel == 0 and nk == 1:
            acc[0] = _regular_single(qp, qw, i, j, kappas[0], dlp, nx)
        elif rel == 0:
            for a in range(nq):
                x0 = qp[j, a, 0]
                x1 = qp[j, a, 1]
                x2 = qp[j, a, 2]
                wa = qw[j, a]
                for b in range(nq):
                    _accumulate(acc, kappas, dlp, wa * qw[i, b],
                                x0 - qp[i, b, 0], x1 - qp[i, b, 1], x2 - qp[i, b, 2], nx)
        else:
            _reorder(corners, i, pos_i, rel, ci)
            _reorder(corners, j, pos_j, rel, cj)
            scale = twoa[i] * twoa[j]
            # the reference x-rule goes to the panel with the larger index, so
            # (i, j) and (j, i) use the same node pairs and the SLP stays symmetric
            ra, rb = (rx, ry) if i <= j else (ry, rx)
            for t in range(roff[rel - 1], roff[rel]):
                # x on column panel j, y on row panel i
                xs0 = ra[t, 0]
                xs1 = ra[t, 1]
                ys0 = rb[t, 0]
                ys1 = rb[t, 1]
                for c in range(3):
                    xc = cj[0, c] + xs0 * (cj[1, c] - cj[0, c]) + xs1 * (cj[2, c] - cj[1, c])
                    yc = ci[0, c] + ys0 * (ci[1, c] - ci[0, c]) + ys1 * (ci[2, c] - ci[1, c])
                    d[c] = xc - yc
                _accumulate(acc, kappas, dlp, scale * rw[t], d[0], d[1], d[2], nx)
        if extract:
            e0 = centers[i, 0] - centers[j, 0]
            e1 = centers[i, 1] - centers[j, 1]
            e2 = centers[i, 2] - centers[j, 2]
            dij = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
            for m in range(nk):
                kd = kappas[m] * dij
                acc[m] *= complex(math.cos(kd), -math.sin(kd))
        for m in range(nk):
            out[p, m] = acc[m]


@numba.njit(cache=True, nogil=True)
def _eval_block(rows, cols, kappas, dlp, extract, qp, qw, normals, corners, vids, twoa,
                centers, rx, ry, rw, roff, out):
    nr = rows.shape[0]
    nc = cols.shape[0]
    I = np.empty(nc, dtype=np.int64)
    tmp = np.empty((nc, kappas.shape[0]), dtype=np.complex128)
    for a in range(nr):
        I[:] = rows[a]
        _eval_pairs(I, cols, kappas, dlp, extract, qp, qw, normals, corners, vids, twoa,
                    centers, rx, ry, rw, roff, tmp)
        for b in range(nc):
            for m in range(kappas.shape[0]):
                out[m, a, b] = tmp[b, m]


# ---------------------------------------------------------------------------
# panel-set wrapper


class _PanelSet:
    """Quadrature data for a list of triangles, laid out for the compiled core."""

    def __init__(self, corners, normals, vids, rule):
        corners = np.ascontiguousarray(corners, dtype=float)
        pts = rule.points
        e1 = corners[:, 1] - corners[:, 0]
        e2 = corners[:, 2] - corners[:, 1]
        self.qp = np.ascontiguousarray(
            corners[:, None, 0] + pts[None, :, :1] * e1[:, None] + pts[None, :, 1:2] * e2[:, None]
        )
        self.twoa = np.linalg.norm(np.cross(e1, e2), axis=1)
        self.qw = np.ascontiguousarray(self.twoa[:, None] * rule.weights[None, :])
        self.normals = np.ascontiguousarray(normals, dtype=float)
        self.corners = corners
        self.vids = np.ascontiguousarray(vids, dtype=np.int64)
        self.centers = np.ascontiguousarray(corners.mean(axis=1))
        sing = rule.singular
        self.rx = np.ascontiguousarray(np.concatenate([sing[r][0] for r in (VERTEX, EDGE, COINCIDENT)]))
        self.ry = np.ascontiguousarray(np.concatenate([sing[r][1] for r in (VERTEX, EDGE, COINCIDENT)]))
        self.rw = np.ascontiguousarray(np.concatenate([sing[r][2] for r in (VERTEX, EDGE, COINCIDENT)]))
        sizes = [sing[r][2].shape[0] for r in (VERTEX, EDGE, COINCIDENT)]
        self.roff = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    def args(self):
        return (self.qp, self.qw, self.normals, self.corners, self.vids, self.twoa,
                self.centers, self.rx, self.ry, self.rw, self.roff)


def _kappa_array(kappa):
    k = np.atleast_1d(check_kappa(kappa)).astype(float)
    if k.ndim != 1:
        raise ValueError("kappa must be a scalar or a 1D array")
    return np.ascontiguousarray(k)


class GalerkinKernel:
    """Galerkin entries of the SLP or DLP on a triangle mesh.

    Parameters
    ----------
    mesh : TriangleMesh
        Surface mesh; panel ``n`` is matrix index ``n``.
    kind : {"slp", "dlp"}
        Single- or double-layer kernel.
    q : int, default 5
        Gauss order per direction; regular pairs use ``q**4`` point pairs.

    Attributes
    ----------
    entry_count : int
        Number of (entry, wavenumber) evaluations performed so far.
    """

    def __init__(self, mesh, kind="slp", q=5):
        if not isinstance(mesh, TriangleMesh):
            raise TypeError("mesh must be a TriangleMesh")
        self.mesh = mesh
        self.kind = KernelKind.parse(kind)
        self.rule = get_rule(q)
        self.q = self.rule.q
        self._data = _PanelSet(mesh.corners, mesh.normals, mesh.triangles, self.rule)
        self.entry_count = 0

    @property
    def n(self):
        return self.mesh.n_panels

    @property
    def centers(self):
        return self._data.centers

    def entries(self, rows, cols, kappa, extracted=False):
        """Entries at index pairs ``(rows[p], cols[p])``.

        Returns shape ``(n,)`` for scalar ``kappa`` and ``(n, len(kappa))``
        otherwise.  ``extracted=True`` applies the extraction phase to every
        pair, so callers pass far-field pairs only.
        """
        I = np.ascontiguousarray(rows, dtype=np.int64).ravel()
        J = np.ascontiguousarray(cols, dtype=np.int64).ravel()
        if I.shape != J.shape:
            raise ValueError("rows and cols must have the same length")
        self._check_index(I)
        self._check_index(J)
        k = _kappa_array(kappa)
        out = np.empty((I.shape[0], k.shape[0]), dtype=np.complex128)
        _eval_pairs(I, J, k, self.kind is KernelKind.DLP, bool(extracted), *self._data.args(), out)
        self.entry_count += out.size
        return out[:, 0] if np.ndim(kappa) == 0 else out

    def block(self, rows, cols, kappa, extracted=False):
        """Dense sub-block ``B[rows][:, cols]``; shape ``(len(kappa), nr, nc)`` for array kappa."""
        r = np.ascontiguousarray(rows, dtype=np.int64).ravel()
        c = np.ascontiguousarray(cols, dtype=np.int64).ravel()
        self._check_index(r)
        self._check_index(c)
        k = _kappa_array(kappa)
        out = np.empty((k.shape[0], r.shape[0], c.shape[0]), dtype=np.complex128)
        _eval_block(r, c, k, self.kind is KernelKind.DLP, bool(extracted), *self._data.args(), out)
        self.entry_count += out.size
        return out[0] if np.ndim(kappa) == 0 else out

    def dense(self, kappa, extracted=False):
        """Full matrix in mesh ordering; only sensible for small meshes."""
        idx = np.arange(self.n)
        return self.block(idx, idx, kappa, extracted)

    def phases(self, rows, cols, kappa):
        """Extraction phases ``exp(i kappa |xi_i - xi_j|)`` for a block."""
        c = self._data.centers
        d = np.linalg.norm(c[np.asarray(rows)][:, None] - c[np.asarray(cols)][None, :], axis=-1)
        return np.exp(1j * float(check_kappa(kappa)) * d)

    def _check_index(self, idx):
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError(f"panel index out of range [0, {self.n})")

    def __reduce__(self):
        return (GalerkinKernel, (self.mesh, self.kind.value, self.q))


def _pair_set(pi, pj, rule):
    """Two-panel set with vertex ids derived from coincident coordinates."""
    corners = np.stack([pi.vertices, pj.vertices]).astype(float)
    pts = corners.reshape(-1, 3)
    _, ids = np.unique(pts, axis=0, return_inverse=True)
    ids = ids.reshape(2, 3)
    normals = np.stack([pi.normal, pj.normal])
    return _PanelSet(corners, normals, ids, rule)


def _single_entry(pi, pj, kind, kappa, rule, extracted):
    rule = get_rule(5) if rule is None else (rule if hasattr(rule, "singular") else get_rule(rule))
    kind = KernelKind.parse(kind)
    # keep the relative index order of the panels so results match mesh assembly
    flip = pi.index > pj.index
    ps = _pair_set(pj, pi, rule) if flip else _pair_set(pi, pj, rule)
    k = _kappa_array(kappa)
    out = np.empty((1, k.shape[0]), dtype=np.complex128)
    I = np.full(1, int(flip), dtype=np.int64)
    J = np.full(1, 1 - int(flip), dtype=np.int64)
    _eval_pairs(I, J, k, kind is KernelKind.DLP, extracted, *ps.args(), out)
    return out[0, 0] if np.ndim(kappa) == 0 else out[0]


def entry(i, j, kind, kappa, rule=None):
    """Galerkin entry for row panel ``i`` and column panel ``j``.

    ``rule`` may be a :class:`~freqhmat.quadrature.QuadratureRule`, an order
    ``q`` or ``None`` (q = 5).  Pair topology is detected from shared vertex
    coordinates.
    """
    return _single_entry(i, j, kind, kappa, rule, False)


def extracted_entry(i, j, kind, kappa, rule=None, far_field=True):
    """Frequency-extracted entry; near-field pairs (``far_field=False``) are unchanged."""
    return _single_entry(i, j, kind, kappa, rule, bool(far_field))
