"""AAA rational approximation of scalar traces on a wavenumber grid.

Functions of the wavenumber are stored as vectors of their values on a
:class:`SampleGrid`; a :class:`BarycentricRational` is their continuous
extension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from .validation import check_int, check_positive

DEFAULT_NODES = 16
DEFAULT_HELDOUT = 7
DEFAULT_MAX_DEGREE = 8


def chebyshev_nodes(a, b, n=DEFAULT_NODES):
    """Open (first-kind) Chebyshev points mapped to ``(a, b)``, ascending."""
    n = check_int(n, "n", minimum=1)
    theta = (2 * np.arange(n, 0, -1) - 1) * np.pi / (2 * n)
    return 0.5 * (a + b) + 0.5 * (b - a) * np.cos(theta)


def fejer_weights(a, b, n=DEFAULT_NODES):
    """Fejer's first rule on the nodes of :func:`chebyshev_nodes`."""
    theta = (2 * np.arange(n, 0, -1) - 1) * np.pi / (2 * n)
    j = np.arange(1, n // 2 + 1)
    s = np.cos(2 * np.outer(theta, j)) / (4 * j**2 - 1)
    return 0.5 * (b - a) * (2.0 / n) * (1 - 2 * s.sum(axis=1))


@dataclass(frozen=True)
class SampleGrid:
    """Interval ``[a, b]`` with sample nodes and disjoint held-out nodes.

    Parameters
    ----------
    a, b : float
        Interval ends, ``a < b``.
    nodes : array_like, optional
        Sample nodes; default 16 open Chebyshev points.
    heldout : array_like, optional
        Test nodes; default 7 equispaced interior points, nudged off ``nodes``.
    """

    a: float
    b: float
    nodes: np.ndarray
    heldout: np.ndarray
    weights: np.ndarray

    @classmethod
    def chebyshev(cls, a, b, n=DEFAULT_NODES, n_heldout=DEFAULT_HELDOUT, heldout=None):
        a, b = float(a), float(b)
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError(f"need finite a < b, got [{a}, {b}]")
        nodes = chebyshev_nodes(a, b, n)
        if heldout is None:
            heldout = a + (b - a) * np.arange(1, n_heldout + 1) / (n_heldout + 1)
            spacing = np.min(np.diff(nodes)) if n > 1 else b - a
            for k, x in enumerate(heldout):
                if np.min(np.abs(nodes - x)) < 1e-3 * spacing:
                    heldout[k] = x + 0.25 * spacing
        return cls.from_nodes(a, b, nodes, heldout, fejer_weights(a, b, n))

    @classmethod
    def from_nodes(cls, a, b, nodes, heldout=(), weights=None):
        nodes = np.asarray(nodes, dtype=float)
        heldout = np.asarray(heldout, dtype=float)
        if nodes.ndim != 1 or nodes.size < 1:
            raise ValueError("nodes must be a non-empty 1D array")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be sorted and distinct")
        if nodes[0] <= a or nodes[-1] >= b:
            raise ValueError("nodes must lie strictly inside (a, b)")
        if np.intersect1d(nodes, heldout).size:
            raise ValueError("held-out nodes must be disjoint from the sample nodes")
        if weights is None:
            weights = np.full(nodes.size, (b - a) / nodes.size)
        for arr in (nodes, heldout):
            arr.setflags(write=False)
        w = np.asarray(weights, dtype=float)
        w.setflags(write=False)
        return cls(float(a), float(b), nodes, heldout, w)

    def __len__(self):
        return self.nodes.size

    def norm(self, values):
        """Weighted discrete 2-norm ``sqrt(sum_k w_k |f(kappa_k)|^2)``."""
        v = np.asarray(values)
        return float(np.sqrt(np.dot(self.weights, np.abs(v) ** 2)))

    def contains(self, kappa):
        return self.a <= kappa <= self.b

    def scaled(self, factor):
        """Same grid with every abscissa multiplied by ``factor``."""
        return SampleGrid(self.a * factor, self.b * factor, self.nodes * factor,
                          self.heldout * factor, self.weights * factor)


@dataclass(frozen=True)
class BarycentricRational:
    """``r(z) = sum_j w_j f_j / (z - z_j) / sum_j w_j / (z - z_j)``."""

    support: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @property
    def degree(self):
        return max(self.support.size - 1, 0)

    @classmethod
    def constant(cls, z0, value):
        return cls(np.array([float(z0)]), np.array([complex(value)]), np.array([1.0 + 0j]))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        zz = np.atleast_1d(z)
        if self.support.size == 1:
            out = np.full(zz.shape, self.values[0], dtype=complex)
            return out[0] if z.ndim == 0 else out
        diff = zz[:, None] - self.support[None, :]
        exact = diff == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            c = self.weights[None, :] / diff
            out = (c @ self.values) / c.sum(axis=1)
        rows, cols = np.nonzero(exact)
        out[rows] = self.values[cols]
        return out[0] if z.ndim == 0 else out

    def poles(self, interval=None):
        """Poles via the barycentric generalized eigenproblem.

        Returns ``(poles, flagged)``; ``flagged[k]`` marks a pole whose real
        part lies in ``interval`` with ``|imag| < (b - a) * 1e-6``.
        """
        m = self.support.size
        if m <= 1:
            return np.zeros(0, complex), np.zeros(0, bool)
        E = np.zeros((m + 1, m + 1), dtype=complex)
        E[0, 1:] = self.weights
        E[1:, 0] = 1.0
        E[1:, 1:] = np.diag(self.support)
        B = np.eye(m + 1)
        B[0, 0] = 0.0
        ev = scipy.linalg.eigvals(E, B)
        ev = ev[np.isfinite(ev)]
        ev = ev[np.argsort(ev.real)]
        if interval is None:
            return ev, np.zeros(ev.size, bool)
        a, b = interval
        flag = (ev.real >= a) & (ev.real <= b) & (np.abs(ev.imag) < (b - a) * 1e-6)
        return ev, flag


@dataclass(frozen=True)
class AAAResult:
    rational: BarycentricRational
    errors: np.ndarray  # max residual on the grid after each step
    converged: bool


def aaa(z, f, tol=1e-13, max_degree=DEFAULT_MAX_DEGREE, seed=None, full_output=False):
    """Greedy AAA approximation of samples ``f`` at points ``z``.

    Parameters
    ----------
    z, f : array_like
        Sample points and complex values, at least two.
    tol : float
        Stop once ``max |f - r| <= tol * max |f|`` on ``z``.
    max_degree : int
        At most ``max_degree + 1`` support points.
    seed : int, optional
        Index of a sample forced to be the first support point, so that
        ``r(z[seed]) == f[seed]`` exactly.
    full_output : bool
        Return an :class:`AAAResult` with the residual history.
    """
    z = np.asarray(z, dtype=float).ravel()
    f = np.asarray(f, dtype=complex).ravel()
    if z.size != f.size or z.size < 2:
        raise ValueError("need at least two samples with matching z and f")
    if not np.all(np.isfinite(f)):
        raise ValueError("sample values must be finite")
    tol = check_positive(tol, "tol")
    max_degree = check_int(max_degree, "max_degree", minimum=0)
    fmax = np.max(np.abs(f))
    if fmax == 0.0:
        r = BarycentricRational.constant(z[0 if seed is None else seed], 0.0)
        return AAAResult(r, np.zeros(1), True) if full_output else r

    n = z.size
    support = np.zeros(n, dtype=bool)
    order = []
    R = np.full(n, f.mean())
    errors = []
    w = np.ones(1, dtype=complex)
    converged = False
    for it in range(min(max_degree + 1, n)):
        if it == 0 and seed is not None:
            j = int(seed)
        else:
            res = np.abs(f - R)
            res[support] = -1.0
            j = int(np.argmax(res))
        support[j] = True
        order.append(j)
        zs, fs = z[order], f[order]
        free = ~support
        if not np.any(free):
            w = _weights_from_loewner(np.zeros((0, len(order)), complex), len(order))
            R = f.copy()
        else:
            C = 1.0 / (z[free, None] - zs[None, :])
            L = (f[free, None] - fs[None, :]) * C
            w = _weights_from_loewner(L, len(order))
            R = f.copy()
            R[free] = (C @ (w * fs)) / (C @ w)
        err = float(np.max(np.abs(f - R)))
        errors.append(err)
        if err <= tol * fmax:
            converged = True
            break

    zs, fs = z[order], f[order]
    # drop support points that carry no weight; the seed is always kept
    wabs = np.abs(w)
    keep = wabs > 1e-13 * wabs.max()
    if seed is not None:
        keep[0] = True
    r = BarycentricRational(zs[keep].copy(), fs[keep].copy(), w[keep].copy())
    if full_output:
        return AAAResult(r, np.asarray(errors), converged)
    return r


def _weights_from_loewner(L, m):
    if L.shape[0] < m:
        # fewer constraints than unknowns: pad so the SVD exposes a null vector
        L = np.vstack([L, np.zeros((m - L.shape[0], m), dtype=complex)])
    _, _, vh = np.linalg.svd(L)
    return vh[-1].conj()


class AAA(BaseEstimator):
    """Estimator wrapper around :func:`aaa`.

    ``fit(z, f)`` stores ``rational_``; ``predict(z)`` evaluates it.
    """

    def __init__(self, tol=1e-13, max_degree=DEFAULT_MAX_DEGREE):
        self.tol = tol
        self.max_degree = max_degree

    def fit(self, z, f):
        res = aaa(z, f, self.tol, self.max_degree, full_output=True)
        self.rational_ = res.rational
        self.errors_ = res.errors
        self.converged_ = res.converged
        self.degree_ = res.rational.degree
        return self

    def predict(self, z):
        if not hasattr(self, "rational_"):
            raise RuntimeError("AAA instance is not fitted yet")
        return self.rational_(z)
