"""Quadrature rules on the reference triangle and for singular panel pairs.

The reference triangle is ``{(x1, x2): 0 <= x2 <= x1 <= 1}`` with the affine
map ``chi(x) = P0 + x1 (P1 - P0) + x2 (P2 - P1)``; its Jacobian is twice the
panel area.  Regular pairs use the Duffy-collapsed tensor Gauss rule on each
panel.  Coincident, edge-adjacent and vertex-adjacent pairs use the
Sauter-Schwab relative-coordinate transformations of the 4D cube, which
cancel the ``1/r`` singularity with the Jacobian.

For edge-adjacent pairs both panels must be ordered so that the shared edge
is ``P0 -> P1``; for vertex-adjacent pairs the shared vertex must be ``P0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .validation import check_int

REGULAR, VERTEX, EDGE, COINCIDENT = 0, 1, 2, 3
RELATIONS = {REGULAR: "regular", VERTEX: "vertex", EDGE: "edge", COINCIDENT: "coincident"}


def gauss_legendre_01(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(q):
    """Collapsed tensor Gauss rule with ``q**2`` nodes; weights sum to 1/2."""
    x, w = gauss_legendre_01(q)
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.stack([u.ravel(), (u * v).ravel()], axis=1)
    wts = (wu * wv * u).ravel()
    return pts, wts


def _cube(q):
    x, w = gauss_legendre_01(q)
    grids = np.meshgrid(x, x, x, x, indexing="ij")
    wgrid = np.meshgrid(w, w, w, w, indexing="ij")
    xi, e1, e2, e3 = (g.ravel() for g in grids)
    wt = np.prod([g.ravel() for g in wgrid], axis=0)
    return xi, e1, e2, e3, wt


def _stack(regions):
    xs, ys, ws = zip(*regions)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def _pt(a, b):
    return np.stack([a, b], axis=1)


def coincident_rule(q):
    xi, e1, e2, e3, w = _cube(q)
    jac = w * xi**3 * e1**2 * e2
    regions = [
        (_pt(xi, xi * (1 - e1 + e1 * e2)), _pt(xi * (1 - e1 * e2 * e3), xi * (1 - e1))),
        (_pt(xi * (1 - e1 * e2 * e3), xi * (1 - e1)), _pt(xi, xi * (1 - e1 + e1 * e2))),
        (_pt(xi, xi * e1 * (1 - e2 + e2 * e3)), _pt(xi * (1 - e1 * e2), xi * e1 * (1 - e2))),
        (_pt(xi * (1 - e1 * e2), xi * e1 * (1 - e2)), _pt(xi, xi * e1 * (1 - e2 + e2 * e3))),
        (_pt(xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), _pt(xi, xi * e1 * (1 - e2))),
        (_pt(xi, xi * e1 * (1 - e2)), _pt(xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))),
    ]
    return _stack([(a, b, jac) for a, b in regions])


def edge_rule(q):
    xi, e1, e2, e3, w = _cube(q)
    j1 = w * xi**3 * e1**2
    j2 = j1 * e2
    regions = [
        (_pt(xi, xi * e1 * e3), _pt(xi * (1 - e1 * e2), xi * e1 * (1 - e2)), j1),
        (_pt(xi, xi * e1), _pt(xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), j2),
        (_pt(xi * (1 - e1 * e2), xi * e1 * (1 - e2)), _pt(xi, xi * e1 * e2 * e3), j2),
        (_pt(xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), _pt(xi, xi * e1), j2),
        (_pt(xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), _pt(xi, xi * e1 * e2), j2),
    ]
    return _stack(regions)


def vertex_rule(q):
    xi, e1, e2, e3, w = _cube(q)
    jac = w * xi**3 * e2
    regions = [
        (_pt(xi, xi * e1), _pt(xi * e2, xi * e2 * e3), jac),
        (_pt(xi * e2, xi * e2 * e3), _pt(xi, xi * e1), jac),
    ]
    return _stack(regions)


@dataclass(frozen=True)
class QuadratureRule:
    """Order-``q`` rules for regular and singular panel pairs.

    ``singular[rel]`` holds ``(x_ref, y_ref, weights)`` for the 4D rule of
    relation ``rel``; weights include the transformation Jacobians, and the
    integral over ``K x K`` of a constant is 1/4.
    """

    q: int
    points: np.ndarray
    weights: np.ndarray
    singular: dict

    @property
    def n_pairs(self):
        return self.points.shape[0] ** 2


@lru_cache(maxsize=None)
def get_rule(q=5):
    q = check_int(q, "q", minimum=1)
    pts, wts = triangle_rule(q)
    for arr in (pts, wts):
        arr.setflags(write=False)
    singular = {}
    for rel, fn in ((COINCIDENT, coincident_rule), (EDGE, edge_rule), (VERTEX, vertex_rule)):
        xs, ys, ws = (np.ascontiguousarray(a) for a in fn(q))
        for arr in (xs, ys, ws):
            arr.setflags(write=False)
        singular[rel] = (xs, ys, ws)
    return QuadratureRule(q, pts, wts, singular)


def map_to_panel(corners, ref):
    """Map reference points ``ref`` (n, 2) onto a panel with ``corners`` (3, 3)."""
    p0, p1, p2 = corners
    return p0 + ref[:, :1] * (p1 - p0) + ref[:, 1:2] * (p2 - p1)
