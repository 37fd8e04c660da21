"""Cluster trees, geometric admissibility and block cluster trees.

Clusters are built by recursive median bisection along the longest axis of
an axis-aligned bounding box.  Each node owns a contiguous slice of the tree
permutation, so the DOFs of a node are ``tree.perm[node.start:node.stop]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriangleMesh
from .validation import check_choice, check_int, check_positive

ADMISSIBLE = "admissible"
DENSE = "dense-leaf"
SUBDIVIDED = "subdivided"

VARIANTS = ("max", "min")


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("bounding box min corner exceeds max corner")

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def distance(self, other):
        gap = np.maximum(0.0, np.maximum(self.lo - other.hi, other.lo - self.hi))
        return float(np.linalg.norm(gap))

    @classmethod
    def from_extents(cls, lo, hi):
        return cls(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))


@dataclass(eq=False)
class ClusterNode:
    start: int
    stop: int
    bbox: BoundingBox
    level: int
    perm: np.ndarray = field(repr=False)
    children: tuple = ()
    id: int = -1

    @property
    def indices(self):
        return self.perm[self.start : self.stop]

    @property
    def size(self):
        return self.stop - self.start

    def __len__(self):
        return self.size

    @property
    def is_leaf(self):
        return not self.children

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self):
        return [n for n in self.walk() if n.is_leaf]

    @property
    def depth(self):
        return max(n.level for n in self.walk()) - self.level


def _geometry(obj):
    """Return centers plus per-item extents for panels, meshes or bare points."""
    if isinstance(obj, TriangleMesh):
        c = obj.corners
        return obj.centers, c.min(axis=1), c.max(axis=1)
    if isinstance(obj, (list, tuple)) and obj and hasattr(obj[0], "vertices"):
        c = np.stack([p.vertices for p in obj])
        return c.mean(axis=1), c.min(axis=1), c.max(axis=1)
    pts = np.asarray(obj, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected a mesh, a list of panels or an (n, 3) point array")
    return pts, pts, pts


def build_cluster_tree(items, n_min=32):
    """Binary geometric cluster tree.

    ``items`` may be a :class:`TriangleMesh`, a list of panels or an
    ``(n, 3)`` array of points.  Bounding boxes enclose the panel supports,
    so two clusters with a positive box gap never share a vertex.
    """
    centers, lo, hi = _geometry(items)
    n = centers.shape[0]
    if n == 0:
        raise ValueError("cannot cluster an empty set")
    n_min = check_int(n_min, "n_min", minimum=1)
    perm = np.arange(n)
    counter = [0]

    def make(start, stop, level):
        idx = perm[start:stop]
        box = BoundingBox(lo[idx].min(axis=0), hi[idx].max(axis=0))
        node = ClusterNode(start, stop, box, level, perm, id=counter[0])
        counter[0] += 1
        size = stop - start
        if size <= n_min:
            return node
        extent = box.hi - box.lo
        axis = int(np.argmax(extent))  # first maximal axis wins ties: x, y, z
        order = np.argsort(centers[idx, axis], kind="stable")
        perm[start:stop] = idx[order]
        mid = start + size // 2
        node.children = (make(start, mid, level + 1), make(mid, stop, level + 1))
        return node

    root = make(0, n, 0)
    perm.setflags(write=False)
    return root


def admissible(t, s, eta=2.0, variant="min"):
    """Geometric admissibility ``eta * dist(t, s) > max|min(diam t, diam s)``."""
    eta = check_positive(eta, "eta")
    check_choice(variant, VARIANTS, "variant")
    bt = t.bbox if hasattr(t, "bbox") else t
    bs = s.bbox if hasattr(s, "bbox") else s
    dist = bt.distance(bs)
    if dist == 0.0:
        return False
    pick = max if variant == "max" else min
    return eta * dist > pick(bt.diameter, bs.diameter)


@dataclass(eq=False)
class BlockNode:
    row: ClusterNode
    col: ClusterNode
    status: str
    children: tuple = ()
    id: int = -1

    @property
    def is_leaf(self):
        return self.status != SUBDIVIDED

    @property
    def admissible(self):
        return self.status == ADMISSIBLE

    @property
    def shape(self):
        return (self.row.size, self.col.size)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self):
        return [b for b in self.walk() if b.is_leaf]

    def far_field(self):
        return [b for b in self.leaves() if b.status == ADMISSIBLE]

    def near_field(self):
        return [b for b in self.leaves() if b.status == DENSE]

    def find(self, block_id):
        for b in self.walk():
            if b.id == block_id:
                return b
        raise KeyError(block_id)


def build_block_tree(row_tree, col_tree, eta=2.0, variant="min", n_min=None):
    """Block cluster tree over ``row_tree x col_tree``.

    A block becomes an admissible leaf when the admissibility predicate
    holds, a dense leaf when either cluster is a leaf of its tree (or when
    ``min(#t, #s) <= n_min``), and is subdivided into the four child pairs
    otherwise.  Leaf ids are assigned in depth-first order.
    """
    eta = check_positive(eta, "eta")
    check_choice(variant, VARIANTS, "variant")
    counter = [0]

    def make(t, s):
        node_id = counter[0]
        counter[0] += 1
        if admissible(t, s, eta, variant):
            return BlockNode(t, s, ADMISSIBLE, id=node_id)
        small = n_min is not None and min(t.size, s.size) <= n_min
        if t.is_leaf or s.is_leaf or small:
            return BlockNode(t, s, DENSE, id=node_id)
        node = BlockNode(t, s, SUBDIVIDED, id=node_id)
        node.children = tuple(make(tc, sc) for tc in t.children for sc in s.children)
        return node

    return make(row_tree, col_tree)


def partition_summary(block_tree):
    """JSON-ready list describing every leaf of the block partition."""
    out = []
    for b in block_tree.leaves():
        out.append(
            {
                "id": b.id,
                "rows": [b.row.start, b.row.stop],
                "cols": [b.col.start, b.col.stop],
                "admissible": b.admissible,
            }
        )
    return out


def dump_partition(block_tree, path):
    with open(path, "w") as fh:
        json.dump({"blocks": partition_summary(block_tree)}, fh, indent=1)


def tree_fingerprint(block_tree):
    """Hash of the leaf structure and permutations of a block tree."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(block_tree.row.perm, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(block_tree.col.perm, dtype="<i8").tobytes())
    for b in block_tree.leaves():
        h.update(
            np.array(
                [b.id, b.row.start, b.row.stop, b.col.start, b.col.stop, b.admissible],
                dtype="<i8",
            ).tobytes()
        )
    return h.hexdigest()[:32]
