"""Sampled error norms of compact representations and run statistics.

For a block subset ``A`` and held-out wavenumbers ``S*`` the relative errors
are ::

    Err_F^2  = sum_{kappa, b} |E_b(kappa)|_{F,m}^2 / sum_{kappa, b} |B_b(kappa)|_{F,m}^2
    Err_inf  = max_{kappa, b} |E_b(kappa)|_{max,m} / max_{kappa, b} |B_b(kappa)|_{max,m}

where ``|.|_{F,m}`` is the Frobenius norm estimated from ``m`` uniformly
sampled entries and ``|.|_{max,m}`` the largest sampled modulus.  The same
pairs are used for every wavenumber of a block.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .compact import block_rng, sample_pairs


class KernelOracle:
    """Reference entries by quadrature, block-local indexing.

    ``oracle(block_id, I, J, kappa)`` returns the (extracted) kernel values at
    local positions ``(I, J)`` of the admissible block ``block_id``.
    """

    def __init__(self, kernel, block_tree, extracted=True):
        self.kernel = kernel
        self.extracted = bool(extracted)
        self._blocks = {b.id: b for b in block_tree.far_field()}

    def __call__(self, block_id, I, J, kappa):
        b = self._blocks[block_id]
        return self.kernel.entries(b.row.indices[np.asarray(I)], b.col.indices[np.asarray(J)],
                                   float(kappa), self.extracted)


@dataclass
class BlockError:
    block_id: int
    shape: tuple
    m: int
    sq_err: float  # sampled squared error, summed over kappa
    sq_norm: float
    max_err: float
    max_norm: float


@dataclass
class ErrorReport:
    """Err_F, Err_inf and their per-block contributions."""

    err_f: float
    err_inf: float
    blocks: list = field(default_factory=list)
    kappas: list = field(default_factory=list)

    @property
    def block_ids(self):
        return [b.block_id for b in self.blocks]

    def to_dict(self, **meta):
        out = dict(meta)
        out.update({
            "err_f": self.err_f,
            "err_inf": self.err_inf,
            "kappas": [float(k) for k in self.kappas],
            "blocks": [dict(asdict(b), shape=list(b.shape)) for b in self.blocks],
        })
        return out

    def to_json(self, path=None, **meta):
        text = json.dumps(self.to_dict(**meta), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _blocks_of(hrep):
    return hrep.blocks if hasattr(hrep, "blocks") else hrep


def _default_m(rep):
    ranks = getattr(rep, "ranks", None) or [1]
    return max(max(ranks), 1) * (rep.shape[0] + rep.shape[1])


def error_report(hrep, oracle, A=None, Sstar=None, m=None, seed=0):
    """Sampled ``Err_F`` and ``Err_inf`` of ``hrep`` against ``oracle``.

    Parameters
    ----------
    hrep : CompactHRep or mapping
        Block id to an object with ``shape`` and ``eval_entry(I, J, kappa)``.
    oracle : callable
        ``oracle(block_id, I, J, kappa)``, e.g. a :class:`KernelOracle`.
    A : iterable of int, optional
        Block subset; default every block of ``hrep``.
    Sstar : array_like, optional
        Held-out wavenumbers; default ``hrep.grid.heldout``.  Must not meet
        the sample nodes.
    m : int or callable, optional
        Samples per block; default ``R_k (#t + #s)`` with ``R_k`` the largest
        snapshot rank of the block.  Values at or above ``#t #s`` use every
        entry.
    seed : int
        Sample pairs are drawn from ``block_rng(seed, block_id)``.
    """
    blocks = _blocks_of(hrep)
    A = sorted(blocks) if A is None else sorted(int(b) for b in A)
    grid = getattr(hrep, "grid", None)
    if Sstar is None:
        if grid is None:
            raise ValueError("Sstar is required when hrep carries no sample grid")
        Sstar = grid.heldout
    Sstar = np.atleast_1d(np.asarray(Sstar, dtype=float))
    if not A:
        raise ValueError("block subset A is empty")
    if Sstar.size == 0:
        raise ValueError("held-out wavenumber set is empty")
    if grid is not None and np.intersect1d(Sstar, grid.nodes).size:
        raise ValueError("held-out wavenumbers must not contain sample nodes")

    records = []
    for bid in A:
        rep = blocks[bid]
        t, s = rep.shape
        mb = _default_m(rep) if m is None else (m(rep) if callable(m) else int(m))
        I, J = sample_pairs((t, s), mb, block_rng(seed, bid))
        scale = t * s / I.shape[0]
        sq_err = sq_norm = max_err = max_norm = 0.0
        for kappa in Sstar:
            ref = np.asarray(oracle(bid, I, J, kappa))
            approx = np.asarray(rep.eval_entry(I, J, kappa))
            d = np.abs(approx - ref)
            r = np.abs(ref)
            sq_err += scale * float(np.sum(d**2))
            sq_norm += scale * float(np.sum(r**2))
            max_err = max(max_err, float(d.max()))
            max_norm = max(max_norm, float(r.max()))
        records.append(BlockError(int(bid), (int(t), int(s)), int(I.shape[0]), sq_err, sq_norm,
                                  max_err, max_norm))

    total = sum(b.sq_norm for b in records)
    top = max(b.max_norm for b in records)
    err_f = float(np.sqrt(sum(b.sq_err for b in records) / total)) if total > 0 else 0.0
    err_inf = max(b.max_err for b in records) / top if top > 0 else 0.0
    return ErrorReport(err_f, float(err_inf), records, Sstar.tolist())


def err_f(hrep, oracle, A=None, Sstar=None, m=None, seed=0):
    """Sampled relative Frobenius error; see :func:`error_report`."""
    return error_report(hrep, oracle, A, Sstar, m, seed).err_f


def err_inf(hrep, oracle, A=None, Sstar=None, m=None, seed=0):
    """Sampled relative max-norm error; see :func:`error_report`."""
    return error_report(hrep, oracle, A, Sstar, m, seed).err_inf


def subset_blocks(block_tree, fraction=1.0, seed=0):
    """Seeded uniform subset of admissible block ids, at least one block."""
    ids = np.array(sorted(b.id for b in block_tree.far_field()), dtype=np.int64)
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1 or ids.size == 0:
        return ids.tolist()
    k = max(1, int(round(fraction * ids.size)))
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(ids, size=k, replace=False).tolist())


# ---------------------------------------------------------------------------
# run statistics


@dataclass
class Timing:
    median: float
    mean: float
    samples: list

    def to_dict(self):
        return {"median": self.median, "mean": self.mean, "samples": list(self.samples)}


def time_call(fn, repeats=5):
    """Run ``fn`` ``repeats`` times; returns ``(last result, Timing)``."""
    samples, out = [], None
    for _ in range(max(int(repeats), 1)):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    return out, Timing(statistics.median(samples), statistics.fmean(samples), samples)


def nlogn_fit(n, y):
    """Least-squares ``y ~ c N log N``.

    Returns ``(c, deviation)`` with ``deviation`` the largest pointwise
    relative deviation ``|y - c N log N| / (c N log N)``.
    """
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    if n.shape != y.shape or n.size < 2:
        raise ValueError("need at least two (N, y) pairs")
    basis = n * np.log(n)
    c = float(basis @ y / (basis @ basis))
    model = c * basis
    return c, float(np.max(np.abs(y - model) / model))


def ratio_trend(values):
    """Successive ratios ``values[k+1] / values[k]``."""
    v = np.asarray(values, dtype=float)
    return (v[1:] / v[:-1]).tolist()
