import warnings

import numpy as np
import pytest

from freqhmat.clustering import build_block_tree, build_cluster_tree
from freqhmat.compact import CoeffMatrix, CompactBlockRep, CompactHRep, ExtrapolationWarning
from freqhmat.lowrank import ACACounter
from freqhmat.mesh import gen_blob
from freqhmat.metrics import KernelOracle
from freqhmat.reconstruct import (
    FingerprintMismatch,
    SliceGenerator,
    entry_bound,
    reconstruct_block,
    reconstruct_hmatrix,
)


def _grid_of(rep):
    return np.meshgrid(np.arange(rep.shape[0]), np.arange(rep.shape[1]), indexing="ij")


def test_slice_generator_rows_and_columns(compact_setup):
    *_, hrep = compact_setup
    rep = next(iter(hrep.blocks.values()))
    kappa = 0.5 * sum(rep.interval)
    gen = SliceGenerator(rep, kappa)
    D = rep.to_dense(kappa)
    assert np.allclose(gen.row(3), D[3], rtol=1e-13, atol=0)
    assert np.allclose(gen.col(2), D[:, 2], rtol=1e-13, atol=0)
    assert gen.stacked_rank == sum(rep.ranks) and not gen.extrapolated


def test_block_reconstruction_accuracy_and_cost(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    oracle = KernelOracle(K, bt)
    for bid, rep in hrep.blocks.items():
        for kappa in grid.heldout[::3]:
            cnt = ACACounter()
            f, aca_rank = reconstruct_block(rep, kappa, 1e-5, counter=cnt, full_output=True)
            D = rep.to_dense(kappa)
            assert np.linalg.norm(f.to_dense() - D) <= 1e-4 * np.linalg.norm(D)
            assert cnt.entries <= entry_bound(rep.shape, aca_rank)
            I, J = _grid_of(rep)
            ref = oracle(bid, I.ravel(), J.ravel(), kappa).reshape(rep.shape)
            assert np.linalg.norm(f.to_dense() - ref) <= 5e-4 * np.linalg.norm(ref)


def test_block_extrapolation_warns(compact_setup):
    *_, hrep = compact_setup
    rep = next(iter(hrep.blocks.values()))
    with pytest.warns(ExtrapolationWarning):
        reconstruct_block(rep, 2 * rep.interval[1])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        reconstruct_block(rep, rep.interval[0])


def test_zero_rank_block():
    rep = CompactBlockRep(0, (6, 4), (1.0, 2.0), CoeffMatrix(), [], [], np.zeros(0), [],
                          np.zeros((0, 16), complex), np.zeros((0, 3), np.int64))
    f = reconstruct_block(rep, 1.5)
    assert f.rank == 0 and np.all(f.to_dense() == 0)


def test_hmatrix_phases_and_report(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    kappa = float(grid.heldout[2])
    A = reconstruct_hmatrix(hrep, mesh, bt, "slp", kappa)
    assert A.extracted and A.centers is not None
    plain = KernelOracle(K, bt, extracted=False)
    for bid in hrep.block_ids():
        lf = A.leaf(bid)
        I, J = _grid_of(hrep.blocks[bid])
        got = A.block_entries(lf, I.ravel(), J.ravel(), with_phase=True)
        ref = plain(bid, I.ravel(), J.ravel(), kappa)
        assert np.linalg.norm(got - ref) <= 5e-4 * np.linalg.norm(ref)
    rpt = A.report.to_dict()
    assert rpt["n_blocks"] == len(hrep) and not rpt["extrapolated"]
    assert rpt["mean_rank"] > 0 and rpt["entries"] > 0
    # leaves outside the subset and the near field stay empty
    filled = [lf.id for lf in A.leaves if lf.payload is not None]
    assert sorted(filled) == hrep.block_ids()


def test_hmatrix_without_phase(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    A = reconstruct_hmatrix(hrep, mesh, bt, "slp", float(grid.heldout[0]), with_phase=False)
    lf = A.leaf(hrep.block_ids()[0])
    A.block_entries(lf, [0], [0])
    with pytest.raises(ValueError):
        A.block_entries(lf, [0], [0], with_phase=True)


def test_hmatrix_with_nearfield(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    kappa = float(grid.heldout[0])
    A = reconstruct_hmatrix(hrep, mesh, bt, "slp", kappa, with_nearfield=True, kernel=K)
    lf = A.near_leaves()[0]
    r, c = A.leaf_indices(lf)
    assert np.array_equal(lf.payload, K.block(r, c, kappa))
    assert A.report.seconds_near > 0


def test_hmatrix_extrapolation(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    with pytest.warns(ExtrapolationWarning):
        A = reconstruct_hmatrix(hrep, mesh, bt, "slp", 1.2 * grid.b)
    assert A.report.extrapolated


def test_fingerprint_checks(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    with pytest.raises(FingerprintMismatch):
        reconstruct_hmatrix(hrep, mesh, bt, "dlp", float(grid.heldout[0]))
    other = build_block_tree(bt.row, bt.col, 1.0, "min")
    with pytest.raises(FingerprintMismatch):
        reconstruct_hmatrix(hrep, mesh, other, "slp", float(grid.heldout[0]))
    blob = gen_blob(3)
    tb = build_cluster_tree(blob, 32)
    with pytest.raises(FingerprintMismatch):
        reconstruct_hmatrix(hrep, blob, build_block_tree(tb, tb), "slp", float(grid.heldout[0]))
    bad = CompactHRep(dict(hrep.blocks), hrep.grid, hrep.mesh_fingerprint, "0" * 32, "slp")
    with pytest.raises(FingerprintMismatch):
        reconstruct_hmatrix(bad, mesh, bt, "slp", float(grid.heldout[0]))


def test_entry_bound_formula():
    assert entry_bound((10, 20), 0) == 60
    assert entry_bound((10, 20), 4) == 14 * 30
