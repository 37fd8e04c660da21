import json

import numpy as np
import pytest

from freqhmat.clustering import build_block_tree, build_cluster_tree
from freqhmat.mesh import gen_sphere
from freqhmat.metrics import (
    KernelOracle,
    err_f,
    err_inf,
    error_report,
    nlogn_fit,
    ratio_trend,
    subset_blocks,
    time_call,
)


class _Block:
    """Smooth synthetic block ``cos(i + 2j) * kappa`` standing in for a compact rep."""

    def __init__(self, shape, phase=0.0):
        self.shape = shape
        self.phase = phase
        self.ranks = [2, 1]

    def eval_entry(self, I, J, kappa):
        return np.cos(np.asarray(I) + 2 * np.asarray(J) + self.phase) * kappa + 0j


BLOCKS = {3: _Block((12, 9)), 7: _Block((8, 15), 0.4)}
SSTAR = [1.5, 2.5]


def _scaled(delta):
    return lambda bid, I, J, k: (1 + delta) * BLOCKS[bid].eval_entry(I, J, k)


def test_exact_oracle_gives_zero():
    assert err_f(BLOCKS, _scaled(0.0), Sstar=SSTAR) == 0.0
    assert err_inf(BLOCKS, _scaled(0.0), Sstar=SSTAR) == 0.0


@pytest.mark.parametrize("delta", [1e-3, 0.2])
def test_scaled_oracle(delta):
    # approximant = oracle / (1 + delta): both errors equal delta / (1 + delta)
    rpt = error_report(BLOCKS, _scaled(delta), Sstar=SSTAR)
    assert rpt.err_f == pytest.approx(delta / (1 + delta), rel=1e-12)
    assert rpt.err_inf == pytest.approx(delta / (1 + delta), rel=1e-12)


def test_full_sampling_matches_dense_norm():
    def oracle(bid, I, J, k):
        return BLOCKS[bid].eval_entry(I, J, k) + 1e-3 * (np.asarray(I) == 0)

    rpt = error_report(BLOCKS, oracle, Sstar=SSTAR, m=10**6)
    num = den = 0.0
    for bid, b in BLOCKS.items():
        I, J = np.meshgrid(np.arange(b.shape[0]), np.arange(b.shape[1]), indexing="ij")
        I, J = I.ravel(), J.ravel()
        for k in SSTAR:
            ref = oracle(bid, I, J, k)
            num += np.sum(np.abs(b.eval_entry(I, J, k) - ref) ** 2)
            den += np.sum(np.abs(ref) ** 2)
    assert rpt.err_f == pytest.approx(np.sqrt(num / den), rel=1e-12)
    assert all(r.m == BLOCKS[r.block_id].shape[0] * BLOCKS[r.block_id].shape[1] for r in rpt.blocks)


def test_default_sample_count_and_determinism():
    oracle = _scaled(0.01)
    a = error_report(BLOCKS, lambda *x: oracle(*x) + 1e-4j, Sstar=SSTAR, seed=4)
    b = error_report(BLOCKS, lambda *x: oracle(*x) + 1e-4j, Sstar=SSTAR, seed=4)
    assert a.to_dict() == b.to_dict()
    assert {r.block_id: r.m for r in a.blocks} == {3: 2 * 21, 7: 2 * 23}


def test_subset_and_errors():
    rpt = error_report(BLOCKS, _scaled(0.1), A=[7], Sstar=SSTAR)
    assert rpt.block_ids == [7]
    with pytest.raises(ValueError):
        error_report(BLOCKS, _scaled(0.1), A=[], Sstar=SSTAR)
    with pytest.raises(ValueError):
        error_report(BLOCKS, _scaled(0.1), Sstar=[])
    with pytest.raises(ValueError):
        error_report(BLOCKS, _scaled(0.1))


def test_heldout_must_avoid_nodes(compact_setup):
    *_, grid, hrep = compact_setup
    with pytest.raises(ValueError):
        error_report(hrep, lambda *a: 0, Sstar=[grid.nodes[0]])


def test_kernel_oracle(compact_setup):
    mesh, bt, K, grid, hrep = compact_setup
    bid = hrep.block_ids()[0]
    b = bt.find(bid)
    kappa = float(grid.heldout[1])
    ext = KernelOracle(K, bt)(bid, [0, 1], [2, 0], kappa)
    ref = K.block(b.row.indices, b.col.indices, kappa, extracted=True)
    assert np.array_equal(ext, ref[[0, 1], [2, 0]])
    rpt = error_report(hrep, KernelOracle(K, bt))
    assert 0 < rpt.err_f < 5e-4 and 0 < rpt.err_inf < 5e-3


def test_report_json(tmp_path):
    rpt = error_report(BLOCKS, _scaled(0.1), Sstar=SSTAR)
    rpt.to_json(tmp_path / "e.json", mesh="synthetic")
    d = json.loads((tmp_path / "e.json").read_text())
    assert d["mesh"] == "synthetic" and d["err_f"] == rpt.err_f and len(d["blocks"]) == 2


def test_subset_blocks():
    m = gen_sphere(2)
    t = build_cluster_tree(m, 16)
    bt = build_block_tree(t, t)
    ids = sorted(b.id for b in bt.far_field())
    assert subset_blocks(bt) == ids
    sub = subset_blocks(bt, 0.25, seed=3)
    assert sub == subset_blocks(bt, 0.25, seed=3)
    assert len(sub) == round(0.25 * len(ids)) and set(sub) <= set(ids)
    assert len(subset_blocks(bt, 1e-9)) == 1
    with pytest.raises(ValueError):
        subset_blocks(bt, 0.0)


def test_nlogn_fit_and_ratios():
    n = np.array([320, 1280, 5120, 20480])
    c, dev = nlogn_fit(n, 3e-6 * n * np.log(n))
    assert c == pytest.approx(3e-6) and dev < 1e-12
    _, dev = nlogn_fit(n, n**2.0)
    assert dev > 0.5
    assert ratio_trend([1, 2, 3]) == [2.0, 1.5]
    with pytest.raises(ValueError):
        nlogn_fit([1], [1])


def test_time_call():
    calls = []
    out, t = time_call(lambda: calls.append(1) or len(calls), repeats=3)
    assert out == 3 and len(t.samples) == 3 and t.median >= 0
    assert set(t.to_dict()) == {"median", "mean", "samples"}
