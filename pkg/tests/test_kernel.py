import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from freqhmat.kernel import (
    CoincidentPointError,
    GalerkinKernel,
    KernelKind,
    entry,
    extracted_entry,
    green,
    green_dnx,
    phase,
)
from oracles import brute_force_pair

T1 = [(0, 0, 0), (1, 0, 0), (0, 1, 0)]
T_EDGE = [(0, 0, 0), (1, 0, 0), (0.3, -0.8, 0)]
T_VERTEX = [(0, 0, 0), (-1, -0.2, 0), (-0.4, -1, 0)]

# int int 1/(4 pi r) over coplanar pairs with T1; closed-form inner potential
# integrated by adaptive scipy quadrature (tests/oracles.py), frozen here.
SELF_T1 = 0.07982144690424856
EDGE_T1 = 0.02871699929512022
VERTEX_T1 = 0.01759025299414724

# mpmath at 40 digits: exp(i 12.5 * 0.37) / (4 pi 0.37)
GREEN_REF = complex(-0.01877120578825432032, -0.21425352677883993901)


def test_green_trivial_values():
    x, y = np.zeros(3), np.array([1.0, 0, 0])
    assert abs(green(x, y, 1e-9) - 1 / (4 * np.pi)) < 1e-9
    v = green(x, y, np.pi)
    assert abs(v.real + 1 / (4 * np.pi)) < 1e-15 and abs(v.imag) < 1e-15


def test_green_high_precision():
    v = green(np.zeros(3), np.array([0.0, 0.37, 0.0]), 12.5)
    assert abs(v - GREEN_REF) / abs(GREEN_REF) < 1e-14


def test_green_vectorised_and_errors():
    x = np.random.default_rng(0).normal(size=(5, 3))
    y = x + 1.0
    v = green(x, y, 2.0)
    assert v.shape == (5,)
    with pytest.raises(CoincidentPointError):
        green(x, x, 1.0)
    with pytest.raises(ValueError):
        green(x, y, -1.0)
    with pytest.raises(CoincidentPointError):
        green_dnx(x[0], x[0], 1.0, [0, 0, 1])


def test_green_dnx_trivial_values():
    x, y = np.array([1.0, 0, 0]), np.zeros(3)
    assert abs(green_dnx(x, y, 3.0, [0, 1, 0])) == 0.0
    assert abs(green_dnx(x, y, 1e-9, [1, 0, 0]) + 1 / (4 * np.pi)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_green_dnx_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=3), rng.normal(size=3)
    if np.linalg.norm(x - y) < 0.2:
        y = x + 0.5
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    h = 1e-5
    fd = (green(x + h * n, y, 7.0) - green(x - h * n, y, 7.0)) / (2 * h)
    ex = green_dnx(x, y, 7.0, n)
    assert abs(fd - ex) <= 1e-6 * max(abs(ex), abs(green(x, y, 7.0)))


def test_phase():
    p = make_panel(T1)
    assert phase(p, p, 3.0) == 1.0
    assert abs(phase(np.zeros(3), np.array([1.0, 0, 0]), np.pi) + 1) < 1e-15
    z = phase(np.zeros(3), np.array([0.3, 0.4, 2.0]), 4.2)
    assert abs(z * z.conjugate() - 1) < 1e-15


def test_far_tiny_panels_match_midpoint_limit():
    s = 1e-2
    a = make_panel(np.array(T1) * s)
    b = make_panel(np.array(T_EDGE) * s + [0.5, 1.0, -0.3])
    e = entry(a, b, "slp", 6.0)
    mid = a.area * b.area * green(a.center, b.center, 6.0)
    assert abs(e - mid) / abs(mid) < 1e-3
    ex = extracted_entry(a, b, "slp", 6.0)
    d = np.linalg.norm(a.center - b.center)
    assert abs(ex - a.area * b.area / (4 * np.pi * d)) / abs(ex) < 1e-3
    assert abs(ex.imag) / abs(ex) < 1e-4


def test_coplanar_dlp_vanishes():
    a, b = make_panel(T1), make_panel(np.array(T_EDGE) + [3.0, 0.5, 0.0])
    assert abs(entry(a, b, "dlp", 2.0)) < 1e-16
    assert abs(entry(a, make_panel(T_EDGE), "dlp", 2.0)) < 1e-16
    assert abs(entry(a, a, "dlp", 2.0)) < 1e-16


@pytest.mark.parametrize(
    "tri,ref",
    [(T1, SELF_T1), (T_EDGE, EDGE_T1), (T_VERTEX, VERTEX_T1)],
    ids=["coincident", "edge", "vertex"],
)
def test_singular_pairs_match_inverse_distance_oracle(tri, ref):
    a, b = make_panel(T1), make_panel(tri)
    assert abs(entry(a, b, "slp", 1e-9, 5).real - ref) / ref < 1e-3
    assert abs(entry(a, b, "slp", 1e-9, 8).real - ref) / ref < 1e-6
    assert abs(entry(b, a, "slp", 1e-9, 8).real - ref) / ref < 1e-6


def test_singular_pairs_independent_of_vertex_order():
    # bent edge-adjacent pair and vertex pair out of plane
    a = np.array(T1, float)
    b = np.array([(0, 0, 0), (1, 0, 0), (0.4, -0.5, 0.6)])
    c = np.array([(0, 0, 0), (-0.7, 0.2, 0.4), (-0.3, -0.9, -0.2)])
    for other in (b, c):
        ref = entry(make_panel(a), make_panel(other), "dlp", 3.0, 10)
        for perm in ([1, 2, 0], [2, 0, 1]):
            v = entry(make_panel(a[perm]), make_panel(other[perm]), "dlp", 3.0, 10)
            assert abs(v - ref) / abs(ref) < 1e-7


def test_separated_pair_against_brute_force():
    a = np.array(T1, float)
    b = np.array(T_EDGE) + [0.4, 1.9, 0.7]
    nb = np.cross(b[1] - b[0], b[2] - b[0])
    nb /= np.linalg.norm(nb)
    k = 5.0

    def slp(y, x):
        r = np.linalg.norm(x - y, axis=-1)
        return np.exp(1j * k * r) / (4 * np.pi * r)

    def dlp(y, x):
        d = x - y
        r = np.linalg.norm(d, axis=-1)
        return np.exp(1j * k * r) * (1j * k * r - 1) * (d @ nb) / (4 * np.pi * r**3)

    for kind, fn in (("slp", slp), ("dlp", dlp)):
        ref = brute_force_pair(a, b, fn, n=20)
        v = entry(make_panel(a), make_panel(b), kind, k, 6)
        assert abs(v - ref) / abs(ref) < 1e-6


def test_extraction_properties():
    a, b = make_panel(T1), make_panel(np.array(T_EDGE) + [2, 1, 0.5])
    for kind in ("slp", "dlp"):
        e = entry(a, b, kind, 9.0)
        ex = extracted_entry(a, b, kind, 9.0)
        assert abs(abs(ex) - abs(e)) <= 1e-14 * abs(e)
        assert abs(phase(a, b, 9.0) * ex - e) <= 1e-14 * abs(e)
        assert extracted_entry(a, b, kind, 9.0, far_field=False) == e


def test_quadrature_convergence_monotone():
    a, b = make_panel(T1), make_panel(np.array(T_EDGE) * 0.6 + [0.5, 1.4, 0.3])
    diffs = [abs(entry(a, b, "slp", 0.4, q) - entry(a, b, "slp", 0.4, q + 4)) for q in (2, 4, 6, 8)]
    assert all(d1 > d2 for d1, d2 in zip(diffs, diffs[1:]))


def test_kernel_kind_parse():
    assert KernelKind.parse("SLP") is KernelKind.SLP
    assert KernelKind.parse(KernelKind.DLP) is KernelKind.DLP
    with pytest.raises(ValueError):
        KernelKind.parse("hyper")


class TestGalerkinKernel:
    def test_slp_symmetric(self, sphere1):
        A = GalerkinKernel(sphere1, "slp", q=4).dense(3.0)
        assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()

    def test_dlp_gauss_identity(self, sphere1):
        # int_Gamma dG0/dn_x dS_x = -1/2 on a closed surface with outward normals
        D = GalerkinKernel(sphere1, "dlp", q=5).dense(1e-9)
        np.testing.assert_allclose(D.sum(axis=1).real / sphere1.areas, -0.5, atol=5e-4)

    def test_block_entries_and_single_agree(self, sphere1):
        K = GalerkinKernel(sphere1, "dlp", q=3)
        rows, cols = np.array([0, 5, 7]), np.array([1, 5, 60, 79])
        B = K.block(rows, cols, 2.5)
        I, J = np.meshgrid(rows, cols, indexing="ij")
        np.testing.assert_array_equal(K.entries(I.ravel(), J.ravel(), 2.5).reshape(B.shape), B)
        panels = sphere1.panels()
        for a, i in enumerate(rows):
            for b, j in enumerate(cols):
                v = entry(panels[i], panels[j], "dlp", 2.5, K.rule)
                assert abs(v - B[a, b]) <= 1e-13 * abs(B).max()

    def test_multi_kappa_matches_single(self, sphere1):
        K = GalerkinKernel(sphere1, "slp", q=3)
        ks = np.array([1.0, 2.0, 7.5])
        B = K.block([3, 4], [10, 40, 70], ks, extracted=True)
        assert B.shape == (3, 2, 3)
        for m, k in enumerate(ks):
            np.testing.assert_allclose(B[m], K.block([3, 4], [10, 40, 70], k, extracted=True), rtol=1e-14)

    def test_extracted_block_is_phase_free(self, sphere1):
        K = GalerkinKernel(sphere1, "slp", q=3)
        rows, cols = np.arange(5), np.arange(40, 48)
        B = K.block(rows, cols, 6.0)
        Bh = K.block(rows, cols, 6.0, extracted=True)
        np.testing.assert_allclose(K.phases(rows, cols, 6.0) * Bh, B, rtol=1e-14)

    def test_counter_and_errors(self, sphere1):
        K = GalerkinKernel(sphere1, "slp", q=2)
        K.block([0, 1], [2, 3, 4], [1.0, 2.0])
        assert K.entry_count == 12
        with pytest.raises(IndexError):
            K.block([0], [sphere1.n_panels], 1.0)
        with pytest.raises(ValueError):
            K.entries([0, 1], [2], 1.0)
        with pytest.raises(TypeError):
            GalerkinKernel("mesh.off")

    def test_pickles(self, sphere1):
        import pickle

        K = pickle.loads(pickle.dumps(GalerkinKernel(sphere1, "dlp", q=2)))
        assert K.kind is KernelKind.DLP and K.q == 2 and cmath.isfinite(K.block([0], [1], 1.0)[0, 0])
