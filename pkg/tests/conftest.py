import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from freqhmat.mesh import Panel, gen_sphere  # noqa: E402


def make_panel(tri, index=0):
    tri = np.asarray(tri, float)
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    area = 0.5 * np.linalg.norm(n)
    diam = max(np.linalg.norm(tri[a] - tri[b]) for a, b in ((0, 1), (1, 2), (0, 2)))
    return Panel(index, tri.mean(axis=0), diam, area, n / (2 * area), tri)


@pytest.fixture(scope="session")
def sphere1():
    return gen_sphere(1)


@pytest.fixture(scope="session")
def sphere2():
    return gen_sphere(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def compact_setup():
    """Sphere level 3 with the SLP compact representation of a few far blocks."""
    from freqhmat.clustering import build_block_tree, build_cluster_tree
    from freqhmat.compact import build_compact
    from freqhmat.kernel import GalerkinKernel
    from freqhmat.rational import SampleGrid

    mesh = gen_sphere(3)
    tree = build_cluster_tree(mesh, 32)
    bt = build_block_tree(tree, tree, 2.0, "min")
    K = GalerkinKernel(mesh, "slp", 3)
    grid = SampleGrid.chebyshev(10 / mesh.diameter, 100 / mesh.diameter)
    ids = sorted(b.id for b in bt.far_field())[::200]
    return mesh, bt, K, grid, build_compact(K, bt, grid, blocks=ids, seed=1)


ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance check; the line is also asserted."""

    def record(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance summary")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
