import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omniobs.exceptions import EmptyR
from omniobs.graph import (
    Graph,
    algebraic_connectivity,
    bar_matrix,
    bar_rows,
    complete,
    is_connected,
    is_connected_spectral,
    laplacian,
    path,
    random_connected,
    ring,
    verify_bar_nonsingular,
)


def test_laplacian_path3():
    assert np.array_equal(laplacian(path(3)), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_laplacian_edgeless():
    assert np.array_equal(laplacian(Graph(np.zeros((2, 2)))), np.zeros((2, 2)))


def test_laplacian_ring4():
    L = laplacian(ring(4))
    assert np.all(np.diag(L) == 2)
    for i in range(4):
        assert L[i, (i + 1) % 4] == -1 and L[i, (i - 1) % 4] == -1
    assert L[0, 2] == 0 and L[1, 3] == 0


def test_connectivity_examples():
    assert is_connected(path(3))
    assert not is_connected(Graph(np.zeros((2, 2))))
    tri_plus_edge = Graph.from_edges(5, [(1, 2), (2, 3), (1, 3), (4, 5)])
    assert not is_connected(tri_plus_edge)
    assert not is_connected_spectral(tri_plus_edge)


def test_graph_rejects_bad_weights():
    with pytest.raises(ValueError):
        Graph(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        Graph(np.array([[1.0, 0], [0, 0]]))
    with pytest.raises(ValueError):
        Graph.from_edges(2, [(1, 3)])


def test_bar_rows_path_R2():
    rows = bar_rows(path(3), [1])
    assert np.array_equal(bar_matrix(rows), [[1, -1, 0], [0, 1, 0], [0, -1, 1]])
    assert verify_bar_nonsingular(rows)
    assert abs(np.linalg.det(bar_matrix(rows)) - 1.0) < 1e-12


def test_bar_rows_all_nodes_identity():
    g = ring(5)
    assert np.array_equal(bar_matrix(bar_rows(g, range(5))), np.eye(5))


def test_bar_rows_empty_R():
    with pytest.raises(EmptyR):
        bar_rows(path(3), [])


def test_random_connected_is_connected(rng):
    for _ in range(20):
        g = random_connected(int(rng.integers(2, 12)), 0.2, rng)
        assert is_connected(g)
        assert algebraic_connectivity(g) > 0


def test_bar_nonsingular_100_random_graphs(rng):
    failures = 0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        g = random_connected(n, float(rng.uniform(0.05, 0.6)), rng)
        R = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        failures += not verify_bar_nonsingular(bar_rows(g, R))
    assert failures == 0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 9), seed=st.integers(0, 10_000))
def test_laplacian_properties(n, seed):
    g = random_connected(n, 0.3, np.random.default_rng(seed))
    L = laplacian(g)
    assert np.allclose(L, L.T)
    assert np.allclose(L.sum(axis=1), 0)
    ev = np.linalg.eigvalsh(L)
    assert ev[0] > -1e-10 and ev[1] > 1e-10


def test_complete_graph():
    L = laplacian(complete(4))
    assert np.allclose(np.linalg.eigvalsh(L), [0, 4, 4, 4])
