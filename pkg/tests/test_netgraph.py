import numpy as np
import pytest

from dpac import netgraph as ng


def test_cycle_spectrum_matches_closed_form():
    g = ng.cycle(10, 0.3)
    s = ng.spectrum(g)
    expected = np.sort([0.6 * (1 - np.cos(2 * np.pi * k / 10)) for k in range(10)])
    np.testing.assert_allclose(s.eigenvalues, expected, atol=1e-12)
    assert s.lambda2 == pytest.approx(0.114589803375, abs=1e-11)
    assert s.lambda_max == pytest.approx(1.2, abs=1e-12)
    assert s.beta == pytest.approx(0.8854101966249685, abs=1e-12)


def test_iteration_matrix_is_doubly_stochastic():
    W = ng.iteration_matrix(ng.cycle(7, 0.3))
    np.testing.assert_allclose(W.sum(axis=0), 1)
    np.testing.assert_allclose(W.sum(axis=1), 1)
    assert (W >= 0).all()


@pytest.mark.parametrize("weights, message", [
    ([[0, 0.6], [0.6, 0]], None),
    ([[0, 1.0], [1.0, 0]], "row sum"),
    ([[0, 0.3], [0.2, 0]], "symmetric"),
    ([[0.1, 0.3], [0.3, 0]], "self-loops"),
    ([[0, 0, 0], [0, 0, 0.2], [0, 0.2, 0]], "connected"),
    ([[0, -0.1], [-0.1, 0]], "nonnegative"),
])
def test_graph_validation(weights, message):
    if message is None:
        assert ng.WeightedGraph(np.array(weights)).n == 2
    else:
        with pytest.raises(ng.GraphError, match=message):
            ng.WeightedGraph(np.array(weights, dtype=float))


def test_edges_and_neighbors():
    g = ng.cycle(4, 0.2)
    assert g.edges == [(0, 1), (0, 3), (1, 2), (2, 3)]
    assert g.neighbors[0] == [1, 3]
    assert g.to_adjacency_text().splitlines()[0] == "0: 1(0.2) 3(0.2)"


def test_builders():
    assert ng.build_graph({"kind": "path", "n": 5, "weight": 0.3}).edges == [(0, 1), (1, 2), (2, 3), (3, 4)]
    c = ng.build_graph({"kind": "complete", "n": 5})
    assert c.weights.sum(axis=1).max() < 1
    er = ng.build_graph({"kind": "erdos-renyi", "n": 12, "p": 0.4, "seed": 3})
    assert er.n == 12
    assert er.weights.sum(axis=1).max() <= 0.9 + 1e-12
    with pytest.raises(ng.GraphError):
        ng.build_graph({"kind": "torus", "n": 4})
    with pytest.raises(ng.GraphError):
        ng.cycle(2)


def test_erdos_renyi_gives_up_on_disconnected_draws():
    with pytest.raises(ng.GraphError):
        ng.erdos_renyi(30, 0.0, np.random.default_rng(0))
