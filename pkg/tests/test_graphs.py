import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from graphon_sde.errors import ConfigError, WeightExceedsOne
from graphon_sde.graphon import Constant, PowerLaw, StepGraphon, UniformAttachment, discretize
from graphon_sde.graphs import (
    InteractionGraph,
    SparsitySchedule,
    deterministic_graph,
    expected_edge_probabilities,
    graph_norm,
    graph_stats,
    sample_random_points,
    sample_w_random,
    spacings,
)


def test_complete_and_empty():
    G = sample_w_random(Constant(1), 5, 1.0, seed=0)
    np.testing.assert_array_equal(G.zeta.toarray(), np.ones((5, 5)) - np.eye(5))
    assert sample_w_random(Constant(0), 30, 1.0, seed=0).zeta.nnz == 0


def test_edge_count_binomial_ci():
    N, beta = 1000, 0.3
    G = sample_w_random(Constant(1), N, beta, seed=4)
    pairs = N * (N - 1) // 2
    lo, hi = stats.binom.interval(0.999, pairs, beta)
    assert lo <= graph_stats(G)["edges"] <= hi


@given(N=st.integers(2, 200), seed=st.integers(0, 2**32))
def test_symmetric_mode_structure(N, seed):
    G = sample_w_random(UniformAttachment(), N, 0.7, seed)
    A = G.zeta.toarray()
    assert np.array_equal(A, A.T)
    assert not np.any(np.diag(A))
    assert set(np.unique(A)) <= {0.0, 1.0}


def test_directed_mode_is_asymmetric_without_loops():
    G = sample_w_random(Constant(1), 200, 0.5, seed=1, mode="directed")
    A = G.zeta.toarray()
    assert not np.any(np.diag(A))
    assert not np.array_equal(A, A.T)
    # the two triangles are independent coins of the same bias
    up, lo = A[np.triu_indices(200, 1)], A.T[np.triu_indices(200, 1)]
    assert abs(np.corrcoef(up, lo)[0, 1]) < 4 / np.sqrt(len(up))


def test_seed_determinism_byte_identical():
    a = sample_w_random(PowerLaw(0.2), 300, 0.2, seed=9)
    b = sample_w_random(PowerLaw(0.2), 300, 0.2, seed=9)
    assert a.to_text() == b.to_text()
    assert a.to_text() != sample_w_random(PowerLaw(0.2), 300, 0.2, seed=10).to_text()


def test_clamping_of_probabilities():
    P = expected_edge_probabilities(PowerLaw(0.4), 64, 1.0)
    assert P.min() >= 0 and P.max() == 1.0
    P = expected_edge_probabilities(PowerLaw(0.4), 64, 1.0, points=sample_random_points(64, 0))
    assert np.all((P >= 0) & (P <= 1))


def test_graph_text_round_trip(tmp_path):
    G = sample_w_random(UniformAttachment(), 40, 0.5, seed=2)
    G.save(tmp_path / "g.txt")
    H = InteractionGraph.load(tmp_path / "g.txt")
    assert (H.zeta != G.zeta).nnz == 0 and H.beta == G.beta and H.mode == G.mode
    assert H.to_text() == G.to_text()
    with pytest.raises(ConfigError):
        InteractionGraph.from_text("3 0.5\n")


def test_deterministic_examples():
    G = deterministic_graph(Constant(1), 6, 0.4)
    np.testing.assert_array_equal(G.zeta.toarray(), np.full((6, 6), 0.4))
    # normalized interaction is plain mean-field averaging
    np.testing.assert_allclose(G.interaction_matrix().toarray(), np.full((6, 6), 1 / 6))
    np.testing.assert_array_equal(deterministic_graph(UniformAttachment(), 2, 1.0).zeta.toarray(),
                                  [[1, 0.5], [0.5, 0.5]])
    m = (np.arange(4) + 0.5) / 4
    # beta = 4^-0.1 puts beta * g(1/8, 1/8) = 2 above one: the check must fire
    with pytest.raises(WeightExceedsOne):
        deterministic_graph(PowerLaw(0.2), 4, 4 ** -0.1, policy="midpoint")
    beta = 64 ** -0.2
    G = deterministic_graph(PowerLaw(0.2), 4, beta, policy="midpoint")
    np.testing.assert_allclose(G.zeta.toarray(), beta * np.outer(m, m) ** -0.2, rtol=1e-14)
    assert G.zeta.max() <= 1
    with pytest.raises(WeightExceedsOne):
        deterministic_graph(Constant(3), 4, 0.5)


def test_stats_examples():
    K3 = InteractionGraph(sp.csr_matrix(np.ones((3, 3)) - np.eye(3)), 1.0)
    st_ = graph_stats(K3)
    assert st_["norms"][1] == pytest.approx(2 / 3)
    np.testing.assert_array_equal(st_["degrees"], [2, 2, 2])
    empty = graph_stats(InteractionGraph(sp.csr_matrix((4, 4)), 1.0))
    assert empty["edges"] == 0 and empty["density"] == 0 and empty["degree_max"] == 0
    assert all(v == 0 for v in empty["norms"].values())
    assert graph_norm(deterministic_graph(Constant(1), 7, 0.3), 1) == pytest.approx(0.3)


@pytest.mark.parametrize("N", [4, 9, 16])
def test_regular_graph_degree_identity(N):
    # cycle C_N: every vertex has degree 2
    A = np.roll(np.eye(N), 1, axis=1)
    G = InteractionGraph(sp.csr_matrix(A + A.T), 1.0)
    np.testing.assert_allclose(G.degrees() / N, graph_norm(G, 1), rtol=1e-15)


def test_random_points_structure():
    u = sample_random_points(2, 0)
    assert u.shape == (3,) and u[0] == 0 and u[-1] == 1 and 0 < u[1] < 1
    u = sample_random_points(500, 3)
    assert np.all(np.diff(u) > 0)
    with pytest.raises(ConfigError):
        sample_random_points(1, 0)


def test_spacing_second_moment_of_construction():
    """N spacings of N-1 interior uniforms: E[s^2] = 2 / (N (N + 1))."""
    N = 10
    s = spacings(sample_random_points(N, 11, replicas=100_000)).ravel() ** 2
    se = s.reshape(100_000, -1).mean(axis=1).std(ddof=1) / np.sqrt(100_000)
    assert abs(s.mean() - 2 / (N * (N + 1))) < 3 * se


def test_random_point_graph_uses_latent_positions():
    pts = sample_random_points(50, 0)
    G = sample_w_random(UniformAttachment(), 50, 1.0, 3, points=pts)
    np.testing.assert_array_equal(G.points, pts[:50])


def test_grid_graph_from_matching_step_graphon():
    g = discretize(UniformAttachment(), 20)
    a = sample_w_random(g, 20, 0.8, 5)
    b = sample_w_random(UniformAttachment(), 20, 0.8, 5)
    assert a.to_text() == b.to_text()


def test_schedules():
    assert SparsitySchedule.power(0.5)(64) == 0.125
    assert SparsitySchedule.constant(0.3)(10) == 0.3
    s = SparsitySchedule(form="power_law_regime", a=0.2, b=0.1)
    assert s(100) == pytest.approx(100 ** (0.1 - 0.4))
    nb = [N * SparsitySchedule.power(0.5)(N) for N in (10, 100, 1000)]
    assert nb == sorted(nb)
    assert SparsitySchedule.from_dict(SparsitySchedule.power(0.25).to_dict())(16) == 0.5
    with pytest.raises(ConfigError):
        SparsitySchedule.constant(0.0)
    with pytest.raises(ConfigError):
        SparsitySchedule.constant(1.5)
    with pytest.raises(ConfigError):
        sample_w_random(Constant(1), 10, 1e-12, 0)


def test_step_graphon_grid_with_unequal_partition_is_discretized():
    g = StepGraphon([[1, 0], [0, 1]], [0.25, 0.75])
    P = expected_edge_probabilities(g, 4, 1.0)
    np.testing.assert_array_equal(P[0], [1, 0, 0, 0])
