import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from graphon_sde.errors import DimensionMismatch, MassMismatch, SupportTooLarge, WrongDimension
from graphon_sde.graphon import Constant, StepGraphon
from graphon_sde.graphs import InteractionGraph, deterministic_graph
from graphon_sde.measures import (
    DiscreteMeasure,
    TestDictionary,
    dbl_estimate,
    dbl_exact,
    graphon_integral_measure,
    w1_sorted,
    weighted_empirical,
)
from oracles import dbl_dp_1d, dbl_feasible_search, dbl_transport, w1_quantile


def rand_measure(rs, n, k=None, mass=None, spread=2.0):
    k = k or int(rs.integers(1, 6))
    atoms = rs.normal(scale=spread, size=(k, n))
    w = rs.uniform(0.05, 1.0, size=k)
    if mass is not None:
        w *= mass / w.sum()
    return DiscreteMeasure(atoms, w)


@st.composite
def measures(draw, n=1, max_atoms=8):
    k = draw(st.integers(1, max_atoms))
    atoms = draw(st.lists(st.floats(-3, 3), min_size=k * n, max_size=k * n))
    w = draw(st.lists(st.floats(0, 2), min_size=k, max_size=k))
    return DiscreteMeasure(np.reshape(atoms, (k, n)), w)


def test_dbl_examples():
    d0, d1 = DiscreteMeasure([[0.0]]), DiscreteMeasure([[1.0]])
    assert dbl_exact(d0, d0) == 0
    assert dbl_exact(d0, d1) == pytest.approx(1, abs=1e-12)
    assert dbl_exact(DiscreteMeasure([[0.0]], [2.0]), d0) == pytest.approx(1, abs=1e-12)
    assert dbl_exact(d0, DiscreteMeasure([[5.0]])) == pytest.approx(2, abs=1e-12)
    assert dbl_exact(DiscreteMeasure.zero(), DiscreteMeasure.zero()) == 0


def test_dbl_errors():
    with pytest.raises(DimensionMismatch):
        dbl_exact(DiscreteMeasure([[0.0]]), DiscreteMeasure([[0.0, 1.0]]))
    big = DiscreteMeasure(np.arange(600.0)[:, None])
    with pytest.raises(SupportTooLarge):
        dbl_exact(big, DiscreteMeasure([[0.5]]))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_dbl_matches_transport_dual(n):
    rs = np.random.default_rng(n)
    for _ in range(40):
        mu, nu = rand_measure(rs, n), rand_measure(rs, n)
        ref = dbl_transport(mu.atoms, mu.weights, nu.atoms, nu.weights)
        assert dbl_exact(mu, nu) == pytest.approx(ref, abs=1e-8)


def test_dbl_matches_1d_dynamic_program():
    rs = np.random.default_rng(7)
    for _ in range(200):
        mu, nu = rand_measure(rs, 1, k=8), rand_measure(rs, 1, k=8)
        ref = dbl_dp_1d(mu.atoms, mu.weights, nu.atoms, nu.weights)
        assert dbl_exact(mu, nu) == pytest.approx(ref, abs=1e-9)


def test_dbl_large_support_1d_and_2d():
    rs = np.random.default_rng(3)
    mu, nu = rand_measure(rs, 1, k=250), rand_measure(rs, 1, k=250)
    ref = dbl_dp_1d(mu.atoms, mu.weights, nu.atoms, nu.weights)
    assert dbl_exact(mu, nu) == pytest.approx(ref, abs=1e-8)
    mu, nu = rand_measure(rs, 2, k=60, spread=0.5), rand_measure(rs, 2, k=60, spread=0.5)
    ref = dbl_transport(mu.atoms, mu.weights, nu.atoms, nu.weights)
    assert dbl_exact(mu, nu) == pytest.approx(ref, abs=1e-7)


def test_dbl_at_least_any_explicit_test_function():
    rs = np.random.default_rng(5)
    for _ in range(30):
        mu, nu = rand_measure(rs, 2), rand_measure(rs, 2)
        lb = dbl_feasible_search(mu.atoms, mu.weights, nu.atoms, nu.weights, trials=300)
        assert lb <= dbl_exact(mu, nu) + 1e-9


@given(mu=measures(), nu=measures())
def test_dbl_symmetry_and_bounds(mu, nu):
    d = dbl_exact(mu, nu)
    assert d >= 0
    assert abs(d - dbl_exact(nu, mu)) <= 1e-9
    assert d <= mu.total_mass + nu.total_mass + 1e-9


@given(a=measures(n=2, max_atoms=6), b=measures(n=2, max_atoms=6), c=measures(n=2, max_atoms=6))
def test_dbl_triangle_inequality(a, b, c):
    assert dbl_exact(a, c) <= dbl_exact(a, b) + dbl_exact(b, c) + 1e-9


@given(mu=measures(), nu=measures(), c=st.sampled_from([0.5, 2.0]))
def test_dbl_scale_equivariance(mu, nu, c):
    assert dbl_exact(mu.scaled(c), nu.scaled(c)) == pytest.approx(c * dbl_exact(mu, nu), abs=1e-9)


def test_identity_of_indiscernibles_after_merging():
    mu = DiscreteMeasure([[0.0], [1e-14], [1.0]], [0.25, 0.25, 1.0])
    nu = DiscreteMeasure([[1.0], [0.0]], [1.0, 0.5])
    assert dbl_exact(mu, nu) < 1e-12
    assert len(mu.merged()) == 2


@given(mu=measures(n=2))
def test_bl_norm_is_total_mass(mu):
    assert mu.bl_norm == mu.total_mass
    assert mu.integrate(lambda z: np.ones(len(z))) == pytest.approx(mu.total_mass)


def test_dbl_estimate_lower_bound():
    rs = np.random.default_rng(2)
    dic = TestDictionary(seed=1)
    for _ in range(1000):
        n = int(rs.integers(1, 3))
        mu, nu = rand_measure(rs, n), rand_measure(rs, n)
        assert dbl_estimate(mu, nu, dic) <= dbl_exact(mu, nu) + 1e-9
    mu = rand_measure(rs, 2)
    assert dbl_estimate(mu, mu, dic) == 0


def test_dbl_estimate_constant_member():
    mu = DiscreteMeasure([[0.0], [3.0]], [1.0, 1.5])
    nu = DiscreteMeasure([[1.0]], [0.5])
    assert dbl_estimate(mu, nu, TestDictionary(0, 0)) == pytest.approx(2.0)


def test_w1_examples_and_errors():
    assert w1_sorted(DiscreteMeasure([[0.0]]), DiscreteMeasure([[1.0]])) == 1
    half = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert w1_sorted(half, half) == 0
    with pytest.raises(MassMismatch):
        w1_sorted(half, DiscreteMeasure([[0.0]], [2.0]))
    with pytest.raises(WrongDimension):
        w1_sorted(DiscreteMeasure([[0.0, 0.0]]), DiscreteMeasure([[0.0, 1.0]]))


def test_w1_oracle_and_upper_bound():
    rs = np.random.default_rng(4)
    for _ in range(300):
        mu, nu = rand_measure(rs, 1, k=6, mass=1.3), rand_measure(rs, 1, k=6, mass=1.3)
        w = w1_sorted(mu, nu)
        assert w == pytest.approx(w1_quantile(mu.atoms, mu.weights, nu.atoms, nu.weights), abs=1e-12)
        assert dbl_exact(mu, nu) <= w + 1e-9


def test_weighted_empirical_examples():
    states = np.array([[0.0], [1.0]])
    G = deterministic_graph(Constant(1), 2, 1.0)
    m = weighted_empirical(G, 0, states)
    np.testing.assert_array_equal(m.atoms.ravel(), [0, 1])
    np.testing.assert_array_equal(m.weights, [0.5, 0.5])
    K2 = InteractionGraph(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]]), 1.0)
    m = weighted_empirical(K2, 0, states)
    assert m.atoms.ravel().tolist() == [1.0] and m.weights.tolist() == [0.5]
    empty = InteractionGraph(sp.csr_matrix((3, 3)), 0.5)
    assert weighted_empirical(empty, 1, np.zeros((3, 1))).total_mass == 0


def test_graphon_integral_measure_examples():
    d0 = DiscreteMeasure([[0.0]])
    nu = graphon_integral_measure(StepGraphon([[1.0]]), 0.3, [d0])
    assert nu.total_mass == 1 and nu.atoms.ravel().tolist() == [0.0]
    assert graphon_integral_measure(StepGraphon([[0.0]]), 0.3, [d0]).total_mass == 0
    g = StepGraphon([[2.0, 0.0], [0.0, 1.0]])
    nu = graphon_integral_measure(g, 0.2, [d0, DiscreteMeasure([[1.0]])])
    assert nu.atoms.ravel().tolist() == [0.0] and nu.weights.tolist() == [1.0]
    with pytest.raises(DimensionMismatch):
        graphon_integral_measure(g, 0.2, [d0, DiscreteMeasure([[1.0, 0.0]])])


def test_measure_text_round_trip(tmp_path):
    mu = DiscreteMeasure(np.random.default_rng(0).normal(size=(5, 2)), np.arange(1.0, 6.0))
    mu.save(tmp_path / "m.txt")
    nu = DiscreteMeasure.load(tmp_path / "m.txt")
    np.testing.assert_array_equal(mu.atoms, nu.atoms)
    np.testing.assert_array_equal(mu.weights, nu.weights)


def test_point_mass_formula_2d():
    rs = np.random.default_rng(8)
    for _ in range(20):
        a = rs.uniform(0.1, 3)
        x, y = rs.normal(size=2), rs.normal(size=2)
        d = dbl_exact(DiscreteMeasure([x], [a]), DiscreteMeasure([y], [a]))
        assert d == pytest.approx(a * min(math.dist(x, y), 2.0), abs=1e-9)
