"""Finite positive measures with finitely many atoms, and distances between them.

The bounded-Lipschitz distance

    d_BL(mu, nu) = sup { int f d(mu - nu) : |f| <= 1, Lip(f) <= 1 }

between discrete measures is a finite linear program in the values of ``f``
at the atoms: any feasible assignment extends to all of R^n (McShane
extension, then truncation at +-1), so restricting to the union support is
exact.
"""
from __future__ import annotations

import io
import math
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    ConfigError,
    DimensionMismatch,
    MassMismatch,
    NumericalAbort,
    SupportTooLarge,
    WrongDimension,
)

MERGE_TOL = 1e-12
LP_SUPPORT_CAP = 512


class MeasureFunctionalView(Protocol):
    """What the coefficient models may ask of a measure."""

    @property
    def total_mass(self) -> float: ...

    @property
    def first_moment(self) -> np.ndarray: ...

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float: ...

    @property
    def bl_norm(self) -> float: ...


class DiscreteMeasure:
    """``sum_k w_k delta_{z_k}`` on R^n with ``w_k >= 0``; mass need not be 1."""

    __slots__ = ("atoms", "weights")

    def __init__(self, atoms, weights=None, dim=None):
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None] if dim in (None, 1) else atoms.reshape(-1, dim)
        if atoms.ndim != 2:
            raise DimensionMismatch("atoms must be an array of shape (k, n)")
        if dim is not None and atoms.shape[1] != dim:
            raise DimensionMismatch(f"atoms have dimension {atoms.shape[1]}, expected {dim}")
        k = atoms.shape[0]
        w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (k,):
            raise DimensionMismatch("need exactly one weight per atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(atoms)):
            raise ConfigError("weights must be finite and nonnegative, atoms finite")
        self.atoms = atoms
        self.weights = w

    @classmethod
    def zero(cls, dim=1):
        return cls(np.empty((0, dim)), np.empty(0))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def bl_norm(self) -> float:
        # f = 1 attains the sup for a positive measure
        return self.total_mass

    @property
    def first_moment(self) -> np.ndarray:
        return self.weights @ self.atoms

    @property
    def mean(self) -> np.ndarray:
        m = self.total_mass
        return self.first_moment / m if m > 0 else np.full(self.dim, np.nan)

    def integrate(self, f) -> float:
        if len(self) == 0:
            return 0.0
        return float(self.weights @ np.asarray(f(self.atoms), dtype=float))

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms, c * self.weights)

    def merged(self, tol: float = MERGE_TOL) -> "DiscreteMeasure":
        """Merge atoms closer than ``tol`` (weights summed) and drop zero weights."""
        keep = self.weights > 0
        atoms, w = self.atoms[keep], self.weights[keep]
        if len(w) == 0:
            return DiscreteMeasure.zero(self.dim)
        labels, first = _cluster(atoms, tol)
        return DiscreteMeasure(atoms[first], np.bincount(labels, weights=w))

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        _check_dims(self, other)
        return DiscreteMeasure(np.vstack([self.atoms, other.atoms]),
                               np.concatenate([self.weights, other.weights]))

    def __repr__(self):
        return f"DiscreteMeasure(dim={self.dim}, atoms={len(self)}, mass={self.total_mass:.6g})"

    # text format: "dim n" then one "w x1 ... xn" line per atom
    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"dim {self.dim}\n")
        for w, z in zip(self.weights, self.atoms):
            buf.write(" ".join(repr(float(v)) for v in (w, *z)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "DiscreteMeasure":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0].split()[0] != "dim":
            raise ConfigError("measure file must start with 'dim n'")
        n = int(lines[0].split()[1])
        if len(lines) == 1:
            return cls.zero(n)
        body = np.loadtxt(io.StringIO("\n".join(lines[1:])), ndmin=2)
        if body.shape[1] != n + 1:
            raise DimensionMismatch(f"expected 'w x1..x{n}' lines")
        return cls(body[:, 1:], body[:, 0])

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def _check_dims(mu, nu):
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"measures live in R^{mu.dim} and R^{nu.dim}")


def _cluster(atoms, tol):
    """Connected components of the ``< tol`` proximity graph; returns labels
    and the index of one representative per component."""
    k = len(atoms)
    pairs = cKDTree(atoms).query_pairs(tol, output_type="ndarray") if k > 1 else np.empty((0, 2), int)
    if len(pairs) == 0:
        return np.arange(k), np.arange(k)
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(k, k))
    _, labels = connected_components(adj, directed=False)
    _, first = np.unique(labels, return_index=True)
    # relabel so representative order follows first appearance
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[labels], first[order]


# ------------------------------------------------------------ constructions

def weighted_empirical(graph, i: int, states) -> DiscreteMeasure:
    """``(1 / (N beta)) sum_j zeta[i, j] delta_{states[j]}`` (0-based ``i``)."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if states.shape[0] != graph.N:
        raise DimensionMismatch(f"need {graph.N} states, got {states.shape[0]}")
    if not 0 <= i < graph.N:
        raise IndexError(f"vertex {i} out of range for N={graph.N}")
    zeta = graph.zeta
    lo, hi = zeta.indptr[i], zeta.indptr[i + 1]
    cols, w = zeta.indices[lo:hi], zeta.data[lo:hi]
    keep = w != 0
    return DiscreteMeasure(states[cols[keep]], w[keep] / (graph.N * graph.beta))


def graphon_integral_measure(gN, x: float, block_laws: Sequence[DiscreteMeasure]) -> DiscreteMeasure:
    """``sum_j |B_j| g_N(x, x_j) law_j``, the block-discretised graphon integral."""
    if len(block_laws) != gN.K:
        raise DimensionMismatch(f"need {gN.K} block laws, got {len(block_laws)}")
    dims = {law.dim for law in block_laws}
    if len(dims) > 1:
        raise DimensionMismatch(f"block laws of mixed dimension {sorted(dims)}")
    row = gN.W[gN.block_of(x)] * gN.lengths
    parts = [(law.atoms, c * law.weights) for c, law in zip(row, block_laws) if c > 0]
    if not parts:
        return DiscreteMeasure.zero(dims.pop() if dims else 1)
    return DiscreteMeasure(np.vstack([a for a, _ in parts]),
                           np.concatenate([w for _, w in parts]))


# ---------------------------------------------------------------- distances

def _signed_support(mu, nu, tol=MERGE_TOL):
    """Merged union support and the signed weight ``mu - nu`` on it."""
    _check_dims(mu, nu)
    atoms = np.vstack([mu.atoms, nu.atoms])
    h = np.concatenate([mu.weights, -nu.weights])
    if len(h) == 0:
        return atoms, h
    labels, first = _cluster(atoms, tol)
    h = np.bincount(labels, weights=h)
    atoms = atoms[first]
    keep = h != 0
    return atoms[keep], h[keep]


def dbl_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, cap: int = LP_SUPPORT_CAP) -> float:
    """Exact bounded-Lipschitz distance by linear programming (HiGHS).

    Variables are the values ``f_k`` on the merged union support, bounded by
    1 in absolute value. Pairs at distance >= 2 need no constraint; in 1-D
    only neighbours after sorting do, since Lipschitz bounds chain.
    """
    z, h = _signed_support(mu, nu)
    k = len(h)
    if k == 0:
        return 0.0
    if k > cap:
        raise SupportTooLarge(f"union support has {k} atoms (cap {cap}); use dbl_estimate")
    if k == 1:
        return abs(float(h[0]))
    if z.shape[1] == 1:
        order = np.argsort(z[:, 0], kind="stable")
        z, h = z[order], h[order]
        i = np.arange(k - 1)
        j = i + 1
        d = z[1:, 0] - z[:-1, 0]
        near = d < 2
        i, j, d = i[near], j[near], d[near]
    else:
        i, j = np.triu_indices(k, 1)
        d = np.linalg.norm(z[i] - z[j], axis=1)
        near = d < 2
        i, j, d = i[near], j[near], d[near]
    m = len(d)
    if m:
        rows = np.repeat(np.arange(2 * m), 2)
        cols = np.column_stack([i, j, i, j]).reshape(-1)
        vals = np.tile([1.0, -1.0, -1.0, 1.0], m)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * m, k))
        b = np.concatenate([d, d]).reshape(2, m).T.reshape(-1)
    else:
        A, b = None, None
    res = linprog(-h, A_ub=A, b_ub=b, bounds=(-1.0, 1.0), method="highs")
    if res.status != 0:
        raise NumericalAbort(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, -float(res.fun))


class TestDictionary:
    """Default family of feasible test functions for :func:`dbl_estimate`.

    Members: ``+-1``; ``+-clip(e . (z - c), -1, 1)`` along ``n_directions``
    random unit vectors ``e`` (``c`` the pooled barycentre); and
    ``+-(min(|z - a|, 2) - 1)`` for ``n_anchors`` anchors ``a`` drawn from
    the pooled support. Every member has ``|f| <= 1`` and ``Lip(f) <= 1``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, n_directions: int = 16, n_anchors: int = 32, seed: int = 0):
        self.n_directions = n_directions
        self.n_anchors = n_anchors
        self.seed = seed

    def functions(self, pooled: DiscreteMeasure):
        rs = np.random.default_rng(self.seed)
        n = pooled.dim
        fs = [lambda z: np.ones(len(z))]
        if len(pooled) == 0:
            return fs
        c = pooled.mean if pooled.total_mass > 0 else np.zeros(n)
        e = rs.standard_normal((self.n_directions, n))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        for v in e:
            fs.append(lambda z, v=v: np.clip((z - c) @ v, -1.0, 1.0))
        idx = rs.choice(len(pooled), size=min(self.n_anchors, len(pooled)), replace=False)
        for a in pooled.atoms[idx]:
            fs.append(lambda z, a=a: np.minimum(np.linalg.norm(z - a, axis=1), 2.0) - 1.0)
        return fs


def dbl_estimate(mu: DiscreteMeasure, nu: DiscreteMeasure, dictionary=None) -> float:
    """Lower bound on ``d_BL``: best test function from a feasible dictionary.

    ``dictionary`` is a :class:`TestDictionary` (default) or a sequence of
    callables mapping ``(k, n)`` atoms to values; each must satisfy
    ``|f| <= 1`` and ``Lip(f) <= 1``. Every member is also tried with the
    opposite sign.
    """
    _check_dims(mu, nu)
    if dictionary is None:
        dictionary = TestDictionary()
    fs = dictionary.functions(mu + nu) if isinstance(dictionary, TestDictionary) else list(dictionary)
    if not fs:
        raise ConfigError("empty test-function dictionary")
    best = 0.0
    for f in fs:
        v = mu.integrate(f) - nu.integrate(f)
        best = max(best, v, -v)
    return best


def w1_sorted(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """1-Wasserstein distance of two equal-mass measures on the line: ``int |F - G|``."""
    if mu.dim != 1 or nu.dim != 1:
        raise WrongDimension("w1_sorted needs one-dimensional measures")
    if abs(mu.total_mass - nu.total_mass) > 1e-12:
        raise MassMismatch(f"masses differ: {mu.total_mass} vs {nu.total_mass}")
    z = np.concatenate([mu.atoms[:, 0], nu.atoms[:, 0]])
    h = np.concatenate([mu.weights, -nu.weights])
    if len(z) == 0:
        return 0.0
    order = np.argsort(z, kind="stable")
    z, h = z[order], h[order]
    cdf_gap = np.cumsum(h)[:-1]
    return float(np.abs(cdf_gap) @ np.diff(z))
