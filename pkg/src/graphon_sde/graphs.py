"""Interaction graphs sampled from graphons.

A graph holds the weights ``zeta[i, j]`` of an N-particle system together
with the sparsity parameter ``beta``; particle ``i`` then interacts through
``(1 / (N beta)) sum_j zeta[i, j] delta_{X_j}``. Weights are kept in CSR
form throughout.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import ConfigError, InvalidGraphon, WeightExceedsOne
from .graphon import Graphon, GridSpec, StepGraphon, discretize

MODES = ("symmetric", "directed", "deterministic")
BETA_MIN = 1e-9

# keep each block of hashed uniforms around 4M entries
_BLOCK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class SparsitySchedule:
    """Sparsity sequence ``beta_N``.

    ``constant``: ``beta_N = beta``; ``power``: ``beta_N = N^-gamma``;
    ``power_law_regime``: ``beta_N = N^(b - 2a)``.
    """

    form: str = "constant"
    beta: float = 1.0
    gamma: float = 0.0
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.form == "constant":
            check_beta(self.beta)
        elif self.form == "power":
            if self.gamma < 0:
                raise ConfigError(f"power schedule needs gamma >= 0, got {self.gamma}")
        elif self.form == "power_law_regime":
            if not 2 * self.a - 1 < self.b < 2 * self.a:
                raise ConfigError("power_law_regime needs 2a - 1 < b < 2a")
        else:
            raise ConfigError(f"unknown sparsity schedule {self.form!r}")

    @property
    def exponent(self) -> float:
        """``gamma`` with ``beta_N = N^-gamma`` (0 for the constant form)."""
        if self.form == "power":
            return self.gamma
        if self.form == "power_law_regime":
            return 2 * self.a - self.b
        return 0.0

    def __call__(self, N: int) -> float:
        if self.form == "constant":
            return self.beta
        return check_beta(float(N) ** (-self.exponent))

    @classmethod
    def constant(cls, beta):
        return cls("constant", beta=float(beta))

    @classmethod
    def power(cls, gamma):
        return cls("power", gamma=float(gamma))

    @classmethod
    def from_dict(cls, desc):
        if isinstance(desc, (int, float)):
            return cls.constant(desc)
        desc = dict(desc)
        form = desc.pop("form", desc.pop("kind", "constant"))
        try:
            return cls(form, **{k: float(v) for k, v in desc.items()})
        except TypeError:
            raise ConfigError(f"bad sparsity schedule fields {sorted(desc)}") from None

    def to_dict(self):
        keys = {"constant": ("beta",), "power": ("gamma",),
                "power_law_regime": ("a", "b")}[self.form]
        return {"form": self.form, **{k: getattr(self, k) for k in keys}}


def check_beta(beta) -> float:
    beta = float(beta)
    if not BETA_MIN <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [{BETA_MIN}, 1], got {beta}")
    return beta


@dataclass
class InteractionGraph:
    """Weights ``zeta`` (CSR, N x N), sparsity ``beta`` and sampling mode."""

    zeta: sp.csr_matrix
    beta: float
    mode: str = "symmetric"
    points: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.zeta = sp.csr_matrix(self.zeta, dtype=float)
        self.zeta.sort_indices()
        self.beta = check_beta(self.beta)
        if self.mode not in MODES:
            raise ConfigError(f"unknown graph mode {self.mode!r}")
        if self.zeta.shape[0] != self.zeta.shape[1]:
            raise ConfigError("interaction matrix must be square")

    @property
    def N(self) -> int:
        return self.zeta.shape[0]

    def interaction_matrix(self) -> sp.csr_matrix:
        """``zeta / (N beta)``, the weights of the empirical interaction measure."""
        return (self.zeta * (1.0 / (self.N * self.beta))).tocsr()

    def degrees(self) -> np.ndarray:
        return np.asarray(self.zeta.sum(axis=1)).ravel()

    def to_text(self) -> str:
        """Header ``N beta mode`` then one ``i j weight`` line per stored entry."""
        buf = io.StringIO()
        buf.write(f"{self.N} {self.beta!r} {self.mode}\n")
        coo = self.zeta.tocoo()
        for i, j, w in zip(coo.row, coo.col, coo.data):
            buf.write(f"{i} {j} {float(w)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "InteractionGraph":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise ConfigError("empty graph file")
        head = lines[0].split()
        if len(head) != 3:
            raise ConfigError("graph header must read 'N beta mode'")
        N, beta, mode = int(head[0]), float(head[1]), head[2]
        if len(lines) > 1:
            body = np.loadtxt(io.StringIO("\n".join(lines[1:])), ndmin=2)
            if body.shape[1] != 3:
                raise ConfigError("graph entries must read 'i j weight'")
            rows, cols, data = body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2]
            if rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= N:
                raise ConfigError("graph entry index out of range")
        else:
            rows = cols = np.empty(0, int)
            data = np.empty(0)
        zeta = sp.csr_matrix((data, (rows, cols)), shape=(N, N))
        return cls(zeta, beta, mode)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def sample_random_points(N: int, seed: int, replicas: int | None = None) -> np.ndarray:
    """Ordered points ``U_1 = 0 <= U_2 <= ... <= U_N <= U_{N+1} = 1``.

    ``U_2..U_N`` are sorted iid uniforms. Returns the ``N + 1`` points
    (the latent positions are the first ``N``); with ``replicas`` an array
    of shape ``(replicas, N + 1)``.
    """
    if N < 2:
        raise ConfigError("random points need N >= 2")
    R = 1 if replicas is None else int(replicas)
    keys = np.arange(R, dtype=np.uint64)[:, None]
    ctr = np.arange(N - 1, dtype=np.uint64)[None, :]
    u = np.sort(rng.uniforms(seed, rng.POINTS, keys, ctr), axis=1)
    pts = np.concatenate([np.zeros((R, 1)), u, np.ones((R, 1))], axis=1)
    return pts[0] if replicas is None else pts


def spacings(points) -> np.ndarray:
    """Gaps ``U_{i+1} - U_i`` of the output of :func:`sample_random_points`."""
    return np.diff(np.asarray(points), axis=-1)


def _kernel_values(g: Graphon, N: int, points, policy, cap):
    """Row-evaluator ``rows -> g(x_rows, x_all)`` plus the latent positions."""
    if points is None or (isinstance(points, str) and points == "grid"):
        step = g if isinstance(g, StepGraphon) and g.K == N and np.allclose(
            g.lengths, 1.0 / N) else discretize(g, GridSpec(N), policy, cap)
        W = step.W
        return (lambda r: W[r]), GridSpec(N).points
    x = np.asarray(points, dtype=float)
    if x.shape == (N + 1,):
        x = x[:N]  # drop the right end point U_{N+1} = 1
    if x.shape != (N,):
        raise ConfigError(f"need {N} latent points, got shape {x.shape}")

    def rows(r):
        vals = np.asarray(g(x[r, None], x[None, :]), dtype=float)
        if cap is not None:
            vals = np.minimum(vals, cap)
        return np.where(np.isnan(vals), np.inf, vals)  # 0 * inf on the axes
    return rows, x


def sample_w_random(g: Graphon, N: int, beta: float, seed: int,
                    mode: str = "symmetric", points=None,
                    policy: str | None = None, cap: float | None = None) -> InteractionGraph:
    """W-random graph: ``zeta[i, j] ~ Bernoulli(min(beta g(x_i, x_j), 1))``.

    ``mode="symmetric"`` draws one coin per unordered pair ``i < j`` and
    leaves the diagonal empty; ``mode="directed"`` draws every ordered pair
    ``i != j`` independently. ``points`` is ``None``/``"grid"`` for
    ``x_i = (i-1)/N`` or an array of latent positions. Entry ``(i, j)`` is
    always driven by the same keyed uniform, so the graph does not depend on
    the block size used to generate it.
    """
    beta = check_beta(beta)
    if mode == "deterministic":
        return deterministic_graph(g, N, beta, policy=policy, cap=cap)
    if mode not in ("symmetric", "directed"):
        raise ConfigError(f"unknown graph mode {mode!r}")
    rowvals, x = _kernel_values(g, N, points, policy, cap)
    cols = np.arange(N, dtype=np.uint64)
    block = max(1, _BLOCK_ENTRIES // max(N, 1))
    rows_out, cols_out = [], []
    for s in range(0, N, block):
        r = np.arange(s, min(s + block, N))
        ri = r.astype(np.uint64)[:, None]
        if mode == "symmetric":
            key, ctr = np.minimum(ri, cols), np.maximum(ri, cols)
        else:
            key, ctr = np.broadcast_arrays(ri, cols[None, :])
        u = rng.uniforms(seed, rng.GRAPH, key, ctr)
        prob = np.minimum(beta * rowvals(r), 1.0)
        hit = u <= prob
        hit[np.arange(len(r)), r] = False
        i, j = np.nonzero(hit)
        rows_out.append(i + s)
        cols_out.append(j)
    rows_all = np.concatenate(rows_out)
    cols_all = np.concatenate(cols_out)
    zeta = sp.csr_matrix((np.ones(len(rows_all)), (rows_all, cols_all)), shape=(N, N))
    return InteractionGraph(zeta, beta, mode, points=x)


def deterministic_graph(g: Graphon, N: int, beta: float, policy: str | None = None,
                        cap: float | None = None) -> InteractionGraph:
    """``zeta = beta g_N`` with the diagonal kept; requires ``beta max g_N <= 1``."""
    beta = check_beta(beta)
    rowvals, x = _kernel_values(g, N, None, policy, cap)
    W = rowvals(np.arange(N))
    if not np.all(np.isfinite(W)):
        raise InvalidGraphon("discretised graphon is not finite")
    top = beta * W.max()
    if top > 1.0:
        raise WeightExceedsOne(f"beta * max g_N = {top} exceeds 1")
    zeta = sp.csr_matrix(beta * W)
    zeta.eliminate_zeros()
    return InteractionGraph(zeta, beta, "deterministic", points=x)


def expected_edge_probabilities(g: Graphon, N: int, beta: float, points=None,
                                policy=None, cap=None) -> np.ndarray:
    rowvals, _ = _kernel_values(g, N, points, policy, cap)
    return np.minimum(beta * rowvals(np.arange(N)), 1.0)


def graph_stats(graph: InteractionGraph) -> dict:
    deg = graph.degrees()
    N = graph.N
    pairs = N * (N - 1) if graph.mode != "deterministic" else N * N
    nnz = int(graph.zeta.nnz)
    return {
        "N": N,
        "beta": graph.beta,
        "mode": graph.mode,
        "nnz": nnz,
        "edges": nnz // 2 if graph.mode == "symmetric" else nnz,
        "degrees": deg,
        "density": nnz / pairs if pairs else 0.0,
        "degree_mean": float(deg.mean()) if N else 0.0,
        "degree_min": float(deg.min()) if N else 0.0,
        "degree_max": float(deg.max()) if N else 0.0,
        "norms": {p: graph_norm(graph, p) for p in (1, 2, 4)},
    }


def graph_norm(graph: InteractionGraph, p: float) -> float:
    """``(sum_ij |zeta_ij|^p / N^2)^(1/p)``, the L^p norm of the step graphon of the graph."""
    if graph.N == 0:
        return 0.0
    data = np.abs(graph.zeta.data)
    return (math.fsum(data ** p) / graph.N ** 2) ** (1.0 / p)
