"""Numerical graphon SDE: block-constant laws, Picard iteration and coupled
limit trajectories.

Particle ``x`` of the limit interacts through
``nu^x_t = int g(x, y) Law(X^y_t) dy``. With a step kernel the law of
``X^y`` only depends on the block of ``y``, so each block carries a cloud of
``M`` auxiliary samples. A Picard step freezes the laws of the previous
iterate, integrates the auxiliary samples against them on fixed noise, and
repeats until successive iterates agree.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from .dynamics import (
    BrownianDriver,
    CoefficientModel,
    InitialSampler,
    PathEnsemble,
    TimeGrid,
    _check_driver,
    integrate_paths,
)
from .errors import ConfigError, DimensionMismatch, GridMismatch
from .graphon import StepGraphon
from .measures import DiscreteMeasure, dbl_exact, graphon_integral_measure, weighted_empirical


@dataclass
class BlockLawTable:
    """Samples of shape ``(K, S + 1, M, n)``; each block law is the uniform
    empirical measure of its ``M`` samples at every grid time."""

    samples: np.ndarray
    gN: StepGraphon
    grid: TimeGrid

    def __post_init__(self):
        K, S1, M, _ = self.samples.shape
        if K != self.gN.K:
            raise DimensionMismatch(f"{K} sample blocks for a {self.gN.K}-block graphon")
        if S1 != self.grid.S + 1:
            raise GridMismatch("law table and time grid disagree")

    @property
    def K(self):
        return self.samples.shape[0]

    @property
    def M(self):
        return self.samples.shape[2]

    @property
    def dim(self):
        return self.samples.shape[3]

    def block_law(self, k: int, step: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.samples[k, step], np.full(self.M, 1.0 / self.M))

    def block_laws(self, step: int):
        return [self.block_law(k, step) for k in range(self.K)]

    def block_means(self, step: int) -> np.ndarray:
        return self.samples[:, step].mean(axis=1)

    def block_feature_means(self, layout) -> np.ndarray:
        """``E phi(X)`` per time and block: shape ``(S + 1, K, width)``."""
        K, S1, M, n = self.samples.shape
        phi = layout.features(self.samples.reshape(-1, n)).reshape(K, S1, M, -1)
        return phi.mean(axis=2).transpose(1, 0, 2)

    def mixture(self, step: int) -> DiscreteMeasure:
        """``int Law(X^y_t) dy`` as one measure of mass 1."""
        w = np.repeat(self.gN.lengths / self.M, self.M)
        return DiscreteMeasure(self.samples[:, step].reshape(-1, self.dim), w)

    def to_text(self) -> str:
        """One ``block step sample x1..xn`` line per stored value."""
        K, S1, M, n = self.samples.shape
        idx = np.indices((K, S1, M)).reshape(3, -1).T
        vals = self.samples.reshape(-1, n)
        buf = io.StringIO()
        for (k, s, m), v in zip(idx, vals):
            buf.write(f"{k} {s} {m} " + " ".join(repr(float(c)) for c in v) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, gN: StepGraphon, grid: TimeGrid) -> "BlockLawTable":
        body = np.loadtxt(io.StringIO(text), ndmin=2)
        idx = body[:, :3].astype(int)
        K, S1, M = idx.max(axis=0) + 1
        samples = np.empty((K, S1, M, body.shape[1] - 3))
        samples[idx[:, 0], idx[:, 1], idx[:, 2]] = body[:, 3:]
        return cls(samples, gN, grid)


@dataclass
class PicardState:
    iteration: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    tol: float = 1e-6

    def summary(self) -> dict:
        return {"iterations": self.iteration, "residuals": list(self.residuals),
                "converged": self.converged, "tol": self.tol}


def limit_blocks(g_is_constant: bool, N: int, max_blocks: int = 256,
                 factor: int = 4, min_samples: int = 4):
    """Default ``(K, M)`` for a finite system of size ``N``: one block of
    ``factor * N`` samples for constant kernels, else ``K = min(N, max_blocks)``
    blocks with ``K * M >= factor * N``."""
    if g_is_constant:
        return 1, factor * N
    K = min(N, max_blocks)
    return K, max(min_samples, -(-factor * N // K))


def _aux_keys(K, M):
    blocks = np.repeat(np.arange(K, dtype=np.uint64), M)
    samples = np.tile(np.arange(M, dtype=np.uint64), K)
    return rng.aux_key(blocks, samples)


def _kernel_rows(gN: StepGraphon, blocks):
    """``|B_j| g_N(x, x_j)`` for the block of each particle: ``(P, K)``."""
    return gN.W[blocks] * gN.lengths[None, :]


def _frozen_interaction(rows, feats):
    """``interaction(step, x)`` using precomputed block feature means."""
    def interaction(k, x):
        return rows @ feats[k]
    return interaction


def solve_graphon_sde(gN: StepGraphon, model: CoefficientModel, init: InitialSampler,
                      grid: TimeGrid, M: int, seed: int, max_iters: int = 50,
                      tol: float = 1e-6, driver: BrownianDriver | None = None):
    """Picard iteration for the block law table.

    Auxiliary sample ``s`` of block ``k`` uses the key ``aux_key(k, s)`` for
    its initial value and Brownian path; the same noise serves every
    iteration. Iterate 0 freezes the initial laws in time. The residual is
    the mean over samples of the squared sup-over-grid gap between
    successive iterates; without interaction the map is constant and the
    first iterate is the fixed point. Non-convergence is reported through
    ``PicardState.converged`` rather than raised.
    """
    if M < 2:
        raise ConfigError("need at least 2 samples per block")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    driver = driver or BrownianDriver(seed, grid.dt, model.dim_noise)
    _check_driver(grid, driver, model)
    K, n = gN.K, model.dim_state
    keys = _aux_keys(K, M)
    x0 = init.sample(keys, np.repeat(gN.left_points, M))
    # shared noise across iterations
    dw = driver.increment_table(keys, grid.S)

    class _Replay:
        dim_noise = driver.dim_noise

        @staticmethod
        def increments(_keys, step):
            return dw[step]

    samples = np.broadcast_to(x0.reshape(K, 1, M, n), (K, grid.S + 1, M, n)).copy()
    table = BlockLawTable(samples, gN, grid)
    state = PicardState(tol=tol)
    rows = np.repeat(_kernel_rows(gN, np.arange(K)), M, axis=0)
    constant_map = not model.interacts or not np.any(gN.W)
    for it in range(1, max_iters + 1):
        feats = table.block_feature_means(model.layout) if model.interacts else None
        paths = integrate_paths(x0, model, grid, _Replay, keys,
                                _frozen_interaction(rows, feats))
        new = paths.reshape(K, M, grid.S + 1, n).transpose(0, 2, 1, 3)
        gap = _kernels.sup_gap(paths, table.samples.transpose(0, 2, 1, 3).reshape(K * M, grid.S + 1, n), 2.0)
        res = float(np.mean(gap))
        table = BlockLawTable(np.ascontiguousarray(new), gN, grid)
        state.iteration = it
        if constant_map:
            # psi ignores its argument, so the next iterate equals this one
            res = 0.0
        state.residuals.append(res)
        if res < tol:
            state.converged = True
            break
    return table, state


def coupled_limit_trajectories(laws: BlockLawTable, model: CoefficientModel,
                               x0, driver: BrownianDriver, particle_keys,
                               positions) -> PathEnsemble:
    """Limit particles ``X^{x_i}`` driven by the same keyed noise as the finite
    system, interacting through the frozen laws ``laws``."""
    grid, gN = laws.grid, laws.gN
    _check_driver(grid, driver, model)
    keys = rng.check_coupled_keys(particle_keys)
    x0 = np.asarray(x0, float).reshape(len(keys), model.dim_state)
    blocks = gN.block_of(np.asarray(positions, float))
    rows = _kernel_rows(gN, blocks)
    feats = laws.block_feature_means(model.layout) if model.interacts else None
    states = integrate_paths(x0, model, grid, driver, keys, _frozen_interaction(rows, feats))
    return PathEnsemble(grid.times, states, keys)


def coupling_error(finite: PathEnsemble, limit: PathEnsemble, order: int = 1):
    """``(1/N) sum_i sup_t |X^{i,N}_t - X^{i,g}_t|^order`` and the per-time profile
    ``(1/N) sum_i |X^{i,N}_t - X^{i,g}_t|^order``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if finite.states.shape != limit.states.shape:
        raise DimensionMismatch(f"ensembles differ in shape: {finite.states.shape} "
                                f"vs {limit.states.shape}")
    if not np.array_equal(finite.times, limit.times):
        raise GridMismatch("ensembles live on different grids")
    sup = _kernels.sup_gap(finite.states, limit.states, float(order))
    profile = np.mean(np.linalg.norm(finite.states - limit.states, axis=2) ** order, axis=0)
    return float(np.mean(sup)), profile


def _subsample(mu: DiscreteMeasure, cap: int, rs) -> DiscreteMeasure:
    """At most ``cap`` atoms drawn without replacement, reweighted to keep the mass."""
    if len(mu) <= cap:
        return mu
    idx = rs.choice(len(mu), size=cap, replace=False)
    w = mu.weights[idx]
    scale = mu.total_mass / w.sum() if w.sum() > 0 else 0.0
    return DiscreteMeasure(mu.atoms[idx], w * scale)


def measure_error(graph, states, laws: BlockLawTable, step: int, positions,
                  particles: int | None = 64, atoms_per_side: int = 256,
                  seed: int = 0) -> float:
    """``(1/N) sum_i d_BL(m^{i,N}_t, nu^{x_i}_t)`` over a fixed-seed subsample of
    particles; measures with more than ``atoms_per_side`` atoms are
    subsampled and reweighted to their exact mass. ``states`` is either the
    ``(N, n)`` snapshot or the full ``(N, S + 1, n)`` path array."""
    rs = np.random.default_rng(seed)
    N = graph.N
    states = np.asarray(states, float)
    if states.ndim == 3:
        states = states[:, step]
    idx = np.arange(N) if particles is None or particles >= N else np.sort(
        rs.choice(N, size=particles, replace=False))
    positions = np.asarray(positions, float)
    block_laws = laws.block_laws(step)
    cap = 2 * atoms_per_side
    total = 0.0
    for i in idx:
        mu = _subsample(weighted_empirical(graph, int(i), states), atoms_per_side, rs)
        nu = _subsample(graphon_integral_measure(laws.gN, positions[i], block_laws),
                        atoms_per_side, rs)
        total += dbl_exact(mu, nu, cap=cap)
    return total / len(idx)


def write_law_table(laws: BlockLawTable, state: PicardState, prefix):
    """``<prefix>.txt`` law table plus ``<prefix>.json`` summary."""
    with open(f"{prefix}.txt", "w") as fh:
        fh.write(laws.to_text())
    summary = {"K": laws.K, "M": laws.M, "dim": laws.dim, "T": laws.grid.T,
               "S": laws.grid.S, "graphon": laws.gN.to_dict(), **state.summary()}
    with open(f"{prefix}.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
