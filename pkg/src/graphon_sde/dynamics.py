"""Coefficient models, keyed Brownian noise and Euler-Maruyama for the
N-particle system

    X^i_{k+1} = X^i_k + b(t_k, X^i_k, m^i_k) dt + sigma(t_k, X^i_k, m^i_k) dB^i_k,
    m^i_k = (1 / (N beta)) sum_j zeta_ij delta_{X^j_k}.

Coefficients only see a measure through linear features (total mass, first
moment, and sums of ``sin``/``cos`` of the atoms), so the interaction at each
step is one sparse matrix-feature product.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from .errors import ConfigError, DimensionMismatch, GridMismatch, NonFiniteState
from .expr import Expression
from .measures import DiscreteMeasure, dbl_exact

# feature name -> map applied to atoms of shape (P, n), returning (P, n) or (P,)
FEATURES = {
    "mass": lambda y: np.ones(y.shape[0]),
    "moment": lambda y: y,
    "sin": np.sin,
    "cos": np.cos,
}


class FeatureView:
    """Linear functionals of one interaction measure per particle.

    ``view["moment"]`` has shape ``(P, n)``, ``view["mass"]`` shape ``(P,)``.
    """

    def __init__(self, values: dict):
        self._values = values

    def __getitem__(self, name):
        try:
            return self._values[name]
        except KeyError:
            raise KeyError(f"feature {name!r} was not requested by the model") from None

    @property
    def total_mass(self):
        return self["mass"]

    @property
    def first_moment(self):
        return self["moment"]

    @property
    def bl_norm(self):
        return self["mass"]

    @classmethod
    def from_measures(cls, measures, names):
        vals = {name: np.array([_measure_feature(m, name) for m in measures])
                for name in names}
        return cls(vals)


def _measure_feature(mu: DiscreteMeasure, name):
    if len(mu) == 0:
        return 0.0 if name == "mass" else np.zeros(mu.dim)
    return mu.weights @ FEATURES[name](mu.atoms)


class FeatureLayout:
    """Column layout of the stacked feature matrix for a set of names."""

    def __init__(self, names, n):
        self.names = tuple(sorted(set(names)))
        self.n = n
        self.slices = {}
        col = 0
        for name in self.names:
            width = 1 if name == "mass" else n
            self.slices[name] = slice(col, col + width)
            col += width
        self.width = col

    def features(self, y):
        """``phi(y)`` for every particle: shape ``(P, width)``."""
        out = np.empty((y.shape[0], self.width))
        for name, sl in self.slices.items():
            out[:, sl] = np.reshape(FEATURES[name](y), (y.shape[0], -1))
        return out

    def view(self, sums):
        vals = {}
        for name, sl in self.slices.items():
            v = sums[..., sl]
            vals[name] = v[..., 0] if name == "mass" else v
        return FeatureView(vals)


# ------------------------------------------------------------- coefficients

class Drift:
    """Base drift ``b(t, x, view) -> (P, n)``.

    ``lipschitz`` bounds ``|b(t,x,mu) - b(t,y,nu)| / (|x-y| + d_BL(mu,nu))`` and
    ``growth`` bounds ``|b(t,x,mu)| / (1 + |x| + ||mu||_BL)``, both for
    measures of mass at most 1 supported in the unit ball.
    """

    features: tuple = ()
    lipschitz = 0.0
    growth = 0.0

    def __call__(self, t, x, view):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


class ZeroDrift(Drift):
    def __call__(self, t, x, view):
        return np.zeros_like(x)

    def to_dict(self):
        return {"kind": "zero"}


class LinearMean(Drift):
    """``b = a x + c int y mu(dy)``."""

    features = ("moment",)

    def __init__(self, a=-1.0, c=1.0):
        self.a, self.c = float(a), float(c)
        self.lipschitz = self.growth = max(abs(self.a), abs(self.c))
        if self.c == 0:
            self.features = ()

    def __call__(self, t, x, view):
        out = self.a * x
        if self.c:
            out = out + self.c * view["moment"]
        return out

    def to_dict(self):
        return {"kind": "linear_mean", "a": self.a, "c": self.c}


class Kuramoto(Drift):
    """``b = kappa int sin(y - x) mu(dy)`` on the line.

    Expanded as ``cos x * S_sin - sin x * S_cos`` with ``S_f = int f dmu``.
    """

    features = ("cos", "sin")

    def __init__(self, kappa=1.0):
        self.kappa = float(kappa)
        self.lipschitz = self.growth = abs(self.kappa)

    def __call__(self, t, x, view):
        return self.kappa * (np.cos(x) * view["sin"] - np.sin(x) * view["cos"])

    def to_dict(self):
        return {"kind": "kuramoto", "kappa": self.kappa}


class ExpressionDrift(Drift):
    """Componentwise drift from an expression in ``t, x, mass, m1``.

    ``m1`` is the first moment of the interaction measure in the same
    component. The Lipschitz and growth constants must be declared.
    """

    features = ("mass", "moment")

    def __init__(self, expr, lipschitz, growth):
        self.expr = Expression(expr, ("t", "x", "mass", "m1"))
        self.lipschitz, self.growth = float(lipschitz), float(growth)

    def __call__(self, t, x, view):
        mass = view["mass"][:, None]
        out = self.expr(t=t, x=x, mass=np.broadcast_to(mass, x.shape), m1=view["moment"])
        return np.broadcast_to(out, x.shape).astype(float)

    def to_dict(self):
        return {"kind": "expr", "expr": self.expr.source,
                "lipschitz": self.lipschitz, "growth": self.growth}


class Diffusion:
    """Base diffusion ``sigma(t, x, view) -> (P, n, m)``; constants as for :class:`Drift`
    with the Frobenius norm."""

    features: tuple = ()
    lipschitz = 0.0
    growth = 0.0

    def __call__(self, t, x, view, m):
        raise NotImplementedError


class ConstantSigma(Diffusion):
    def __init__(self, sigma0=1.0):
        self.sigma0 = float(sigma0)
        self.growth = abs(self.sigma0)

    def __call__(self, t, x, view, m):
        eye = np.eye(x.shape[1], m)
        return np.broadcast_to(self.sigma0 * eye, (x.shape[0],) + eye.shape)

    def to_dict(self):
        return {"kind": "constant_sigma", "sigma0": self.sigma0}


class MeanSigma(Diffusion):
    """``sigma = sigma0 (1 + tanh(mass of mu)) I``."""

    features = ("mass",)

    def __init__(self, sigma0=1.0):
        self.sigma0 = float(sigma0)
        # tanh is 1-Lipschitz and tanh(m) <= m for m >= 0
        self.lipschitz = self.growth = abs(self.sigma0)

    def __call__(self, t, x, view, m):
        eye = np.eye(x.shape[1], m)
        scale = self.sigma0 * (1.0 + np.tanh(view["mass"]))
        return scale[:, None, None] * eye

    def to_dict(self):
        return {"kind": "mean_sigma", "sigma0": self.sigma0}


@dataclass
class CoefficientModel:
    """Drift and diffusion on R^n driven by m-dimensional noise."""

    drift: Drift = field(default_factory=ZeroDrift)
    diffusion: Diffusion = field(default_factory=lambda: ConstantSigma(0.0))
    dim_state: int = 1
    dim_noise: int = 1

    def __post_init__(self):
        if isinstance(self.drift, Kuramoto) and self.dim_state != 1:
            raise DimensionMismatch("kuramoto drift is one-dimensional")
        self.layout = FeatureLayout(self.drift.features + self.diffusion.features,
                                    self.dim_state)

    @property
    def measure_dependent_sigma(self) -> bool:
        return bool(self.diffusion.features)

    @property
    def declared_lipschitz(self) -> float:
        return max(self.drift.lipschitz + self.diffusion.lipschitz,
                   self.drift.growth + self.diffusion.growth)

    @property
    def interacts(self) -> bool:
        return self.layout.width > 0

    def b(self, t, x, view):
        return self.drift(t, x, view)

    def sigma(self, t, x, view):
        return self.diffusion(t, x, view, self.dim_noise)

    def to_dict(self):
        return {"drift": self.drift.to_dict(), "diffusion": self.diffusion.to_dict(),
                "dim_state": self.dim_state, "dim_noise": self.dim_noise}

    @classmethod
    def from_dict(cls, desc):
        d = desc.get("drift", {"kind": "zero"})
        s = desc.get("diffusion", {"kind": "constant_sigma", "sigma0": 0.0})
        kind = d.get("kind")
        if kind == "zero":
            drift = ZeroDrift()
        elif kind == "linear_mean":
            drift = LinearMean(d.get("a", -1.0), d.get("c", 1.0))
        elif kind == "kuramoto":
            drift = Kuramoto(d.get("kappa", 1.0))
        elif kind == "expr":
            if "lipschitz" not in d or "growth" not in d:
                raise ConfigError("expression drift must declare lipschitz and growth")
            drift = ExpressionDrift(d["expr"], d["lipschitz"], d["growth"])
        else:
            raise ConfigError(f"unknown drift kind {kind!r}")
        kind = s.get("kind")
        if kind == "constant_sigma":
            diffusion = ConstantSigma(s.get("sigma0", 1.0))
        elif kind == "mean_sigma":
            diffusion = MeanSigma(s.get("sigma0", 1.0))
        else:
            raise ConfigError(f"unknown diffusion kind {kind!r}")
        n = int(desc.get("dim_state", 1))
        return cls(drift, diffusion, n, int(desc.get("dim_noise", n)))


@dataclass
class ValidationReport:
    declared: float
    max_lipschitz_ratio: float
    max_growth_ratio: float
    trials: int

    @property
    def ok(self) -> bool:
        return max(self.max_lipschitz_ratio, self.max_growth_ratio) <= 1.01 * self.declared


def _random_probe_measure(rs, n, max_atoms=5):
    k = rs.integers(1, max_atoms + 1)
    z = rs.standard_normal((k, n))
    z *= (rs.uniform(size=(k, 1)) ** (1.0 / n)) / np.linalg.norm(z, axis=1, keepdims=True)
    w = rs.uniform(size=k)
    w *= rs.uniform() / w.sum()
    return DiscreteMeasure(z, w)


def validate_coefficients(model: CoefficientModel, trials: int = 500,
                          seed: int = 0) -> ValidationReport:
    """Monte Carlo probe of the declared Lipschitz and growth constants.

    Probe measures have mass at most 1 and atoms in the closed unit ball;
    probe states range over ``|x| <= 5``. A third of the pairs perturb only
    the state, a third only the measure.
    """
    rs = np.random.default_rng(seed)
    n = model.dim_state
    names = model.layout.names
    lip = grow = 0.0
    for trial in range(trials):
        t = rs.uniform()
        x = rs.uniform(-5, 5, size=(1, n))
        mu = _random_probe_measure(rs, n)
        mode = trial % 3
        y = x if mode == 2 else x + rs.standard_normal((1, n)) * rs.choice([1e-3, 0.1, 1.0])
        nu = mu if mode == 1 else _random_probe_measure(rs, n)
        vm, vn = FeatureView.from_measures([mu], names), FeatureView.from_measures([nu], names)
        bx, by = model.b(t, x, vm)[0], model.b(t, y, vn)[0]
        sx, sy = model.sigma(t, x, vm)[0], model.sigma(t, y, vn)[0]
        dist = float(np.linalg.norm(x - y)) + (0.0 if nu is mu else dbl_exact(mu, nu))
        if dist > 0:
            gap = np.linalg.norm(bx - by) + np.linalg.norm(sx - sy)
            lip = max(lip, gap / dist)
        size = np.linalg.norm(bx) + np.linalg.norm(sx)
        grow = max(grow, size / (1.0 + np.linalg.norm(x) + mu.bl_norm))
    return ValidationReport(model.declared_lipschitz, lip, grow, trials)


# ------------------------------------------------------------------- noise

class BrownianDriver:
    """Keyed Brownian increments: ``dB[key, step, comp] ~ N(0, dt)``.

    The value depends only on ``(seed, key, step, comp)``. ``recorder``, if
    set to a list, receives ``(keys, step, increments)`` for every batch
    served, which lets tests compare the streams two consumers saw.
    """

    def __init__(self, seed: int, dt: float, dim_noise: int = 1, recorder=None):
        self.seed = rng.check_seed(seed)
        self.dt = float(dt)
        self.dim_noise = int(dim_noise)
        self.recorder = recorder

    def increments(self, keys, step: int) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.uint64)
        m = self.dim_noise
        ctr = np.uint64(step * m) + np.arange(m, dtype=np.uint64)[None, :]
        z = rng.normals(self.seed, rng.BROWNIAN, keys[:, None], ctr)
        out = math.sqrt(self.dt) * z
        if self.recorder is not None:
            self.recorder.append((keys.copy(), step, out.copy()))
        return out

    def increment_table(self, keys, steps: int) -> np.ndarray:
        """All increments for ``steps`` steps: shape ``(steps, P, m)``."""
        return np.stack([self.increments(keys, k) for k in range(steps)])


def brownian_increment(driver: BrownianDriver, particle_key: int, step: int,
                       component: int = 0) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if not 0 <= component < driver.dim_noise:
        raise ValueError("component out of range")
    ctr = np.uint64(step * driver.dim_noise + component)
    z = rng.normals(driver.seed, rng.BROWNIAN, np.array([particle_key], np.uint64),
                    np.array([ctr]))
    return float(math.sqrt(driver.dt) * z[0])


# ------------------------------------------------------- initial conditions

class InitialSampler:
    """Keyed initial laws.

    Kinds: ``point`` (``x0``), ``gaussian`` (``mean``, ``cov``), ``uniform``
    (``low``, ``high`` box) and ``table`` (one fixed value per index, looked
    up by latent position).
    """

    def __init__(self, kind="point", dim=1, seed=0, **params):
        self.kind, self.dim, self.seed = kind, int(dim), rng.check_seed(seed)
        self.params = params
        if kind == "point":
            self.x0 = np.broadcast_to(np.asarray(params.get("x0", 0.0), float), (self.dim,))
        elif kind == "gaussian":
            self.mean = np.broadcast_to(np.asarray(params.get("mean", 0.0), float), (self.dim,))
            cov = np.asarray(params.get("cov", 1.0), float)
            cov = cov * np.eye(self.dim) if cov.ndim < 2 else cov
            self.chol = np.linalg.cholesky(cov)
        elif kind == "uniform":
            self.low = np.broadcast_to(np.asarray(params.get("low", 0.0), float), (self.dim,))
            self.high = np.broadcast_to(np.asarray(params.get("high", 1.0), float), (self.dim,))
        elif kind == "table":
            tab = np.asarray(params["values"], float)
            self.table = tab.reshape(len(tab), self.dim)
        else:
            raise ConfigError(f"unknown initial law {kind!r}")

    def sample(self, keys, positions=None) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.uint64)
        P, n = len(keys), self.dim
        comp = np.arange(n, dtype=np.uint64)[None, :]
        if self.kind == "point":
            return np.tile(self.x0, (P, 1))
        if self.kind == "gaussian":
            z = rng.normals(self.seed, rng.INIT, keys[:, None], comp)
            return self.mean + z @ self.chol.T
        if self.kind == "uniform":
            u = rng.uniforms(self.seed, rng.INIT, keys[:, None], comp)
            return self.low + (self.high - self.low) * u
        if positions is None:
            raise ConfigError("table initial law needs latent positions")
        pos = np.asarray(positions, float)
        idx = np.clip((pos * len(self.table)).astype(int), 0, len(self.table) - 1)
        return self.table[idx].copy()

    def moment(self, k: int) -> float:
        """``sup_x E|xi^x|^k``, exact for point and table laws, a bound otherwise."""
        if self.kind == "point":
            return float(np.linalg.norm(self.x0) ** k)
        if self.kind == "table":
            return float(np.max(np.linalg.norm(self.table, axis=1) ** k))
        if self.kind == "uniform":
            return float(np.linalg.norm(np.maximum(abs(self.low), abs(self.high))) ** k)
        # |m + L z|^k <= 2^(k-1) (|m|^k + ||L||^k E|z|^k), E|z|^k for z ~ N(0, I_n)
        ez = 2 ** (k / 2) * math.gamma((self.dim + k) / 2) / math.gamma(self.dim / 2)
        return float(2 ** (k - 1) * (np.linalg.norm(self.mean) ** k
                                     + np.linalg.norm(self.chol, 2) ** k * ez))

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim, "seed": self.seed}
        out.update({k: np.asarray(v).tolist() for k, v in self.params.items()})
        return out

    @classmethod
    def from_dict(cls, desc, seed=None):
        desc = dict(desc)
        kind = desc.pop("kind", "point")
        dim = desc.pop("dim", 1)
        s = desc.pop("seed", 0)
        return cls(kind, dim, s if seed is None else seed, **desc)


# -------------------------------------------------------------- integration

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / S``, k = 0..S."""

    T: float = 1.0
    S: int = 200

    def __post_init__(self):
        if not self.T > 0 or self.S < 1:
            raise ConfigError("time grid needs T > 0 and S >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.S

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.S + 1) * self.dt

    def checkpoints(self, count: int = 5) -> np.ndarray:
        """``count`` step indices spread over (0, T], the last one at T."""
        return np.unique(np.round(np.arange(1, count + 1) * self.S / count).astype(int))


@dataclass
class PathEnsemble:
    """States of shape ``(P, S + 1, n)`` on ``times`` for ``keys``."""

    times: np.ndarray
    states: np.ndarray
    keys: np.ndarray

    @property
    def N(self):
        return self.states.shape[0]

    def at(self, step):
        return self.states[:, step]

    def to_csv(self, path, thin: int = 1):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = self.states.shape[2]
            w.writerow(["step", "time", "particle"] + [f"x{c + 1}" for c in range(n)])
            for k in range(0, len(self.times), thin):
                for p in range(self.N):
                    w.writerow([k, repr(float(self.times[k])), p]
                               + [repr(float(v)) for v in self.states[p, k]])


def _check_driver(grid: TimeGrid, driver: BrownianDriver, model: CoefficientModel):
    if not math.isclose(driver.dt, grid.dt, rel_tol=1e-12):
        raise GridMismatch(f"driver dt {driver.dt} differs from grid dt {grid.dt}")
    if driver.dim_noise != model.dim_noise:
        raise DimensionMismatch("driver and model disagree on the noise dimension")


def integrate_paths(x0, model, grid, driver, keys, interaction):
    """Euler-Maruyama for ``P`` particles.

    ``interaction(step, X)`` returns the stacked feature sums ``(P, width)``
    at the current state. Shared by the finite system and the limit solver.
    """
    P, n = x0.shape
    states = np.empty((P, grid.S + 1, n))
    states[:, 0] = x0
    x = np.array(x0, dtype=float)
    times = grid.times
    empty = FeatureView({})
    for k in range(grid.S):
        view = model.layout.view(interaction(k, x)) if model.interacts else empty
        t = times[k]
        b = model.b(t, x, view)
        s = model.sigma(t, x, view)
        dw = driver.increments(keys, k)
        x = _kernels.euler_step(x, np.asarray(b, float), np.asarray(s, float), dw, grid.dt)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(k + 1)
        states[:, k + 1] = x
    return states


def simulate_particle_system(graph, model: CoefficientModel, init: InitialSampler,
                             grid: TimeGrid, driver: BrownianDriver,
                             x0=None) -> PathEnsemble:
    """Euler-Maruyama for the graph-interacting system (particle ``i`` has key ``i``).

    ``x0`` overrides the initial values drawn from ``init``.
    """
    _check_driver(grid, driver, model)
    N = graph.N
    keys = rng.check_coupled_keys(np.arange(N, dtype=np.uint64))
    if x0 is None:
        positions = graph.points if graph.points is not None else np.arange(N) / N
        x0 = init.sample(keys, positions)
    x0 = np.asarray(x0, float).reshape(N, model.dim_state)
    Wm = graph.interaction_matrix()
    layout = model.layout

    def interaction(k, x):
        return _kernels.csr_feature_sums(Wm.indptr, Wm.indices, Wm.data, layout.features(x))

    states = integrate_paths(x0, model, grid, driver, keys, interaction)
    return PathEnsemble(grid.times, states, keys)


def particle_moments(ensemble: PathEnsemble, k: float) -> float:
    """``(1/N) sum_i sup_t |X^i_t|^k`` with the sup over the grid."""
    if k < 1:
        raise ValueError("k must be >= 1")
    norms = np.linalg.norm(ensemble.states, axis=2)
    return float(np.mean(np.max(norms, axis=1) ** k))


def moment_profile(ensemble: PathEnsemble, k: float) -> np.ndarray:
    """``(1/N) sum_i |X^i_t|^k`` at every grid time."""
    return np.mean(np.linalg.norm(ensemble.states, axis=2) ** k, axis=0)
