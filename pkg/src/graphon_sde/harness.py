"""Experiment orchestration: convergence sweeps, rate fits, graphon
stability, weak law of large numbers, and report files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .dynamics import (
    BrownianDriver,
    CoefficientModel,
    InitialSampler,
    TimeGrid,
    particle_moments,
    simulate_particle_system,
)
from .errors import ConfigError, DegenerateFit
from .graphon import Constant, Graphon, StepGraphon, discretize, from_dict, lp_distance
from .graphs import SparsitySchedule, deterministic_graph, sample_random_points, sample_w_random
from .limitsolver import (
    coupled_limit_trajectories,
    coupling_error,
    limit_blocks,
    measure_error,
    solve_graphon_sde,
)
from .measures import DiscreteMeasure, dbl_exact

KINDS = ("converge", "rate", "stability", "wlln", "moments")
CSV_COLUMNS = ("N", "beta", "n_beta", "seeds", "err_l1", "err_l1_se", "err_l2",
               "err_l2_se", "err_dbl", "err_dbl_se", "wall_ms")


@dataclass
class ExperimentConfig:
    """Everything needed to re-run an experiment; round-trips through JSON."""

    kind: str = "converge"
    graphon: dict = field(default_factory=lambda: {"kind": "constant", "c": 1.0})
    schedule: dict = field(default_factory=lambda: {"form": "constant", "beta": 1.0})
    mode: str = "symmetric"
    points: str = "grid"
    singular_policy: str | None = None
    clamp_cap: float | None = None
    N_list: list = field(default_factory=lambda: [50, 100, 200, 400])
    M: int | None = None
    max_blocks: int = 256
    samples_factor: int = 4
    T: float = 1.0
    S: int = 200
    model: dict = field(default_factory=lambda: {
        "drift": {"kind": "linear_mean", "a": -1.0, "c": 1.0},
        "diffusion": {"kind": "constant_sigma", "sigma0": 1.0}})
    init: dict = field(default_factory=lambda: {"kind": "gaussian", "mean": 0.0, "cov": 1.0})
    seeds: list = field(default_factory=lambda: list(range(20)))
    orders: list = field(default_factory=lambda: [1, 2])
    checkpoints: int = 5
    measure_error: bool = True
    measure_particles: int = 32
    measure_atoms: int = 256
    picard_max_iters: int = 50
    picard_tol: float = 1e-6
    eps_list: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    eta_list: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    workers: int = 1
    deterministic_output: bool = True
    out: str | None = None

    @classmethod
    def from_dict(cls, desc: dict) -> "ExperimentConfig":
        if "config" in desc and isinstance(desc["config"], dict):
            desc = desc["config"]  # a meta.json from a previous run
        known = set(cls.__dataclass_fields__)
        unknown = set(desc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**desc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                desc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(desc)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out", None)
        d.pop("workers", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # derived objects
    def make_graphon(self) -> Graphon:
        return from_dict(self.graphon)

    def make_schedule(self) -> SparsitySchedule:
        return SparsitySchedule.from_dict(self.schedule)

    def make_model(self) -> CoefficientModel:
        return CoefficientModel.from_dict(self.model)

    def make_grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.S)

    def make_init(self, seed) -> InitialSampler:
        return InitialSampler.from_dict(dict(self.init, dim=self.make_model().dim_state),
                                        seed=seed)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.mode not in ("symmetric", "directed", "deterministic"):
            raise ConfigError(f"unknown graph mode {self.mode!r}")
        if self.points not in ("grid", "random"):
            raise ConfigError("points must be 'grid' or 'random'")
        if not self.N_list or any(int(n) < 2 for n in self.N_list):
            raise ConfigError("N_list needs entries >= 2")
        if list(self.N_list) != sorted(set(self.N_list)):
            raise ConfigError("N_list must be strictly increasing")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if any(o not in (1, 2) for o in self.orders):
            raise ConfigError("error orders must be 1 or 2")
        g = self.make_graphon()
        sched = self.make_schedule()
        for N in self.N_list:
            sched(N)  # raises on beta outside [1e-9, 1]
        model = self.make_model()
        self.make_grid()
        self.make_init(0)
        if model.measure_dependent_sigma and sched.exponent >= 0.5:
            raise ConfigError("measure-dependent sigma needs N beta_N^2 -> infinity "
                              f"(schedule exponent {sched.exponent} >= 1/2)")
        if self.kind in ("rate", "wlln") and not g.lipschitz:
            raise ConfigError(f"{self.kind} experiments need a Lipschitz graphon, "
                              f"{g.kind} is not flagged Lipschitz")
        if self.kind == "wlln" and self.points != "random":
            raise ConfigError("wlln experiments use random latent points")
        if self.kind == "stability" and not all(e > 0 for e in self.eps_list):
            raise ConfigError("stability perturbations must be positive")
        if self.M is not None and self.M < 2:
            raise ConfigError("M must be >= 2")
        return self


# ------------------------------------------------------------ single runs

def _limit_graphon(g: Graphon, cfg: ExperimentConfig, N: int):
    """Step kernel and samples per block used by the limit solver."""
    if isinstance(g, Constant):
        K, M = limit_blocks(True, N, cfg.max_blocks, cfg.samples_factor)
        gN = StepGraphon([[g.c]])
    elif isinstance(g, StepGraphon) and g.K <= cfg.max_blocks:
        gN = g
        K, M = g.K, max(4, -(-cfg.samples_factor * N // g.K))
    else:
        K, M = limit_blocks(False, N, cfg.max_blocks, cfg.samples_factor)
        gN = discretize(g, K, cfg.singular_policy, cfg.clamp_cap)
    return gN, (cfg.M or M)


def _build_graph(g, cfg, N, beta, seed):
    if cfg.mode == "deterministic":
        return deterministic_graph(g, N, beta, cfg.singular_policy, cfg.clamp_cap)
    pts = sample_random_points(N, seed) if cfg.points == "random" else None
    return sample_w_random(g, N, beta, seed, cfg.mode, pts, cfg.singular_policy, cfg.clamp_cap)


def run_single(cfg: ExperimentConfig, N: int, seed: int) -> dict:
    """One finite system and its coupled limit for a given ``N`` and seed."""
    t0 = time.perf_counter()
    g, model, grid = cfg.make_graphon(), cfg.make_model(), cfg.make_grid()
    beta = cfg.make_schedule()(N)
    graph = _build_graph(g, cfg, N, beta, seed)
    init = cfg.make_init(seed)
    driver = BrownianDriver(seed, grid.dt, model.dim_noise)
    finite = simulate_particle_system(graph, model, init, grid, driver)
    gN, M = _limit_graphon(g, cfg, N)
    laws, state = solve_graphon_sde(gN, model, init, grid, M, seed,
                                    cfg.picard_max_iters, cfg.picard_tol, driver)
    limit = coupled_limit_trajectories(laws, model, finite.states[:, 0], driver,
                                       finite.keys, graph.points)
    out = {"N": N, "seed": seed, "beta": beta, "picard_iterations": state.iteration,
           "picard_converged": state.converged}
    for order in (1, 2):
        err, profile = coupling_error(finite, limit, order)
        out[f"err_l{order}"] = err
        out[f"profile_l{order}"] = profile[grid.checkpoints(cfg.checkpoints)].tolist()
    if cfg.measure_error:
        errs = [measure_error(graph, finite.states[:, k], laws, int(k), graph.points,
                              cfg.measure_particles, cfg.measure_atoms, seed)
                for k in grid.checkpoints(cfg.checkpoints)]
        out["err_dbl"] = errs[-1]
        out["profile_dbl"] = errs
    else:
        out["err_dbl"] = math.nan
    out["moment2"] = particle_moments(finite, 2)
    out["moment4"] = particle_moments(finite, 4)
    out["wall_ms"] = (time.perf_counter() - t0) * 1e3
    return out


def _run_jobs(fn, jobs, workers):
    """Order-stable map over jobs, in a process pool when ``workers > 1``."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def _mean_se(values):
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        return math.nan, math.nan
    se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
    return float(np.mean(v)), se


@dataclass
class ConvergenceReport:
    rows: list
    runs: list
    config: ExperimentConfig
    kind: str = "converge"
    dim: int = 1

    def column(self, name):
        return np.array([r[name] for r in self.rows], float)


def run_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    cfg.validate()
    _kernels.set_threads(cfg.workers)
    jobs = [(cfg, int(N), int(s)) for N in cfg.N_list for s in cfg.seeds]
    runs = _run_jobs(run_single, jobs, cfg.workers)
    rows = []
    for N in cfg.N_list:
        rs = [r for r in runs if r["N"] == N]
        beta = rs[0]["beta"]
        row = {"N": int(N), "beta": beta, "n_beta": N * beta, "seeds": len(rs)}
        for name in ("err_l1", "err_l2", "err_dbl"):
            row[name], row[f"{name}_se"] = _mean_se([r[name] for r in rs])
        row["wall_ms"] = float(sum(r["wall_ms"] for r in rs))
        row["moment2"], row["moment2_se"] = _mean_se([r["moment2"] for r in rs])
        row["moment4"], row["moment4_se"] = _mean_se([r["moment4"] for r in rs])
        rows.append(row)
    return ConvergenceReport(rows, runs, cfg, cfg.kind, cfg.make_model().dim_state)


@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float
    envelope: float

    def as_dict(self):
        return asdict(self)


def estimate_rate(report, column: str = "err_l1", dim: int | None = None) -> RateFit:
    """Least squares of ``log(error)`` on ``log(N beta_N)``.

    ``envelope`` is the exponent ``-1/(2(n+1))`` of the known upper bound,
    for display only.
    """
    rows = report.rows if isinstance(report, ConvergenceReport) else list(report)
    n = dim if dim is not None else getattr(report, "dim", 1)
    if len(rows) < 4:
        raise DegenerateFit(f"need at least 4 rows for a rate fit, got {len(rows)}")
    x = np.log([r["n_beta"] for r in rows])
    y = np.array([r[column] for r in rows], float)
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DegenerateFit("rate fit needs finite positive errors")
    y = np.log(y)
    if np.ptp(x) == 0:
        raise DegenerateFit("all rows share the same N beta_N")
    fit = stats.linregress(x, y)
    if np.ptp(y) == 0:
        r2 = 1.0  # a constant is fitted exactly
    else:
        r2 = float(fit.rvalue ** 2)
    return RateFit(float(fit.slope), float(fit.intercept), r2, -1.0 / (2 * (n + 1)))


# ---------------------------------------------------------------- stability

@dataclass
class StabilityReport:
    rows: list
    config: ExperimentConfig
    kind: str = "stability"


def _stability_single(cfg, seed, N):
    g = cfg.make_graphon()
    model, grid = cfg.make_model(), cfg.make_grid()
    gN, M = _limit_graphon(g, cfg, N)
    init = cfg.make_init(seed)
    base, _ = solve_graphon_sde(gN, model, init, grid, M, seed,
                                cfg.picard_max_iters, cfg.picard_tol)
    out = []
    for eps in cfg.eps_list:
        hN = gN + eps
        other, _ = solve_graphon_sde(hN, model, init, grid, M, seed,
                                     cfg.picard_max_iters, cfg.picard_tol)
        d = np.linalg.norm(base.samples - other.samples, axis=3)  # (K, S+1, M)
        gap = float(np.mean(np.max(d, axis=1) ** 2))
        out.append({"eps": eps, "l2": lp_distance(gN, hN, 2), "gap": gap})
    return out


def run_stability(cfg: ExperimentConfig) -> StabilityReport:
    """Limit systems for ``g`` and ``h = g + eps`` on shared auxiliary noise;
    reports mean-square sup gap over ``||g - h||_2^2``. Uses ``N_list[0]``
    to size the law tables."""
    cfg.validate()
    N = int(cfg.N_list[0])
    per_seed = _run_jobs(_stability_single, [(cfg, int(s), N) for s in cfg.seeds], cfg.workers)
    rows = []
    for j, eps in enumerate(cfg.eps_list):
        gaps = [r[j]["gap"] for r in per_seed]
        l2 = per_seed[0][j]["l2"]
        ratios = [gp / l2 ** 2 for gp in gaps]
        gap, gap_se = _mean_se(gaps)
        ratio, ratio_se = _mean_se(ratios)
        rows.append({"eps": eps, "l2_dist": l2, "seeds": len(gaps), "gap": gap,
                     "gap_se": gap_se, "ratio": ratio, "ratio_se": ratio_se})
    return StabilityReport(rows, cfg)


def ratio_spread(report: StabilityReport) -> float:
    """``(max - min) / max`` of the mean ratios across perturbation sizes."""
    r = np.array([row["ratio"] for row in report.rows])
    return float((r.max() - r.min()) / r.max()) if r.max() > 0 else 0.0


# --------------------------------------------------------------------- wlln

@dataclass
class WLLNReport:
    rows: list
    runs: list
    config: ExperimentConfig
    kind: str = "wlln"


def _wlln_single(cfg, N, seed):
    g, model, grid = cfg.make_graphon(), cfg.make_model(), cfg.make_grid()
    beta = cfg.make_schedule()(N)
    graph = _build_graph(g, cfg, N, beta, seed)
    init = cfg.make_init(seed)
    driver = BrownianDriver(seed, grid.dt, model.dim_noise)
    finite = simulate_particle_system(graph, model, init, grid, driver)
    gN, M = _limit_graphon(g, cfg, N)
    laws, _ = solve_graphon_sde(gN, model, init, grid, M, seed,
                                cfg.picard_max_iters, cfg.picard_tol, driver)
    xT = finite.states[:, -1]
    law_mean = gN.lengths @ laws.block_means(grid.S)
    diff = float(np.linalg.norm(xT.mean(axis=0) - law_mean))
    rs = np.random.default_rng(seed)
    cap = cfg.measure_atoms
    emp = DiscreteMeasure(xT)
    mix = laws.mixture(grid.S)
    if len(emp) > cap:
        emp = DiscreteMeasure(xT[rs.choice(N, cap, replace=False)])
    if len(mix) > cap:
        idx = rs.choice(len(mix), cap, replace=False)
        mix = DiscreteMeasure(mix.atoms[idx])
    return {"N": N, "seed": seed, "diff": diff, "dbl": dbl_exact(emp, mix, cap=2 * cap)}


def run_wlln(cfg: ExperimentConfig) -> WLLNReport:
    """``|(1/N) sum_i X^i_T - int E X^y_T dy|`` per seed and exceedance
    frequencies over ``eta_list``; also ``d_BL`` of the empirical measure to the
    law mixture."""
    cfg.validate()
    jobs = [(cfg, int(N), int(s)) for N in cfg.N_list for s in cfg.seeds]
    runs = _run_jobs(_wlln_single, jobs, cfg.workers)
    rows = []
    for N in cfg.N_list:
        rs = [r for r in runs if r["N"] == N]
        diffs = np.array([r["diff"] for r in rs])
        row = {"N": int(N), "seeds": len(rs)}
        row["diff"], row["diff_se"] = _mean_se(diffs)
        row["dbl"], row["dbl_se"] = _mean_se([r["dbl"] for r in rs])
        for eta in cfg.eta_list:
            row[f"exceed_{eta:g}"] = float(np.mean(diffs > eta))
        rows.append(row)
    return WLLNReport(rows, runs, cfg)


# ----------------------------------------------------------------- reports

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def report_csv(report) -> str:
    """CSV text; convergence reports use the fixed column schema."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(report, ConvergenceReport):
        cols = CSV_COLUMNS
        hide_wall = report.config.deterministic_output
    else:
        cols = tuple(report.rows[0]) if report.rows else ()
        hide_wall = False
    w.writerow(cols)
    for row in report.rows:
        w.writerow(["" if (c == "wall_ms" and hide_wall) else _fmt(row[c]) for c in cols])
    return buf.getvalue()


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=os.path.dirname(__file__), capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _svg_plot(rows, fit: RateFit | None, width=480, height=360) -> str:
    """Log-log error against N beta_N with an envelope line."""
    pts = [(r["n_beta"], r["err_l1"], r.get("err_l1_se", 0.0)) for r in rows
           if r["err_l1"] and r["err_l1"] > 0 and math.isfinite(r["err_l1"])]
    pad = 50
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad / 2}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad / 2}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">'
             'log N beta_N</text>',
             f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
             'text-anchor="middle">log L1 error</text>']
    if pts:
        lx = np.log([p[0] for p in pts])
        ly = np.log([p[1] for p in pts])
        env = None
        if fit is not None:
            env = ly[0] + fit.envelope * (lx - lx[0])
            lo_y, hi_y = min(ly.min(), env.min()), max(ly.max(), env.max())
        else:
            lo_y, hi_y = ly.min(), ly.max()
        lo_x, hi_x = lx.min(), lx.max()
        sx = (width - 1.5 * pad) / (hi_x - lo_x or 1.0)
        sy = (height - 1.5 * pad) / (hi_y - lo_y or 1.0)

        def xy(a, b):
            return pad + (a - lo_x) * sx, height - pad - (b - lo_y) * sy

        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(a, b) for a, b in zip(lx, ly)))
        lines.append(f'<polyline class="error" points="{coords}" fill="none" '
                     'stroke="steelblue" stroke-width="2"/>')
        for (a, b), (_, e, se) in zip(zip(lx, ly), pts):
            x, y = xy(a, b)
            lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="steelblue"/>')
            if se and math.isfinite(se) and e - se > 0:
                _, y_lo = xy(a, math.log(e - se))
                _, y_hi = xy(a, math.log(e + se))
                lines.append(f'<line x1="{x:.2f}" y1="{y_lo:.2f}" x2="{x:.2f}" '
                             f'y2="{y_hi:.2f}" stroke="steelblue"/>')
        if env is not None:
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(a, b) for a, b in zip(lx, env)))
            lines.append(f'<polyline class="envelope" points="{coords}" fill="none" '
                         'stroke="gray" stroke-dasharray="6 4"/>')
            lines.append(f'<text class="envelope" x="{width - pad}" y="{pad / 2 + 12}" '
                         f'text-anchor="end" font-size="12">envelope slope {fit.envelope:g}; '
                         f'fitted slope {fit.slope:.3f}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_report(report, out_dir) -> dict:
    """Write ``report.csv``, ``meta.json`` and ``plot.svg`` into ``out_dir``.

    With ``deterministic_output`` (default) the ``wall_ms`` column is left
    empty and timings go to ``timing.csv``, so re-runs give identical CSVs.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = report.config
    paths = {name: os.path.join(out_dir, name)
             for name in ("report.csv", "meta.json", "plot.svg")}
    fit = None
    if isinstance(report, ConvergenceReport) and len(report.rows) >= 4:
        try:
            fit = estimate_rate(report)
        except DegenerateFit:
            fit = None
    try:
        with open(paths["report.csv"], "w", newline="") as fh:
            fh.write(report_csv(report))
        meta = {"config": cfg.to_dict(), "seeds": list(cfg.seeds), "kind": report.kind,
                "git": git_describe(), "config_hash": cfg.config_hash(),
                "backend": _kernels.backend(),
                "rate": fit.as_dict() if fit else None}
        if isinstance(report, ConvergenceReport):
            meta["moments"] = [{k: r.get(k) for k in ("N", "moment2", "moment2_se",
                                                      "moment4", "moment4_se")}
                               for r in report.rows]
            if cfg.deterministic_output:
                paths["timing.csv"] = os.path.join(out_dir, "timing.csv")
                with open(paths["timing.csv"], "w") as fh:
                    fh.write("N,wall_ms\n")
                    for r in report.rows:
                        fh.write(f"{r['N']},{r['wall_ms']:.1f}\n")
        with open(paths["meta.json"], "w") as fh:
            json.dump(meta, fh, indent=2, default=_json_default)
        rows = report.rows if isinstance(report, ConvergenceReport) else []
        with open(paths["plot.svg"], "w") as fh:
            fh.write(_svg_plot(rows, fit))
    except OSError as exc:
        raise OSError(f"cannot write report to {exc.filename or out_dir}: {exc.strerror}") from exc
    return paths


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def run_experiment(cfg: ExperimentConfig):
    if cfg.kind in ("converge", "rate", "moments"):
        return run_convergence(cfg)
    if cfg.kind == "stability":
        return run_stability(cfg)
    return run_wlln(cfg)
