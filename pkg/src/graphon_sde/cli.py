"""Command line interface.

Exit codes: 0 success, 2 invalid configuration, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import _kernels, rng
from .errors import ConfigError, NumericalAbort


def _json_arg(text):
    """Inline JSON or a path to a JSON file."""
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not JSON and not a file: {text!r} ({exc})") from None


def _load_config(args):
    from .harness import ExperimentConfig
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seeds = rng.derive_seeds(args.seed, len(cfg.seeds))
    if args.threads:
        cfg.workers = args.threads
    if args.out:
        cfg.out = args.out
    cfg.validate()
    return cfg


def _out_dir(args, cfg=None, default="out"):
    return args.out or (cfg.out if cfg is not None and cfg.out else default)


def cmd_simulate(args):
    from .dynamics import BrownianDriver, simulate_particle_system
    from .harness import _build_graph
    cfg = _load_config(args)
    N = args.n or int(cfg.N_list[0])
    seed = int(cfg.seeds[0])
    g, model, grid = cfg.make_graphon(), cfg.make_model(), cfg.make_grid()
    graph = _build_graph(g, cfg, N, cfg.make_schedule()(N), seed)
    ens = simulate_particle_system(graph, model, cfg.make_init(seed), grid,
                                   BrownianDriver(seed, grid.dt, model.dim_noise))
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    ens.to_csv(os.path.join(out, "trajectories.csv"), thin=args.thin)
    meta = {"config": cfg.to_dict(), "N": N, "seed": seed, "config_hash": cfg.config_hash()}
    with open(os.path.join(out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"wrote {N} paths x {grid.S + 1} steps to {out}")


def cmd_limit(args):
    from .harness import _limit_graphon
    from .limitsolver import solve_graphon_sde, write_law_table
    cfg = _load_config(args)
    N = args.n or int(cfg.N_list[0])
    seed = int(cfg.seeds[0])
    gN, M = _limit_graphon(cfg.make_graphon(), cfg, N)
    laws, state = solve_graphon_sde(gN, cfg.make_model(), cfg.make_init(seed),
                                    cfg.make_grid(), M, seed, cfg.picard_max_iters,
                                    cfg.picard_tol)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    summary = write_law_table(laws, state, os.path.join(out, "laws"))
    print(json.dumps({k: summary[k] for k in ("K", "M", "iterations", "converged")}))
    if not state.converged:
        print("warning: Picard iteration did not reach tol", file=sys.stderr)


def cmd_experiment(args):
    from .harness import emit_report, estimate_rate, ratio_spread, run_experiment
    cfg = _load_config(args)
    if args.command != "converge":
        cfg.kind = args.command
        cfg.validate()
    report = run_experiment(cfg)
    out = _out_dir(args, cfg)
    paths = emit_report(report, out)
    print(f"report written to {paths['report.csv']}")
    if args.command == "rate":
        fit = estimate_rate(report)
        print(f"slope {fit.slope:.4f}  intercept {fit.intercept:.4f}  R2 {fit.r2:.4f}  "
              f"envelope {fit.envelope:g}")
    elif args.command == "stability":
        print(f"ratio spread {ratio_spread(report):.3f}")


def cmd_dbl(args):
    from .measures import DiscreteMeasure, TestDictionary, dbl_estimate, dbl_exact
    mu, nu = DiscreteMeasure.load(args.mu), DiscreteMeasure.load(args.nu)
    if args.dict:
        val = dbl_estimate(mu, nu, TestDictionary(seed=args.seed or 0))
    else:
        val = dbl_exact(mu, nu)
    print(repr(val))


def cmd_graph(args):
    from .graphon import from_dict
    from .graphs import SparsitySchedule, graph_stats, sample_random_points, sample_w_random
    g = from_dict(_json_arg(args.graphon))
    if args.beta is not None:
        beta = float(args.beta)
    else:
        beta = SparsitySchedule.from_dict(_json_arg(args.beta_form))(args.n)
    seed = args.seed or 0
    pts = sample_random_points(args.n, seed) if args.points == "random" else None
    graph = sample_w_random(g, args.n, beta, seed, args.mode, pts)
    if args.out:
        graph.save(args.out)
    st = graph_stats(graph)
    st.pop("degrees")
    print(json.dumps(st))


def cmd_graphon(args):
    from .graphon import from_dict, lp_norm
    if args.graphon:
        desc = _json_arg(args.graphon)
    else:
        desc = {"kind": args.kind}
        if args.a is not None:
            desc["a"] = args.a
        if args.c is not None:
            desc["c"] = args.c
    g = from_dict(desc)
    method = "quadrature" if args.quadrature else "auto"
    print(repr(lp_norm(g, args.p, method=method)))


def build_parser():
    p = argparse.ArgumentParser(prog="graphon-sde",
                                description="Particle systems on graphons and their limits.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default=None, help="output path or directory")
    common.add_argument("--threads", type=int, default=None, help="worker count")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in [("simulate", cmd_simulate, "run one finite particle system"),
                            ("limit", cmd_limit, "solve the limit laws")]:
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--n", type=int, default=None, help="particle count (default N_list[0])")
        if name == "simulate":
            s.add_argument("--thin", type=int, default=1)
        s.set_defaults(func=fn)
    for name in ("converge", "rate", "stability", "wlln"):
        s = sub.add_parser(name, parents=[common], help=f"{name} experiment")
        s.add_argument("--config", required=True, help="config or meta.json of a previous run")
        s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("dbl", parents=[common], help="bounded-Lipschitz distance of two measures")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--exact", action="store_true", help="linear program (default)")
    grp.add_argument("--dict", action="store_true", help="test-function lower bound")
    s.set_defaults(func=cmd_dbl)

    s = sub.add_parser("graph", help="graph tools")
    gsub = s.add_subparsers(dest="action", required=True)
    gs = gsub.add_parser("sample", parents=[common], help="sample a W-random graph")
    gs.add_argument("--graphon", required=True, help="JSON descriptor or file")
    gs.add_argument("--n", type=int, required=True)
    b = gs.add_mutually_exclusive_group(required=True)
    b.add_argument("--beta", type=float)
    b.add_argument("--beta-form", help='schedule JSON, e.g. {"form": "power", "gamma": 0.5}')
    gs.add_argument("--mode", default="symmetric", choices=["symmetric", "directed"])
    gs.add_argument("--points", default="grid", choices=["grid", "random"])
    gs.set_defaults(func=cmd_graph)

    s = sub.add_parser("graphon", help="graphon tools")
    gsub = s.add_subparsers(dest="action", required=True)
    gn = gsub.add_parser("norm", help="L^p norm of a graphon")
    gn.add_argument("--kind", default="constant")
    gn.add_argument("--a", type=float)
    gn.add_argument("--c", type=float)
    gn.add_argument("--graphon", help="JSON descriptor or file (overrides --kind)")
    gn.add_argument("--p", type=float, default=2.0)
    gn.add_argument("--quadrature", action="store_true", help="skip closed forms")
    gn.set_defaults(func=cmd_graphon)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        _kernels.set_threads(args.threads)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
