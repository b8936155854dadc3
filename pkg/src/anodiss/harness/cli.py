"""``anodiss`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from ..errors import AnodissError, ConfigError
from ..fieldgen.analytic import AnalyticField
from ..fieldgen.mollified import GridField, build_uq
from ..fieldgen.tree import PipeTree
from ..gridio import read_field, write_field, write_scalar
from ..params import build_table, check_feasibility, verify_bounds
from ..scalar_pde import SolverConfig, initial_datum, ns3d_assemble, solve_adv_diff
from ..stochastic import EnsembleSpec, backward_flow_ensemble, fldiss_check, periodic_function, start_grid
from .config import ExperimentConfig, builtin_config, load_config
from .pipeline import run_pipeline
from .report import report_render


def exit_code(exc):
    """Process exit code for an exception (0 success, 2 config, 3 numeric, 4 geometry)."""
    if isinstance(exc, AnodissError):
        return exc.exit_code
    if isinstance(exc, (ValueError, OSError)):
        return 2
    return 1


def _table_args(p):
    g = p.add_argument_group("parameter table")
    g.add_argument("--regime", choices=["desk", "paper"], default="desk")
    g.add_argument("--a0", type=float, default=None)
    g.add_argument("--log-a0", type=float, default=None)
    g.add_argument("--eps", type=float, default=None)
    g.add_argument("--delta", type=float, default=None)
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--qmax", type=int, default=3)


def _table(a):
    return build_table(a.a0, a.eps, a.delta, a.qmax, log_a0=a.log_a0, regime=a.regime, alpha=a.alpha)


def load_field(path, order=3):
    """``zero`` or a field file; returns ``None`` for the zero field."""
    if path in (None, "zero"):
        return None
    data, header = read_field(path)
    return GridField(data, header.get("min_scale"), header, order=order)


def _theta0(name, res, u=None):
    if name == "stream":
        from ..fieldgen.analysis import stream_function

        data = np.zeros((2, res, res)) if u is None else u.sample(res)
        return stream_function(data).H
    return initial_datum(name, res)


def _starts(spec, table=None, seed=0):
    kind, _, arg = spec.partition(":")
    if kind == "grid":
        return start_grid(int(arg))
    if kind == "dset":
        q = int(arg)
        if table is None:
            raise ConfigError("dset starts need the parameter table")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD5E7]))
        return PipeTree(table, q).sample_dset(q, 32, rng)
    try:
        pts = np.loadtxt(spec, delimiter=",", ndmin=2, comments="#")
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read starts from {spec!r}: {exc}") from exc
    if pts.shape[1] != 2:
        raise ConfigError("starts file needs two columns x,y")
    return pts


# -- commands -----------------------------------------------------------------

def cmd_params(a):
    if a.feasibility:
        eps = a.eps if a.eps is not None else 0.0
        delta = a.delta if a.delta is not None else 0.0
        rep = check_feasibility(a.alpha if a.alpha is not None else 0.5, eps, delta)
        print(json.dumps({"feasible": rep.feasible, "margins": list(rep.margins)}))
        return 0
    t = _table(a)
    text = t.to_csv()
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if a.verify:
        rep = verify_bounds(t)
        fails = rep.failures()
        print(f"# verify_bounds: {len(rep.checks) - len(fails)}/{len(rep.checks)} checks pass", file=sys.stderr)
        for f in fails[:20]:
            print(f"#   FAIL q={f.q} {f.name}", file=sys.stderr)
        return 0 if not fails else 3
    return 0


def cmd_build_field(a):
    t = _table(a)
    if a.kind == "bq":
        b = AnalyticField(t, a.q)
        data, scale = b.sample(a.res), b.min_scale
    else:
        u = build_uq(t, a.q, a.res, a.layers)
        data, scale = u.data, u.min_scale
    write_field(a.out, data, q=a.q, min_scale=scale, kind=a.kind, table=t.digest())
    print(json.dumps({"out": a.out, "res": a.res, "q": a.q, "min_scale": scale,
                      "max_speed": float(np.sqrt((data**2).sum(axis=0)).max())}))
    return 0


def cmd_tree(a):
    t = _table(a)
    tree = PipeTree(t, a.q)
    rows = tree.cardinalities()
    out = {"levels": rows, "area_D": [tree.dset_area(j) for j in range(a.q + 1)]}
    print(json.dumps(out))
    return 0


def cmd_solve(a):
    u = load_field(a.field)
    res = a.res or (u.res if u is not None else 64)
    theta0 = _theta0(a.theta0, res, u)
    r = solve_adv_diff(u, theta0, a.kappa, a.T, SolverConfig(dt=a.dt, n_saves=a.saves))
    r.write_csv(a.out)
    if a.snapshots:
        write_scalar(a.snapshots, r.snapshots, r.snap_times, kappa=a.kappa)
    for w in r.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps({"out": a.out, "e0": r.e0, "D": float(r.cum_diss[-1]), "dt": r.dt,
                      "energy_residual": r.energy_residual}))
    return 0


def _mc_table(a):
    if a.starts.startswith("dset:"):
        return _table(a)
    return None


def cmd_mc(a):
    u = load_field(a.field)
    spec = EnsembleSpec(a.ntraj, a.dt, a.T, a.seed)
    starts = _starts(a.starts, _mc_table(a), a.seed)
    b = backward_flow_ensemble(u, a.kappa, spec, starts)
    b.write_csv(a.out)
    print(json.dumps({"out": a.out, "starts": len(starts), "min_variance": float(b.variance.min())}))
    return 0


def cmd_fldiss(a):
    u = load_field(a.field)
    res = u.res if u is not None else a.res
    theta0 = _theta0(a.theta0, res, u)
    rep = fldiss_check(u, periodic_function(theta0), a.kappa, a.T, EnsembleSpec(a.ntraj, a.dt, a.T, a.seed),
                       m=a.m, res=res)
    print(json.dumps({k: rep[k] for k in ("lhs", "rhs", "mc_se", "pde_tol", "rel_err")}))
    return 0


def cmd_ladder(a):
    t = _table(a)
    print("q,kappa,D,e0,ratio,energy_residual")
    for q in a.q_list:
        u = build_uq(t, q, a.res, a.layers)
        kappa = math.exp(t.log_kappa[q])
        if a.kappa_cap is not None:
            kappa = min(kappa, a.kappa_cap)
        r = solve_adv_diff(u, initial_datum(a.theta0, a.res), kappa, a.T)
        D = float(r.cum_diss[-1])
        print(f"{q},{kappa:.17g},{D:.17g},{r.e0:.17g},{D / r.e0:.17g},{r.energy_residual:.3g}")
    return 0


def cmd_ns3d(a):
    u = load_field(a.field)
    if u is None:
        raise ConfigError("ns3d needs a field file")
    res = a.res or u.res
    r = solve_adv_diff(u, _theta0(a.theta0, res, u), a.nu, a.T)
    _, rep = ns3d_assemble(u, a.nu, r)
    rep["ok"] = rep["relative"] <= 10 * rep["energy_residual"]
    print(json.dumps(rep))
    return 0


def cmd_report(a):
    files = report_render(a.run_dir)
    print(json.dumps({"written": files}))
    return 0


def cmd_run(a):
    if a.builtin:
        cfg = builtin_config(a.builtin)
    elif a.config:
        cfg = load_config(a.config)
    else:
        raise ConfigError("run needs --config FILE or --builtin NAME")
    raw = {}
    for kv in a.set or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        raw[k.strip()] = v
    if a.out_dir:
        raw["out_dir"] = a.out_dir
    if raw:
        cfg = ExperimentConfig.from_mapping(raw, base=cfg)
    man = run_pipeline(cfg, force=a.force)
    print(json.dumps({"out_dir": cfg.out_dir, "config_hash": man.config_hash,
                      "steps": [(s.stage, s.skipped, round(s.wall_time, 3)) for s in man.steps]}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="anodiss", description="Anomalous-dissipation field builder and checks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("params", help="parameter table as CSV")
    _table_args(s)
    s.add_argument("--out")
    s.add_argument("--verify", action="store_true", help="also run the bound checks")
    s.add_argument("--feasibility", action="store_true", help="only report the (eps, delta, alpha) margins")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("build-field", help="sample b_q or u_q to a field file")
    _table_args(s)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--res", type=int, default=256)
    s.add_argument("--kind", choices=["uq", "bq"], default="uq")
    s.add_argument("--layers", choices=["paper", "every"], default="paper")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_field)

    s = sub.add_parser("tree", help="rectangle-set cardinalities and D_q areas")
    _table_args(s)
    s.add_argument("--q", type=int, required=True)
    s.set_defaults(func=cmd_tree)

    s = sub.add_parser("solve", help="advection-diffusion run")
    s.add_argument("--field", default="zero")
    s.add_argument("--theta0", default="cosx")
    s.add_argument("--kappa", type=float, required=True)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--res", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--saves", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--snapshots")
    s.set_defaults(func=cmd_solve)

    for name, fn in (("mc", cmd_mc), ("fldiss", cmd_fldiss)):
        s = sub.add_parser(name, help="backward-flow ensemble" if name == "mc" else "fluctuation-dissipation check")
        _table_args(s)
        s.add_argument("--field", default="zero")
        s.add_argument("--kappa", type=float, required=True)
        s.add_argument("--T", type=float, default=1.0)
        s.add_argument("--ntraj", type=int, default=1000)
        s.add_argument("--dt", type=float, default=1e-2)
        s.add_argument("--seed", type=int, default=0)
        if name == "mc":
            s.add_argument("--starts", default="grid:4", help="grid:m, dset:q or a CSV of x,y")
            s.add_argument("--out", required=True)
        else:
            s.add_argument("--theta0", default="cosx")
            s.add_argument("--m", type=int, default=16)
            s.add_argument("--res", type=int, default=64)
        s.set_defaults(func=fn)

    s = sub.add_parser("ladder", help="D_q(T)/e(0) over levels")
    _table_args(s)
    s.add_argument("--q-list", type=lambda x: [int(v) for v in x.split(",")], default=[0, 2])
    s.add_argument("--res", type=int, default=256)
    s.add_argument("--layers", choices=["paper", "every"], default="paper")
    s.add_argument("--kappa-cap", type=float)
    s.add_argument("--theta0", default="cosx")
    s.add_argument("--T", type=float, default=1.0)
    s.set_defaults(func=cmd_ladder)

    s = sub.add_parser("ns3d", help="2.5-dimensional Navier-Stokes residual")
    s.add_argument("--field", required=True)
    s.add_argument("--nu", type=float, required=True)
    s.add_argument("--theta0", default="cosx")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--res", type=int)
    s.set_defaults(func=cmd_ns3d)

    s = sub.add_parser("report", help="render summary and plots for a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="run a configured pipeline")
    s.add_argument("--config")
    s.add_argument("--builtin")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out-dir")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except Exception as exc:  # mapped to exit codes
        code = exit_code(exc)
        if code == 1:
            raise
        print(f"anodiss: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
