"""Stage runner: parameters, fields, PDE runs, Monte Carlo checks and reports.

Every stage writes its files as ``<name>.partial`` and renames them when the
stage succeeds, so a failed stage leaves its partial outputs behind for
inspection.  A stage is skipped when the manifest already records the same
input hash and every recorded output is present with its recorded hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__
from ..errors import ConfigError, ResolutionError
from ..fieldgen.analysis import stream_function
from ..fieldgen.analytic import AnalyticField
from ..fieldgen.mollified import GridField, build_uq
from ..fieldgen.tree import PipeTree
from ..gridio import write_field
from ..params import build_table
from ..scalar_pde.solver import SolverConfig, initial_datum, solve_adv_diff
from ..stochastic import (
    EnsembleSpec,
    backward_flow_ensemble,
    endpoint_variance_on_D,
    feynman_kac_estimate,
    fldiss_check,
    periodic_function,
)
from .config import MIN_SCALE_GUARD, ExperimentConfig

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class StepRecord:
    stage: str
    input_hash: str
    outputs: dict
    wall_time: float
    skipped: bool = False


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    steps: list = field(default_factory=list)

    def step(self, stage):
        for s in self.steps:
            if s.stage == stage:
                return s
        return None

    def output_hashes(self):
        return {name: h for s in self.steps for name, h in s.outputs.items()}

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        return cls(raw["config_hash"], raw["code_version"], [StepRecord(**s) for s in raw["steps"]])


def paper_guard(cfg, table):
    """Refuse field stages whose finest scale is below ``MIN_SCALE_GUARD`` in the ``paper`` regime."""
    if cfg.regime != "paper" or "field" not in cfg.stages:
        return
    for q in cfg.q_list:
        scales = [table.log_A[q]] + [table.log_A[j] - math.log(2) - table.log_n[j + 1] for j in range(q)]
        if min(scales) < math.log(MIN_SCALE_GUARD):
            raise ConfigError(
                f"regime=paper: field at q={q} has scales below {MIN_SCALE_GUARD:g}; refusing to build it")


class _Context:
    """Objects shared between stages of one run (built lazily)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._table = None
        self._fields = {}
        self._solves = {}

    @property
    def table(self):
        if self._table is None:
            c = self.cfg
            self._table = build_table(c.a0, c.eps, c.delta, c.q_max, regime=c.regime, alpha=c.alpha)
        return self._table

    def velocity(self, q):
        if q not in self._fields:
            c, res = self.cfg, self.cfg.grid_res
            if c.velocity == "zero":
                u = None
            elif c.velocity == "shear":
                u = GridField.from_function(
                    lambda X, Y: (c.shear_amp * np.sin(2 * np.pi * Y), 0 * X), res, min_scale=0.25,
                    order=3)
            elif c.velocity == "bq":
                b = AnalyticField(self.table, q)
                u = GridField(b.sample(res), b.min_scale, {"kind": "analytic", "q": q}, order=3)
            else:
                u = build_uq(self.table, q, res, c.layers, order=3)
            self._fields[q] = u
        return self._fields[q]

    def theta0(self, q):
        """``(grid, callable)`` initial datum."""
        c, res = self.cfg, self.cfg.grid_res
        if c.theta0 == "stream":
            u = self.velocity(q)
            data = np.zeros((2, res, res)) if u is None else u.data
            H = stream_function(data).H
            return H, periodic_function(H)
        grid = initial_datum(c.theta0, res)
        if c.theta0 == "cosx":
            return grid, lambda x, y: np.cos(2 * np.pi * x)
        if c.theta0 == "cosy":
            return grid, lambda x, y: np.cos(2 * np.pi * y)
        if c.theta0 == "x-surrogate":
            return grid, lambda x, y: np.sin(2 * np.pi * x) / (2 * np.pi)
        return grid, periodic_function(grid)

    def solver_cfg(self):
        return SolverConfig(cfl=self.cfg.cfl, dt_max=self.cfg.dt_max)

    def solve(self, q, kappa):
        key = (q, kappa)
        if key not in self._solves:
            grid, _ = self.theta0(q)
            self._solves[key] = solve_adv_diff(self.velocity(q), grid, kappa, self.cfg.T, self.solver_cfg())
        return self._solves[key]

    def spec(self, n_traj=None):
        c = self.cfg
        return EnsembleSpec(n_traj or c.n_traj, min(c.mc_dt, c.T), c.T, c.seed)


class _Writer:
    """Collects outputs of one stage as ``.partial`` files."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.names = []

    def path(self, name):
        self.names.append(name)
        return os.path.join(self.out_dir, name + ".partial")

    def commit(self):
        hashes = {}
        for name in self.names:
            final = os.path.join(self.out_dir, name)
            os.replace(final + ".partial", final)
            hashes[name] = file_hash(final)
        return hashes


def _write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


# -- stages -------------------------------------------------------------------

def _stage_params(ctx, w):
    with open(w.path("table.csv"), "w") as fh:
        fh.write(ctx.table.to_csv())


def _stage_field(ctx, w):
    for q in ctx.cfg.q_list:
        u = ctx.velocity(q)
        res = ctx.cfg.grid_res
        data = np.zeros((2, res, res)) if u is None else u.data
        scale = 1.0 if u is None else u.min_scale
        write_field(w.path(f"field_q{q}.bin"), data, q=q, min_scale=scale, kind=ctx.cfg.velocity,
                    table=ctx.table.digest())


def _stage_solve(ctx, w):
    rows = []
    for q in ctx.cfg.q_list:
        for i, k in enumerate(ctx.cfg.kappas(ctx.table, q)):
            r = ctx.solve(q, k)
            r.write_csv(w.path(f"run_q{q}_k{i}.csv"))
            rows.append({"q": q, "kappa": k, "D": float(r.cum_diss[-1]), "e0": r.e0,
                         "ratio": float(r.cum_diss[-1]) / r.e0 if r.e0 else 0.0,
                         "energy_residual": r.energy_residual})
    _write_rows(w.path("ladder.csv"), rows, ["q", "kappa", "D", "e0", "ratio", "energy_residual"])


def _stage_fldiss(ctx, w):
    for q in ctx.cfg.q_list:
        k = ctx.cfg.kappas(ctx.table, q)[0]
        _, f = ctx.theta0(q)
        rep = fldiss_check(ctx.velocity(q), f, k, ctx.cfg.T, ctx.spec(), m=ctx.cfg.start_grid,
                           res=ctx.cfg.grid_res, cfg=ctx.solver_cfg())
        out = {a: rep[a] for a in ("lhs", "rhs", "mc_se", "pde_tol", "rel_err")}
        out.update(ok=bool(rep["ok"]), q=q, kappa=k)
        with open(w.path(f"fldiss_q{q}.json"), "w") as fh:
            json.dump(out, fh, sort_keys=True)
            fh.write("\n")


def _stage_fk(ctx, w):
    c = ctx.cfg
    for q in c.q_list:
        k = c.kappas(ctx.table, q)[0]
        _, f = ctx.theta0(q)
        rng = np.random.default_rng(np.random.SeedSequence([c.seed, 0xF4, q]))
        probes = rng.uniform(0, 1, (c.n_probe, 2))
        batch = backward_flow_ensemble(ctx.velocity(q), k, ctx.spec(), probes)
        est = feynman_kac_estimate(batch, f)
        pde = ctx.solve(q, k).probe(probes[:, 0], probes[:, 1])
        rows = [{"x": p[0], "y": p[1], "mc": m, "se": s, "pde": v,
                 "z": (m - v) / s if s > 0 else 0.0}
                for p, m, s, v in zip(probes, est.estimate, est.se, pde)]
        _write_rows(w.path(f"fk_q{q}.csv"), rows, ["x", "y", "mc", "se", "pde", "z"])
        batch.write_csv(w.path(f"endpoints_q{q}.csv"))


def _stage_variance(ctx, w):
    rows = []
    for q in ctx.cfg.q_list:
        tree = PipeTree(ctx.table, q)
        k = ctx.cfg.kappas(ctx.table, q)[0]
        rep = endpoint_variance_on_D(ctx.velocity(q), tree, q, k, ctx.spec(), n_starts=ctx.cfg.n_dset)
        rows.append({"q": q, "kappa": k, "min_variance": rep["min_variance"],
                     "min_variance_x1": rep["min_variance_x1"], "brownian": rep["brownian"],
                     "area_D": rep["area_D"], "flag_low": rep["flag_low"]})
    _write_rows(w.path("variance.csv"), rows,
                ["q", "kappa", "min_variance", "min_variance_x1", "brownian", "area_D", "flag_low"])


def _stage_report(ctx, w):
    from .report import report_render

    report_render(ctx.cfg.out_dir, writer=w)


STAGE_FUNCS = {
    "params": _stage_params,
    "field": _stage_field,
    "solve": _stage_solve,
    "fldiss": _stage_fldiss,
    "fk": _stage_fk,
    "variance": _stage_variance,
    "report": _stage_report,
}
ORDER = ["params", "field", "solve", "fldiss", "fk", "variance", "report"]


def run_pipeline(cfg: ExperimentConfig, force=False) -> RunManifest:
    """Run the configured stages in order and write ``manifest.json``."""
    cfg.validate()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    ctx = _Context(cfg)
    paper_guard(cfg, ctx.table)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(cfg.to_text())
    mpath = os.path.join(out, MANIFEST)
    old = None
    if os.path.exists(mpath) and not force:
        try:
            old = RunManifest.load(mpath)
        except (OSError, ValueError, KeyError):
            old = None
    man = RunManifest(cfg.digest(), __version__)
    upstream = ""
    for stage in [s for s in ORDER if s in cfg.stages]:
        ih = hashlib.sha256(f"{cfg.digest()}|{__version__}|{stage}|{upstream}".encode()).hexdigest()[:16]
        prev = old.step(stage) if old is not None else None
        if prev is not None and prev.input_hash == ih and _outputs_intact(out, prev.outputs):
            log.info("stage %s unchanged, skipped", stage)
            rec = StepRecord(stage, ih, prev.outputs, 0.0, True)
        else:
            t0 = time.perf_counter()
            w = _Writer(out)
            STAGE_FUNCS[stage](ctx, w)
            rec = StepRecord(stage, ih, w.commit(), time.perf_counter() - t0)
            log.info("stage %s done in %.2fs", stage, rec.wall_time)
        man.steps.append(rec)
        upstream = hashlib.sha256((upstream + json.dumps(rec.outputs, sort_keys=True)).encode()).hexdigest()
        with open(mpath, "w") as fh:
            fh.write(man.to_json())
    return man


def _outputs_intact(out, outputs):
    for name, h in outputs.items():
        p = os.path.join(out, name)
        if not os.path.exists(p) or file_hash(p) != h:
            return False
    return True


__all__ = ["RunManifest", "StepRecord", "run_pipeline", "file_hash", "paper_guard", "ResolutionError"]
