from __future__ import annotations

import csv
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anodiss.errors import ConfigError, DomainError, GeometryError, NumericalError, ResolutionError
from anodiss.harness import ExperimentConfig, RunManifest, builtin_config, report_render, run_pipeline
from anodiss.harness.cli import exit_code, main
from anodiss.harness.pipeline import paper_guard
from anodiss.params import build_table, summability_log_a0


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- configuration ------------------------------------------------------------

configs = st.builds(
    ExperimentConfig,
    name=st.text("abcdefghij-_", min_size=1, max_size=12),
    regime=st.sampled_from(["desk", "paper"]),
    alpha=st.floats(0.01, 0.99),
    eps=st.floats(1e-9, 0.5),
    delta=st.floats(1e-9, 0.5),
    a0=st.floats(1e-6, 0.9),
    q_max=st.just(3),
    q_list=st.lists(st.integers(0, 3), min_size=1, max_size=3),
    velocity=st.sampled_from(["uq", "bq", "zero", "shear"]),
    grid_res=st.integers(8, 1024),
    kappa_source=st.just("explicit"),
    kappa_list=st.lists(st.floats(0, 1), min_size=1, max_size=3),
    kappa_cap=st.none() | st.floats(1e-8, 1),
    T=st.floats(1e-3, 10),
    n_traj=st.integers(1, 10**6),
    seed=st.integers(0, 2**64 - 1),
    stages=st.lists(st.sampled_from(["params", "field", "solve", "fldiss", "fk", "variance", "report"]),
                    min_size=1, unique=True),
)


@settings(max_examples=60, deadline=None)
@given(configs)
def test_config_round_trip(cfg):
    cfg.validate()
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_digest_ignores_out_dir():
    a = ExperimentConfig(out_dir="x")
    b = ExperimentConfig(out_dir="y")
    assert a.digest() == b.digest()
    assert ExperimentConfig(seed=1).digest() != a.digest()


@pytest.mark.parametrize("raw", [
    {"regime": "moon"},
    {"velocity": "vortex"},
    {"stages": "params, bake"},
    {"q_list": "5"},
    {"T": "-1"},
    {"grid_res": "many"},
    {"kappa_source": "explicit"},
    {"kappa_source": "explicit", "kappa_list": "-1e-3"},
    {"colour": "red"},
])
def test_config_rejects(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(raw)


def test_config_text_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("name = x\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("[other]\nname = x\n")
    with pytest.raises(ConfigError):
        builtin_config("nope")


def test_table_kappas():
    t = build_table(0.1, 0.3, 0.3, q_max=3, regime="desk")
    cfg = ExperimentConfig(kappa_cap=1e-3)
    assert cfg.kappas(t, 0) == [1e-3]
    assert cfg.kappas(t, 2) == [pytest.approx(math.exp(t.log_kappa[2]))]


def test_paper_guard():
    d = 2**-6
    t = build_table(eps=d**3, delta=d, q_max=3, log_a0=summability_log_a0(d**3, d), regime="paper", alpha=0.5)
    with pytest.raises(ConfigError):
        paper_guard(ExperimentConfig(regime="paper", q_list=[1], stages=["field"]), t)
    # no field stage, nothing to guard
    paper_guard(ExperimentConfig(regime="paper", q_list=[1], stages=["params"]), t)
    desk = build_table(0.1, 0.3, 0.3, q_max=3, regime="desk")
    paper_guard(ExperimentConfig(regime="paper", q_list=[0], stages=["field"]), desk)


# -- pipeline -----------------------------------------------------------------

def test_heat_decay_pipeline(tmp_path):
    cfg = builtin_config("heat-decay", out_dir=str(tmp_path / "heat"))
    man = run_pipeline(cfg)
    rows = read_rows(tmp_path / "heat" / "run_q0_k0.csv")
    kappa = cfg.kappa_list[0]
    c = 4 * math.pi**2 * kappa
    for r in rows:
        t = float(r["t"])
        assert float(r["energy"]) == pytest.approx(0.5 * math.exp(-2 * c * t), rel=1e-8)
        assert float(r["cum_diss"]) == pytest.approx(0.25 * (1 - math.exp(-2 * c * t)), rel=1e-8, abs=1e-15)
    assert [s.stage for s in man.steps] == ["params", "solve", "report"]
    assert (tmp_path / "heat" / "energy.svg").exists()
    summary = (tmp_path / "heat" / "summary.md").read_text()
    assert "| run_q0_k0.csv |" in summary and "True" in summary


def test_fldiss_smoke_and_rerun(tmp_path):
    out = tmp_path / "smoke"
    cfg = builtin_config("fldiss-smoke", out_dir=str(out))
    first = run_pipeline(cfg)
    rep = json.loads((out / "fldiss_q0.json").read_text())
    assert rep["ok"]
    assert rep["rel_err"] * rep["rhs"] <= 3 * rep["mc_se"]
    exact = (1 - math.exp(-8 * math.pi**2 * 1e-2)) / 2
    assert rep["rhs"] == pytest.approx(exact, rel=1e-8)

    second = run_pipeline(cfg)
    assert all(s.skipped for s in second.steps)
    assert second.output_hashes() == first.output_hashes()

    forced = run_pipeline(cfg, force=True)
    assert not any(s.skipped for s in forced.steps)
    assert forced.output_hashes() == first.output_hashes()
    assert RunManifest.load(out / "manifest.json").output_hashes() == first.output_hashes()


def test_rerun_after_tampering(tmp_path):
    out = tmp_path / "h"
    cfg = builtin_config("heat-decay", out_dir=str(out))
    first = run_pipeline(cfg)
    (out / "table.csv").write_text("junk\n")
    again = run_pipeline(cfg)
    assert not again.step("params").skipped
    assert again.output_hashes() == first.output_hashes()


def test_mc_stages_on_shear(tmp_path):
    out = tmp_path / "shear"
    cfg = ExperimentConfig(name="shear", velocity="shear", shear_amp=0.5, q_list=[0, 1], kappa_source="explicit",
                           kappa_list=[1e-2], grid_res=32, n_traj=500, mc_dt=0.05, n_probe=4, n_dset=4,
                           start_grid=4, stages=["params", "field", "solve", "fk", "variance", "report"],
                           out_dir=str(out)).validate()
    run_pipeline(cfg)
    names = set(os.listdir(out))
    for n in ("table.csv", "field_q0.bin", "ladder.csv", "fk_q1.csv", "endpoints_q0.csv", "variance.csv",
              "ladder.svg", "variance.svg", "summary.md", "manifest.json", "config.ini"):
        assert n in names
    assert not any(n.endswith(".partial") for n in names)
    var = read_rows(out / "variance.csv")
    assert all(float(r["min_variance"]) > 0 for r in var)
    a = (out / "ladder.svg").read_bytes()
    report_render(str(out))
    assert (out / "ladder.svg").read_bytes() == a


def test_failed_stage_keeps_partial(tmp_path):
    out = tmp_path / "bad"
    cfg = ExperimentConfig(velocity="uq", q_list=[2], grid_res=32, stages=["params", "field"], out_dir=str(out))
    with pytest.raises(ResolutionError):
        run_pipeline(cfg)
    assert (out / "table.csv").exists()
    man = RunManifest.load(out / "manifest.json")
    assert [s.stage for s in man.steps] == ["params"]


def test_report_empty_dir(tmp_path):
    with pytest.raises(ConfigError) as exc:
        report_render(str(tmp_path))
    assert "ladder.csv" in str(exc.value) and "variance.csv" in str(exc.value)


def test_report_missing_plots_listed(tmp_path):
    (tmp_path / "ladder.csv").write_text("q,kappa,D,e0,ratio,energy_residual\n0,0.001,0.01,0.25,0.04,1e-12\n")
    written = report_render(str(tmp_path))
    assert written == ["ladder.svg", "summary.md"]
    text = (tmp_path / "summary.md").read_text()
    assert "energy.svg needs run_q*_k*.csv" in text and "variance.svg needs variance.csv" in text


# -- command line -------------------------------------------------------------

def test_exit_codes():
    assert exit_code(ConfigError("x")) == 2
    assert exit_code(DomainError("x")) == 2
    assert exit_code(NumericalError("x")) == 3
    assert exit_code(ResolutionError("x")) == 3
    assert exit_code(GeometryError("x")) == 4


def test_cli_params_and_tree(tmp_path, capsys):
    p = tmp_path / "t.csv"
    assert main(["params", "--a0", "0.1", "--eps", "0.3", "--delta", "0.3", "--out", str(p)]) == 0
    assert p.read_text().splitlines()[1].startswith("q,")
    assert main(["tree", "--q", "2"]) == 0
    assert "400" in capsys.readouterr().out
    assert main(["params", "--feasibility", "--eps", "1e-9", "--delta", "1e-9", "--alpha", "0.5"]) == 0


def test_cli_solve_mc_fldiss(tmp_path, capsys):
    run = tmp_path / "run.csv"
    assert main(["solve", "--kappa", "1e-3", "--res", "32", "--out", str(run)]) == 0
    assert read_rows(run)[0]["t"] == "0"
    mc = tmp_path / "mc.csv"
    assert main(["mc", "--kappa", "1e-2", "--ntraj", "10", "--dt", "0.5", "--starts", "grid:2",
                 "--out", str(mc)]) == 0
    assert len(read_rows(mc)) == 40
    capsys.readouterr()
    assert main(["fldiss", "--kappa", "1e-2", "--ntraj", "2000", "--dt", "1", "--m", "4", "--res", "32"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert abs(rep["lhs"] - rep["rhs"]) <= 3 * rep["mc_se"]


def test_cli_field_round_trip(tmp_path, capsys):
    f = tmp_path / "u0.bin"
    assert main(["build-field", "--q", "0", "--res", "256", "--out", str(f)]) == 0
    assert f.exists()
    out = tmp_path / "run.csv"
    assert main(["solve", "--field", str(f), "--kappa", "1e-2", "--T", "0.05", "--out", str(out)]) == 0
    assert main(["ns3d", "--field", str(f), "--nu", "1e-2", "--T", "0.05"]) == 0


def test_cli_error_codes(tmp_path, capsys):
    assert main(["build-field", "--q", "2", "--res", "32", "--out", str(tmp_path / "x.bin")]) == 3
    assert main(["run"]) == 2
    assert main(["run", "--builtin", "heat-decay", "--set", "T=-1"]) == 2
    assert main(["report", str(tmp_path)]) == 2
    assert main(["mc", "--kappa", "-1", "--out", str(tmp_path / "m.csv")]) == 2
    assert main(["mc", "--kappa", "1e-2", "--starts", str(tmp_path / "missing.csv"),
                 "--out", str(tmp_path / "m.csv")]) == 2
    err = capsys.readouterr().err
    assert "anodiss: error:" in err


def test_cli_run_builtin(tmp_path, capsys):
    out = tmp_path / "cli-run"
    assert main(["run", "--builtin", "heat-decay", "--out-dir", str(out), "--set", "grid_res=32"]) == 0
    first = json.loads(capsys.readouterr().out)
    assert main(["run", "--config", str(out / "config.ini")]) == 0
    second = json.loads(capsys.readouterr().out)
    assert first["config_hash"] == second["config_hash"]
    assert all(skipped for _, skipped, _ in second["steps"])
    assert np.isfinite(float(read_rows(out / "ladder.csv")[0]["D"]))
