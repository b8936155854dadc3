from __future__ import annotations

import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anodiss.errors import DomainError, NumericalError
from anodiss.fieldgen import PipeTree, build_bq, rotating_pipe
from anodiss.fieldgen.analysis import PatchField, curve_gradient_integral
from anodiss.fieldgen.mollified import GridField
from anodiss.stochastic import (
    EnsembleSpec,
    backward_flow_ensemble,
    endpoint_variance_on_D,
    feynman_kac_estimate,
    fldiss_check,
    gaussian_shell,
    start_grid,
    stopping_time_profile,
    two_cluster_diagnostic,
)


def cosx(x, y):
    return np.cos(2 * np.pi * x)


class Constant:
    """Constant velocity (a plain field model)."""

    def __init__(self, v):
        self.v = v
        self.max_speed = math.hypot(*v)
        self.min_scale = 1.0

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape, self.v[0]), np.full(x.shape, self.v[1])


class Negated:
    def __init__(self, f):
        self.f = f
        self.max_speed = f.max_speed
        self.min_scale = f.min_scale

    def evaluate(self, x, y):
        a, b = self.f.evaluate(x, y)
        return -a, -b


def sine_shear(res=64, min_scale=0.25):
    return GridField.from_function(lambda X, Y: (np.sin(2 * np.pi * Y), 0 * X), res, min_scale=min_scale, order=3)


def test_spec_validation():
    with pytest.raises(DomainError):
        EnsembleSpec(0, 0.1, 1.0)
    with pytest.raises(DomainError):
        EnsembleSpec(10, 0.0, 1.0)
    assert EnsembleSpec(1, 0.3, 1.0).steps == 4


def test_brownian_moments():
    kappa, T, n = 1e-2, 1.0, 100_000
    b = backward_flow_ensemble(None, kappa, EnsembleSpec(n, 0.25, T, seed=11), [[0.2, 0.7]])
    assert np.all(np.abs(b.mean[0] - [0.2, 0.7]) <= 4 * math.sqrt(2 * kappa * T / n))
    assert abs(b.variance[0] - 4 * kappa * T) <= 5 * 4 * kappa * T * math.sqrt(8 / n)
    assert b.variance_x1[0] == pytest.approx(2 * kappa * T, rel=0.03)


def test_covariance_symmetric_psd():
    b = backward_flow_ensemble(sine_shear(), 1e-2, EnsembleSpec(500, 0.05, 0.5, seed=1), start_grid(2))
    for c in b.cov:
        assert np.allclose(c, c.T)
        assert np.linalg.eigvalsh(c).min() >= -1e-15
    assert np.all(np.isfinite(b.endpoints))


def test_constant_drift_shifts_mean():
    v, kappa, T, n = (0.3, -0.2), 1e-2, 1.0, 20_000
    b = backward_flow_ensemble(Constant(v), kappa, EnsembleSpec(n, 0.1, T, seed=2), [[0.5, 0.5]])
    sigma = math.sqrt(2 * kappa * T)
    expect = np.array([0.5 - v[0] * T, 0.5 - v[1] * T])
    assert np.all(np.abs(b.mean[0] - expect) <= 3 * sigma / math.sqrt(n) * 1.5)
    assert b.variance[0] == pytest.approx(4 * kappa * T, rel=0.05)


def test_thread_and_batch_independence(monkeypatch):
    from anodiss.stochastic import ensemble

    spec = EnsembleSpec(10_000, 0.05, 0.5, seed=5)
    starts = start_grid(2)
    monkeypatch.setenv("ANODISS_THREADS", "1")
    a = backward_flow_ensemble(sine_shear(), 1e-2, spec, starts)
    monkeypatch.setenv("ANODISS_THREADS", "4")
    monkeypatch.setattr(ensemble, "BATCH_TRAJ", 4096)
    b = backward_flow_ensemble(sine_shear(), 1e-2, spec, starts)
    assert np.array_equal(a.endpoints, b.endpoints)


def test_seed_changes_paths():
    a = backward_flow_ensemble(None, 1e-2, EnsembleSpec(100, 1.0, 1.0, seed=1), [[0, 0]])
    b = backward_flow_ensemble(None, 1e-2, EnsembleSpec(100, 1.0, 1.0, seed=2), [[0, 0]])
    assert not np.array_equal(a.endpoints, b.endpoints)


def test_dt_refused_for_fast_fields():
    u = GridField.from_function(lambda X, Y: (10 * np.sin(2 * np.pi * Y), 0 * X), 32, min_scale=0.1)
    with pytest.raises(NumericalError):
        backward_flow_ensemble(u, 1e-2, EnsembleSpec(10, 0.1, 1.0), [[0, 0]])


def test_negative_kappa_refused():
    with pytest.raises(DomainError):
        backward_flow_ensemble(None, -1.0, EnsembleSpec(10, 0.1, 1.0), [[0, 0]])


def test_stored_paths():
    b = backward_flow_ensemble(None, 1e-2, EnsembleSpec(5, 0.25, 1.0, store_paths=True), [[0.1, 0.2]])
    assert b.paths.shape == (1, 5, 5, 2)
    assert np.array_equal(b.paths[:, :, -1], b.endpoints)
    assert np.all(b.paths[:, :, 0] == [0.1, 0.2])


def test_zero_noise_matches_rk4_curve():
    r0 = 0.1
    pipe = PatchField([rotating_pipe(r0, 2 * r0, 1.0, 1.0)])
    start = (0.0, 1.5 * r0)
    t_end = 0.15
    curve = curve_gradient_integral(pipe, start, r0 / 4, t_end)
    dt = 1e-3
    b = backward_flow_ensemble(Negated(pipe), 0.0, EnsembleSpec(1, dt, t_end), [start])
    err = np.linalg.norm(b.endpoints[0, 0] - np.array(curve.end_point))
    assert err <= 10 * dt * pipe.max_speed


def test_weak_order_one():
    kappa, T, n = 1e-2, 1.0, 100_000
    u = sine_shear(min_scale=1.0)
    dts = [0.2, 0.1, 0.05, 0.025]
    means = [backward_flow_ensemble(u, kappa, EnsembleSpec(n, dt, T, seed=9), [[0.5, 0.25]]).mean[0, 0]
             for dt in dts]
    diffs = np.abs(np.diff(means))
    slope = np.polyfit(np.log(dts[1:]), np.log(diffs), 1)[0]
    assert 0.7 <= slope <= 1.3


# -- Feynman-Kac and fluctuation-dissipation ----------------------------------

def test_feynman_kac_heat():
    kappa, T = 1e-2, 1.0
    starts = start_grid(3)
    b = backward_flow_ensemble(None, kappa, EnsembleSpec(20_000, 1.0, T, seed=4), starts)
    est = feynman_kac_estimate(b, cosx)
    exact = math.exp(-4 * math.pi**2 * kappa * T) * np.cos(2 * np.pi * starts[:, 0])
    assert np.all(np.abs(est.estimate - exact) <= 3 * est.se + 1e-12)


def test_feynman_kac_constant():
    b = backward_flow_ensemble(sine_shear(), 1e-2, EnsembleSpec(100, 0.05, 1.0), start_grid(2))
    est = feynman_kac_estimate(b, 2.5)
    assert np.all(est.estimate == 2.5) and np.all(est.se == 0)


def test_feynman_kac_grid_datum():
    n = 64
    g = np.arange(n) / n
    grid = np.cos(2 * np.pi * g)[:, None] * np.ones(n)[None]
    b = backward_flow_ensemble(None, 1e-2, EnsembleSpec(2000, 1.0, 1.0, seed=4), start_grid(2))
    a = feynman_kac_estimate(b, grid).estimate
    c = feynman_kac_estimate(b, cosx).estimate
    assert np.allclose(a, c, atol=1e-6)


def test_fldiss_heat():
    kappa, T = 1e-2, 1.0
    r = fldiss_check(None, cosx, kappa, T, EnsembleSpec(4000, 1.0, T, seed=1), m=8)
    exact = (1 - math.exp(-8 * math.pi**2 * kappa * T)) / 2
    assert r["rhs"] == pytest.approx(exact, rel=1e-8)
    assert abs(r["lhs"] - r["rhs"]) <= 3 * r["mc_se"]


def test_fldiss_constant_datum():
    r = fldiss_check(None, lambda x, y: np.ones_like(x), 1e-2, 1.0, EnsembleSpec(100, 1.0, 1.0), m=2)
    assert r["lhs"] == 0.0 and r["rhs"] == pytest.approx(0.0, abs=1e-30)


def test_fldiss_galilean_shift():
    kappa, T = 1e-2, 1.0
    spec = EnsembleSpec(4000, 0.25, T, seed=8)
    drift = GridField.from_function(lambda X, Y: (0.37 + 0 * X, 0 * Y), 64, min_scale=1.0)
    moving = fldiss_check(drift, cosx, kappa, T, spec, m=8)
    exact = (1 - math.exp(-8 * math.pi**2 * kappa * T)) / 2
    assert moving["rhs"] == pytest.approx(exact, rel=1e-6)
    assert abs(moving["lhs"] - exact) <= 3 * moving["mc_se"]


def test_fldiss_shear():
    r = fldiss_check(sine_shear(), cosx, 1e-2, 1.0, EnsembleSpec(2000, 5e-3, 1.0, seed=11), m=8)
    assert r["ok"]


# -- criterion and trajectory diagnostics -------------------------------------

def test_endpoint_variance_brownian(desk):
    tree = PipeTree(desk, 1)
    kappa, T = 1e-2, 1.0
    rep = endpoint_variance_on_D(None, tree, 1, kappa, EnsembleSpec(20_000, 1.0, T, seed=2), n_starts=8)
    assert np.allclose(rep["variance"], 4 * kappa * T, rtol=0.05)
    assert np.allclose(rep["variance_x1"], 2 * kappa * T, rtol=0.05)
    assert not rep["flag_low"]


def test_endpoint_variance_large_kappa(desk):
    u, tree = build_bq(desk, 1)
    spec = EnsembleSpec(4000, u.min_scale / 4, 0.05, seed=3)
    a = endpoint_variance_on_D(u, tree, 1, 1.0, spec, n_starts=4)
    b = endpoint_variance_on_D(None, tree, 1, 1.0, spec, n_starts=4)
    assert np.allclose(a["variance"], b["variance"], rtol=0.1)


def test_gaussian_shell_oracle(desk):
    tree = PipeTree(desk, 1)
    kappa, T = 1e-2, 1.0
    c2 = math.sqrt(2 * kappa * T)
    rep = two_cluster_diagnostic(None, tree, 1, kappa, EnsembleSpec(20_000, 0.1, T, seed=5), c2, K=3.0,
                                 n_starts=4)
    near, far = gaussian_shell(c2, 2 * kappa * T)
    row = rep["rows"][0]
    assert row["p_near_min"] == pytest.approx(near, abs=0.02)
    assert row["p_far_min"] == pytest.approx(far, abs=0.02)
    assert 0 < rep["p_omega_tilde"] <= 1
    assert not rep["deterministic"]


def test_two_cluster_deterministic_limit(desk):
    u, tree = build_bq(desk, 1)
    rep = two_cluster_diagnostic(u, tree, 1, 0.0, EnsembleSpec(8, u.min_scale / 4, 0.05), [0.01, 0.02],
                                 n_starts=3)
    assert rep["deterministic"]
    assert all(r["frontier"] in (0.0, 1.0) or r["frontier"] == 0.0 for r in rep["rows"])
    assert "u1_integral_mean" in rep


def test_two_cluster_rejects_bad_c2(desk):
    with pytest.raises(DomainError):
        two_cluster_diagnostic(None, PipeTree(desk, 1), 1, 1e-2, EnsembleSpec(4, 1.0, 1.0), -1.0)


@pytest.mark.slow
def test_zero_noise_hitting_times_match_geometry(desk):
    u, tree = build_bq(desk, 2)
    dt = u.min_scale / (4 * u.max_speed)
    rep = stopping_time_profile(u, tree, 2, 0.0, EnsembleSpec(1, dt, 0.7, seed=3), n_starts=2)
    blk = tree.blocks[0]
    for i, eta, hit in zip(rep["picked"], rep["etas"], rep["hits"][:, 0, 0]):
        t, _ = blk.backward_transit(tree.branch[1][i], eta)
        if t < 0.7 - 10 * dt:
            assert hit == pytest.approx(t, rel=0.01)


def test_stopping_profile_needs_level_two(desk):
    with pytest.raises(DomainError):
        stopping_time_profile(None, PipeTree(desk, 1), 1, 1e-3, EnsembleSpec(4, 0.1, 1.0))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(1, 9000))
def test_determinism_property(seed, n):
    spec = EnsembleSpec(n, 0.5, 1.0, seed=seed)
    a = backward_flow_ensemble(None, 1e-3, spec, [[0.1, 0.1]])
    b = backward_flow_ensemble(None, 1e-3, spec, [[0.1, 0.1]])
    assert np.array_equal(a.endpoints, b.endpoints)


def test_endpoint_csv(tmp_path):
    b = backward_flow_ensemble(None, 1e-2, EnsembleSpec(3, 1.0, 1.0), start_grid(1))
    p = tmp_path / "mc.csv"
    b.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "start_x,start_y,end_x,end_y,seed_index"
    assert len(lines) == 4 and lines[-1].endswith(",2")


def test_threads_env_parsing(monkeypatch):
    from anodiss.stochastic.ensemble import thread_count

    monkeypatch.setenv("ANODISS_THREADS", "x")
    assert thread_count() == 1
    monkeypatch.setenv("ANODISS_THREADS", "3")
    assert thread_count() == 3
    assert os.environ["ANODISS_THREADS"] == "3"


def test_fldiss_reuses_solve():
    kappa, T = 1e-2, 1.0
    spec = EnsembleSpec(500, 1.0, T, seed=1)
    a = fldiss_check(None, cosx, kappa, T, spec, m=4)
    b = fldiss_check(None, cosx, kappa, T, spec, m=4, solve=a["solve"])
    assert a["rhs"] == b["rhs"] and a["lhs"] == b["lhs"]
    with pytest.raises(DomainError):
        fldiss_check(None, cosx, 2 * kappa, T, spec, m=4, solve=a["solve"])
