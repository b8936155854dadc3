from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anodiss.errors import DomainError, ResolutionError
from anodiss.fieldgen import (
    AnalyticField,
    PipeTree,
    RectFrame,
    StraightPatch,
    build_bq,
    rotating_pipe,
    turn_transit_time,
)
from anodiss.fieldgen.analysis import (
    PatchField,
    curve_gradient_integral,
    holder_norm,
    stream_function,
    straight_pipe_field,
)
from anodiss.fieldgen.block import BranchingBlock, rotate
from anodiss.fieldgen.mollified import GridField, build_uq, mollify, required_resolution


@pytest.fixture(scope="module")
def b2(desk):
    return build_bq(desk, 2)


# -- patches ------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.1), st.floats(1.0, 16.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_turn_patch_divergence_free(r, lam, s, t):
    p = rotating_pipe(r, 2 * r, lam, 1.0)
    ang = t * math.pi / 2
    rad = r * (1 + s * 0.999)
    x, y = rad * math.sin(ang) * math.sqrt(lam), rad * math.cos(ang) / math.sqrt(lam)
    if not p.contains(np.array([x]), np.array([y]))[0]:
        return
    J = p.jacobian(np.array([x]), np.array([y]))[0]
    assert abs(J[0, 0] + J[1, 1]) < 1e-9 * (1 + np.abs(J).max())


def test_rotating_pipe_transit_time():
    p = rotating_pipe(0.1, 0.2, 1.0, 2.0)
    # unstretched pipe: quarter circle of radius rho at speed v
    assert turn_transit_time(p, 0.15) == pytest.approx(math.pi * 0.15 / (2 * 2.0))


def test_rotating_pipe_rejects_bad_radii():
    with pytest.raises(DomainError):
        rotating_pipe(0.1, 0.3, 1.0, 1.0)
    with pytest.raises(DomainError):
        rotating_pipe(0.1, 0.2, 0.5, 1.0)


def test_straight_patch_flux():
    p = StraightPatch(0.0, 1.0, 0.0, 0.2, 3.0, 0.0)
    a, b = p.velocity(np.array([0.5]), np.array([0.1]))
    assert a[0] == 3.0 and b[0] == 0.0


# -- block --------------------------------------------------------------------

def test_block_children_and_vertical_flux(desk):
    blk = BranchingBlock(desk.value("L", 0), desk.value("A", 0), desk.value("B", 0), desk.value("A", 1),
                         desk.value("B", 1), desk.n(1), desk.value("v", 0), L2=desk.value("L", 1))
    assert len([blk.child_origin(i) for i in range(2 * blk.n)]) == 20
    x0s = [blk.child_bounds(i)[0] for i in range(blk.n)]
    assert np.allclose(np.diff(x0s), desk.value("A", 1) + desk.value("B", 1))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_block_divergence_free(desk, fx, fy):
    u = AnalyticField(desk, 1)
    J = u.jacobian(np.array([fx]), np.array([fy]))[0]
    assert abs(J[0, 0] + J[1, 1]) < 1e-8 * (1 + np.abs(J).max())


# -- tree ---------------------------------------------------------------------

def test_cardinalities(desk):
    rows = PipeTree(desk, 3).cardinalities()
    got = [(r["R"], r["E"], r["M"], r["G"]) for r in rows[1:]]
    assert got == [(20, 16, 8, 8), (400, 256, 160, 64), (8000, 4096, 3200, 512)]


def test_dset_areas(desk):
    assert PipeTree(desk, 1).dset_area(1) == pytest.approx(6.6e-5, rel=0.01)
    assert PipeTree(desk, 2).dset_area(2) == pytest.approx(3.58e-6, rel=0.01)


def test_frames_roundtrip_and_long_rectangles():
    f = RectFrame((0.1, 0.5), 0, 0.8, 0.9)
    xi, eta = f.to_local(0.85, 0.5)
    assert xi == pytest.approx(0.75) and eta == pytest.approx(0.0)
    for rot in range(4):
        g = RectFrame((0.3, 0.7), rot, 0.2, 0.05)
        x, y = g.to_global(0.1, 0.01)
        xi, eta = g.to_local(x, y)
        assert (xi, eta) == pytest.approx((0.1, 0.01))


def test_dset_inside_good_rectangles(desk):
    tree = PipeTree(desk, 2)
    pts = tree.sample_dset(2, 50, np.random.default_rng(1))
    idx = tree.locate(2, pts[:, 0], pts[:, 1])
    # strips sit beside the pipe, inside the host rectangle
    assert np.all(idx >= 0)
    assert np.all(tree.in_G[2][idx])


def test_fset_contains_child_axial_support(desk):
    u, tree = build_bq(desk, 1)
    F = tree.fset_frames(0, 0)
    rng = np.random.default_rng(0)
    for f in tree.frames(1, "R"):
        x, y = f.sample(500, rng)
        a, b = u.evaluate(x, y)
        axial, _ = rotate(-f.rotation, a, b)
        inF = np.zeros(len(x), bool)
        for g in F:
            inF |= g.contains(x, y)
        assert not np.any((np.abs(axial) > 1e-12) & ~inF)


# -- analytic field -----------------------------------------------------------

def test_flux_through_vertical_lines(b2, desk):
    u, _ = b2
    for x in np.linspace(0.01, 0.99, 9):
        assert u.segment_flux((x, 0.0), (x, 1.0)) == pytest.approx(desk.value("A", 0) * desk.value("v", 0),
                                                                 rel=1e-10)


def test_box_flux_vanishes(b2):
    u, _ = b2
    rng = np.random.default_rng(3)
    for _ in range(50):
        x0, y0 = rng.uniform(0, 1, 2)
        w, h = rng.uniform(1e-3, 0.3, 2)
        assert abs(u.box_flux(x0, x0 + w, y0, y0 + h)) < 1e-10


def test_field_is_periodic(b2):
    u, _ = b2
    x, y = np.random.default_rng(0).uniform(0, 1, (2, 100))
    a = u.evaluate(x, y)
    b = u.evaluate(x + 1, y - 2)
    # x + 1 - 1 differs from x by rounding only
    assert np.allclose(a[0], b[0], atol=1e-9) and np.allclose(a[1], b[1], atol=1e-9)


def test_scalar_evaluation(b2):
    u, _ = b2
    a, b = u.evaluate(0.3, 0.5)
    assert np.shape(a) == ()


def test_speed_bounded(b2, desk):
    u, _ = b2
    x, y = np.random.default_rng(5).uniform(0, 1, (2, 20000))
    a, b = u.evaluate(x, y)
    assert np.hypot(a, b).max() <= desk.value("v", 0) * (1 + 1e-12)


def test_refuses_tiny_scales(desk):
    with pytest.raises(DomainError):
        build_bq(desk, 4)


def test_strip_outside_root(desk):
    u = AnalyticField(desk, 0)
    a, b = u.evaluate(np.array([0.3, 0.3]), np.array([0.5, 0.2]))
    assert a.tolist() == [desk.value("v", 0), 0.0] and b.tolist() == [0.0, 0.0]


# -- mollified ----------------------------------------------------------------

def test_required_resolution(desk):
    assert required_resolution(desk, 0)[0] == 160
    assert required_resolution(desk, 1, "every")[0] == 3201
    assert required_resolution(desk, 2, "every")[0] == 58311


def test_build_uq_resolution_guard(desk):
    with pytest.raises(ResolutionError):
        build_uq(desk, 0, 128)


def test_uq_divergence_free_and_bounded(desk):
    u = build_uq(desk, 0, 256)
    assert u.divergence_norm() < 1e-12
    assert u.max_speed <= desk.value("v", 0) * (1 + 1e-6)
    assert u.min_scale == pytest.approx(0.025)


def test_mollify_preserves_mean():
    f = np.random.default_rng(0).normal(size=(64, 64))
    g = mollify(f, 0.05)
    assert g.mean() == pytest.approx(f.mean(), abs=1e-14)
    assert g.std() < f.std()


def test_grid_field_interpolation_orders():
    u = GridField.from_function(lambda X, Y: (np.sin(2 * np.pi * Y), 0 * X), 64, order=3)
    y = np.linspace(0, 1, 37)
    a, _ = u.evaluate(0 * y + 0.3, y)
    assert np.abs(a - np.sin(2 * np.pi * y)).max() < 1e-5
    a1, _ = u.with_order(1).evaluate(0 * y + 0.3, y)
    assert np.abs(a1 - np.sin(2 * np.pi * y)).max() < 2e-3


# -- analysis -----------------------------------------------------------------

def test_stream_function_of_sine_shear():
    n = 64
    g = np.arange(n) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    u = np.stack([-2 * np.pi * np.sin(2 * np.pi * Y), 0 * X])
    r = stream_function(u)
    assert np.abs(r.H + np.cos(2 * np.pi * Y)).max() < 1e-12
    assert r.recovery_error < 1e-12


def test_stream_function_reports_mean_flow():
    u = np.zeros((2, 32, 32))
    u[0] += 0.5
    r = stream_function(u)
    assert r.mean_velocity == pytest.approx((0.5, 0.0))
    assert np.abs(r.H).max() < 1e-14


def test_holder_seminorm_of_sine():
    n = 128
    g = np.arange(n) / n
    f = np.sin(2 * np.pi * g)[:, None] * np.ones(n)[None]
    est = holder_norm(f, 1.0)
    assert est.seminorm == pytest.approx(2 * np.pi, rel=1e-3)
    assert est.norm == pytest.approx(est.seminorm + 1.0, rel=1e-9)


def test_holder_rejects_bad_alpha():
    with pytest.raises(DomainError):
        holder_norm(np.zeros((8, 8)), 1.5)


def test_curve_integral_straight_pipe_is_zero():
    f = straight_pipe_field(0.0, 1.0, 0.0, 0.2, 1.0)
    r = curve_gradient_integral(f, (0.1, 0.1), 0.05, 0.5)
    assert r.value == 0.0 and not r.left_domain


def test_curve_integral_unstretched_pipe():
    r0 = 0.1
    f = PatchField([rotating_pipe(r0, 2 * r0, 1.0, 1.0)])
    res = curve_gradient_integral(f, (0.0, 1.5 * r0), r0 / 4, 10.0)
    assert res.left_domain
    assert res.value <= math.pi * 1.05


def test_curve_integral_grows_with_stretch():
    r0 = 0.1
    vals = []
    for lam in (1.0, 4.0):
        f = PatchField([rotating_pipe(r0, 2 * r0, lam, 1.0)])
        vals.append(curve_gradient_integral(f, (0.0, 1.5 * r0), r0 / 4, 10.0).value)
    assert vals[1] > vals[0]
