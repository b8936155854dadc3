"""Monte Carlo estimators built on backward-flow ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import DomainError
from ..scalar_pde.solver import SolverConfig, solve_adv_diff
from .ensemble import CHUNK, EnsembleSpec, backward_flow_ensemble, simulate


def periodic_function(theta0):
    """Callable on ``R^2`` from a callable or a grid array (periodic cubic spline)."""
    if callable(theta0):
        return theta0
    arr = np.asarray(theta0, dtype=float)
    if arr.ndim == 0:
        c = float(arr)
        return lambda x, y: np.full(np.shape(x), c)
    n = arr.shape[0]
    coef = ndimage.spline_filter(arr, order=3, mode="grid-wrap")

    def f(x, y):
        pts = np.stack([np.ravel(x) * n, np.ravel(y) * n])
        return ndimage.map_coordinates(coef, pts, order=3, mode="grid-wrap", prefilter=False).reshape(np.shape(x))

    return f


def grid_values(theta0, res):
    if callable(theta0):
        g = np.arange(res) / res
        X, Y = np.meshgrid(g, g, indexing="ij")
        return np.broadcast_to(theta0(X, Y), X.shape).astype(float)
    arr = np.asarray(theta0, dtype=float)
    if arr.ndim == 0:
        return np.full((res, res), float(arr))
    return arr


@dataclass
class FKEstimate:
    starts: np.ndarray
    estimate: np.ndarray
    se: np.ndarray

    def ci(self, z=3.0):
        return self.estimate - z * self.se, self.estimate + z * self.se


def feynman_kac_estimate(batch, theta0):
    """Per-start mean of ``theta0(endpoint)`` with its standard error."""
    f = periodic_function(theta0)
    vals = f(batch.endpoints[..., 0], batch.endpoints[..., 1])
    n = vals.shape[1]
    est = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(est))
    return FKEstimate(batch.starts, est, se)


def start_grid(m, offset=0.5):
    """Uniform ``m x m`` starts at cell centres."""
    g = (np.arange(m) + offset) / m
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def variance_with_se(vals):
    """Unbiased per-row variance and its standard error (from the fourth central moment)."""
    n = vals.shape[1]
    mu = vals.mean(axis=1, keepdims=True)
    d = vals - mu
    m2 = (d**2).sum(axis=1) / n
    m4 = (d**4).sum(axis=1) / n
    var = m2 * n / (n - 1)
    se2 = np.maximum(m4 - m2**2 * (n - 3) / (n - 1), 0.0) / n
    return var, np.sqrt(se2)


def fldiss_check(u, theta0, kappa, T, spec, m=16, res=64, cfg=None, solve=None):
    """Both sides of the fluctuation-dissipation equality.

    LHS: mean over an ``m x m`` start grid of the endpoint variance of
    ``theta0``; RHS: ``2 kappa int_0^T int |grad theta|^2`` from the PDE
    solver at resolution ``res`` (the field's own grid when it is a grid field).
    A finished run of the same problem may be passed as ``solve``.
    """
    if spec.T != T:
        spec = EnsembleSpec(spec.n_traj, spec.dt, T, spec.seed, spec.store_paths)
    starts = start_grid(m)
    batch = backward_flow_ensemble(u, kappa, spec, starts)
    f = periodic_function(theta0)
    vals = f(batch.endpoints[..., 0], batch.endpoints[..., 1])
    var, se = variance_with_se(vals)
    lhs = float(var.mean())
    mc_se = float(math.sqrt((se**2).sum()) / len(se))
    if solve is None:
        n_grid = getattr(u, "res", res) if u is not None else res
        solve = solve_adv_diff(u, grid_values(theta0, n_grid), kappa, T, cfg or SolverConfig())
    elif solve.kappa != kappa or abs(solve.times[-1] - T) > 1e-12 * max(1.0, T):
        raise DomainError("precomputed solve has a different kappa or final time")
    sol = solve
    rhs = float(2 * sol.cum_diss[-1])
    pde_tol = sol.energy_residual * sol.e0
    rel = abs(lhs - rhs) / rhs if rhs else abs(lhs - rhs)
    return {"lhs": lhs, "rhs": rhs, "mc_se": mc_se, "pde_tol": pde_tol, "rel_err": rel,
            "ok": abs(lhs - rhs) <= 3 * (mc_se + pde_tol) + 1e-300,
            "per_start_variance": var, "per_start_se": se, "solve": sol}


def endpoint_variance_on_D(u, tree, q, kappa, spec, n_starts=64, cap=None):
    """Endpoint variance for starts in ``D_q`` (one per good rectangle up to ``cap``, then uniform)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xD5E7]))
    starts = tree.sample_dset(q, n_starts, rng, cap=cap)
    batch = backward_flow_ensemble(u, kappa, spec, starts)
    var = batch.variance
    var1 = batch.variance_x1
    brown = 4 * kappa * spec.T
    return {"starts": starts, "variance": var, "variance_x1": var1,
            "min_variance": float(var.min()), "min_variance_x1": float(var1.min()),
            "area_D": tree.dset_area(q), "brownian": brown,
            "flag_low": bool(var.min() < 0.25 * brown), "batch": batch}


def gaussian_shell(c2, sigma2):
    """``P[|Z| <= c2]`` and ``P[|Z| >= 2 c2]`` for a 2D centred Gaussian with per-axis variance ``sigma2``."""
    near = 1 - math.exp(-(c2**2) / (2 * sigma2))
    far = math.exp(-4 * c2**2 / (2 * sigma2))
    return near, far


def two_cluster_diagnostic(u, tree, q, kappa, spec, c2, K=None, n_starts=32, starts=None):
    """Near/far probabilities of endpoints around each start in ``D_q``.

    ``c2`` is a value or a sequence; the report gives, per ``c2``, the
    minimum over starts of ``min(P_near, P_far)`` and the best ``c2``.
    With ``K`` the fraction of paths with ``sup_s |B_s| <= K`` is reported.
    The integral ``int u^1(Y_s) ds`` along the paths is summarised too.
    """
    c2s = np.atleast_1d(np.asarray(c2, dtype=float))
    if np.any(c2s <= 0):
        raise DomainError("c2 must be positive")
    if starts is None:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC2]))
        starts = tree.sample_dset(q, n_starts, rng)
    track = ("noise_max",) + (("u1_integral",) if u is not None else ())
    batch = backward_flow_ensemble(u, kappa, spec, starts, track=track)
    dist = np.linalg.norm(batch.endpoints - batch.starts[:, None, :], axis=-1)
    rows = []
    for c in c2s:
        near = (dist <= c).mean(axis=1)
        far = (dist >= 2 * c).mean(axis=1)
        rows.append({"c2": float(c), "p_near_min": float(near.min()), "p_far_min": float(far.min()),
                     "frontier": float(np.minimum(near, far).min())})
    best = max(rows, key=lambda r: r["frontier"])
    deterministic = kappa == 0 or bool(np.all(batch.endpoints.std(axis=1) == 0))
    out = {"rows": rows, "best": best, "deterministic": deterministic}
    if K is not None:
        out["p_omega_tilde"] = float((batch.extras["noise_max"] <= K).mean())
    if "u1_integral" in batch.extras:
        ui = batch.extras["u1_integral"]
        out["u1_integral_mean"] = float(ui.mean())
        out["u1_integral_abs_max"] = float(np.abs(ui).max())
    return out


def segment_crossing_times(u, kappa, spec, starts, frames, tol_eta):
    """First simulation time at which each path leaves ``frames[i]`` through its entry face.

    ``frames[i]`` is a list of :class:`RectFrame` (one per tracked level) for
    start ``i``; a hit is a step with ``xi`` going from ``>= 0`` to ``< 0``
    while ``|eta| <= tol_eta[level]``.  Returns ``(S, n, levels)`` with
    ``nan`` for no hit.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    S, n = len(starts), spec.n_traj
    levels = len(frames[0])
    hits = np.full((S, n, levels), np.nan)

    def obs(step, t, Yp, Y, batch):
        off = 0
        for i, c, m in batch:
            sl = slice(off, off + m)
            for lev, fr in enumerate(frames[i]):
                xp, _ = fr.to_local(Yp[sl, 0], Yp[sl, 1])
                xc, ec = fr.to_local(Y[sl, 0], Y[sl, 1])
                # a short step across xi = 0 (not a wrap-around jump)
                crossed = (xp >= 0) & (xc < 0) & (xp - xc < 0.25) & (np.abs(ec) <= tol_eta[lev] + 1e-12)
                rows = c * CHUNK + np.arange(m)
                tgt = hits[i, rows, lev]
                new = crossed & np.isnan(tgt)
                if new.any():
                    frac = xp[new] / (xp[new] - xc[new])
                    tgt[new] = t - spec.T / spec.steps * (1 - frac)
                    hits[i, rows, lev] = tgt
            off += m

    simulate(u, kappa, spec, starts, observer=obs)
    return hits


def stopping_time_profile(u, tree, q, kappa, spec, n_starts=16, seed_offset=0):
    """Reverse hitting times of the ``Gamma_j`` entry segments for starts in ``C_{q-1}``.

    Starts are spread along ``C_{q-1,R}`` for rectangles ``R`` in ``E_{q-1}``;
    level ``j`` of the output is the first simulation time at which the path
    crosses the entry segment ``Gamma_{j,R_j}`` of the level-``j`` ancestor.
    Returns hitting times, quantiles per level and a fitted bracket
    ``C a_j^{3 delta} <= T_hit <= C' a_j^eps`` (reported only).
    """
    if q < 2:
        raise DomainError("stopping-time profile needs q >= 2")
    level = q - 1
    idx = tree.indices(level, "E")
    if len(idx) == 0:
        raise DomainError(f"E_{level} is empty")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x57, seed_offset]))
    pick = rng.choice(idx, size=min(n_starts, len(idx)), replace=False)
    L, A, B = tree.dims(level)
    starts, frames, etas = [], [], []
    for i in pick:
        fr = tree.frame(level, i)
        eta = rng.uniform(-A / 4, A / 4)
        starts.append(fr.to_global(0.0, eta))
        etas.append(eta)
        chain = []
        a = i
        for j in range(level - 1, -1, -1):
            a = tree.parent[j + 1][a]
            chain.append(tree.frame(j, a))
        frames.append(chain)
    starts = np.array(starts, dtype=float)
    tol = []
    for j in range(level - 1, -1, -1):
        Aj = tree.table.value("A", j)
        tol.append(Aj / 2 - tree.table.value("Abar", j + 1))
    hits = segment_crossing_times(u, kappa, spec, starts, frames, tol)
    t = tree.table
    delta, eps = t.delta, t.eps
    levels = list(range(level - 1, -1, -1))
    summary = []
    for k, j in enumerate(levels):
        h = hits[..., k].ravel()
        ok = h[np.isfinite(h)]
        row = {"level": j, "hit_fraction": float(np.isfinite(h).mean())}
        if ok.size:
            qs = np.quantile(ok, [0.05, 0.25, 0.5, 0.75, 0.95])
            aj = math.exp(t.log_a[j])
            row.update({"q05": qs[0], "q25": qs[1], "median": qs[2], "q75": qs[3], "q95": qs[4],
                        "iqr": qs[3] - qs[1], "C_lower": float(ok.min() / aj ** (3 * delta)),
                        "C_upper": float(ok.max() / aj**eps)})
        summary.append(row)
    return {"starts": starts, "etas": np.array(etas), "picked": pick, "hits": hits,
            "levels": levels, "summary": summary}
