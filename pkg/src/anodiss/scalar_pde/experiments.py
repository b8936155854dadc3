"""PDE-side checks: dissipation ladders, derivative bound, stream-function datum,
velocity stability and the 2.5-dimensional Navier-Stokes embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import spectral
from ..errors import DomainError
from .solver import SolverConfig, solve_adv_diff, velocity_grid


def _c_norms(f):
    """``(|f|_C0, |f|_C1, |f|_C2)`` with spectral derivatives; each adds the next sup."""
    fx, fy = spectral.grad(f)
    fxx, fxy = spectral.grad(fx)
    _, fyy = spectral.grad(fy)
    c0 = float(np.abs(f).max())
    c1 = c0 + float(np.sqrt(fx**2 + fy**2).max())
    c2 = c1 + float(np.sqrt(fxx**2 + 2 * fxy**2 + fyy**2).max())
    return c0, c1, c2


def dissipation_ladder(u_builder, table, q_list, theta0, T, kappa_cap=None, cfg=None):
    """Run ``(u_builder(q), kappa_q)`` for each ``q`` and report ``D_q(T)`` and ``D_q(T)/e(0)``.

    ``u_builder`` returns the field to use for level ``q`` (or raises);
    ``kappa_cap`` replaces ``kappa_q`` by ``min(kappa_q, kappa_cap)``.
    """
    rows = []
    for q in q_list:
        kappa = math.exp(table.log_kappa[q])
        if kappa_cap is not None:
            kappa = min(kappa, kappa_cap)
        u = u_builder(q)
        r = solve_adv_diff(u, theta0, kappa, T, cfg)
        rows.append({"q": q, "kappa": kappa, "D": float(r.cum_diss[-1]), "e0": r.e0,
                     "ratio": float(r.cum_diss[-1] / r.e0) if r.e0 else 0.0,
                     "energy_residual": r.energy_residual})
    return rows


def kappa_ladder(u, theta0, kappas, T, cfg=None):
    """Same field, several diffusivities (baseline ladders)."""
    rows = []
    for k in kappas:
        r = solve_adv_diff(u, theta0, k, T, cfg)
        rows.append({"kappa": k, "D": float(r.cum_diss[-1]), "e0": r.e0,
                     "ratio": float(r.cum_diss[-1] / r.e0), "energy_residual": r.energy_residual})
    return rows


@dataclass
class DerivativeBound:
    max_dtheta: float
    bound_l2: float
    bound_linf: float
    u_l2: float
    u_linf: float

    @property
    def margin(self):
        return self.bound_l2 - self.max_dtheta

    @property
    def ok(self):
        return self.margin >= 0


def time_derivative_bound_check(result, u, theta0):
    """Compare ``max_k |theta(t_{k+1}) - theta(t_k)|_inf / dt`` with ``|u| |theta0|_C1 + |theta0|_C2``.

    The bound is evaluated with ``|u|_{L^2}`` (as stated) and with
    ``|u|_{L^inf}``; the verdict uses the former.
    """
    snaps, ts = result.snapshots, result.snap_times
    rate = 0.0
    for k in range(len(ts) - 1):
        rate = max(rate, float(np.abs(snaps[k + 1] - snaps[k]).max()) / (ts[k + 1] - ts[k]))
    vel = velocity_grid(u, result.res)
    u_l2 = math.sqrt(float(np.mean((vel**2).sum(axis=0))))
    u_inf = float(np.sqrt((vel**2).sum(axis=0)).max())
    _, c1, c2 = _c_norms(np.asarray(theta0, dtype=float))
    return DerivativeBound(rate, u_l2 * c1 + c2, u_inf * c1 + c2, u_l2, u_inf)


def stream_ic_experiment(u, H, kappa_list, T, cfg=None, slack=1.1):
    """Runs with ``theta0 = H``; checks ``D(T) <= slack * kappa T |grad H|^2`` and monotone decay of ``D/e0``."""
    gx, gy = spectral.grad(np.asarray(H, dtype=float))
    grad_sq = float(np.mean(gx**2 + gy**2))
    rows = []
    for k in kappa_list:
        r = solve_adv_diff(u, H, k, T, cfg)
        D = float(r.cum_diss[-1])
        budget = k * T * grad_sq
        rows.append({"kappa": k, "D": D, "ratio": D / r.e0, "budget": budget,
                     "within": D <= slack * budget, "energy_residual": r.energy_residual})
    order = sorted(rows, key=lambda r: -r["kappa"])
    monotone = all(a["ratio"] > b["ratio"] for a, b in zip(order, order[1:]))
    return {"rows": rows, "monotone": monotone, "grad_H_sq": grad_sq,
            "ok": monotone and all(r["within"] for r in rows)}


def velocity_stability_check(u1, u2, theta0, kappa, T, cfg=None, allowance=2.0):
    """``int |theta1 - theta2|^2 (T) <= allowance * |theta0|_inf^2 / kappa * int_0^T int |u1 - u2|^2``."""
    if kappa <= 0:
        raise DomainError("stability bound needs kappa > 0")
    theta0 = np.asarray(theta0, dtype=float)
    n = theta0.shape[0]
    r1 = solve_adv_diff(u1, theta0, kappa, T, cfg)
    r2 = solve_adv_diff(u2, theta0, kappa, T, cfg)
    lhs = float(np.mean((r1.final() - r2.final()) ** 2))
    du = velocity_grid(u1, n) - velocity_grid(u2, n)
    rhs = float(np.abs(theta0).max()) ** 2 / kappa * T * float(np.mean((du**2).sum(axis=0)))
    return {"lhs": lhs, "rhs": rhs, "ok": lhs <= allowance * rhs + 1e-300}


@dataclass
class NSFields:
    u: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    force: np.ndarray
    nu: float


def _advective(u, f):
    """Dealiased ``u . grad f``."""
    n = f.shape[0]
    KX, KY, _ = spectral.wavenumbers(n)
    m = spectral.dealias_mask(n)
    fh = spectral.fft2(f) * m
    fx = spectral.ifft2(1j * KX * fh, n)
    fy = spectral.ifft2(1j * KY * fh, n)
    return spectral.ifft2(spectral.fft2(u[0] * fx + u[1] * fy) * m, n)


def ns3d_assemble(u_grid, nu, theta_result):
    """Assemble ``v = (u, theta)``, ``P = p``, ``F = (f, 0)`` and their NS residual.

    ``p`` solves ``Delta p = -div div(u (x) u)`` (zero mean),
    ``f = Leray(u . grad u) - nu Delta u``.  ``theta_result`` must come from a
    run with ``kappa = nu``; ``d_t theta`` is the solver's right-hand side at
    the saved snapshots, the residual uses the advective operators.  Returns
    ``(fields, report)``; ``report['relative']`` normalises by the largest
    term of the momentum and scalar equations.
    """
    if not math.isclose(theta_result.kappa, nu, rel_tol=1e-12, abs_tol=0.0):
        raise DomainError("theta must be computed with kappa = nu")
    n = theta_result.res
    u = velocity_grid(u_grid, n)
    KX, KY, K2 = spectral.wavenumbers(n)
    m = spectral.dealias_mask(n)
    uh = [spectral.fft2(u[0]), spectral.fft2(u[1])]
    # conservative form for the pressure
    prod = {(i, j): spectral.fft2(u[i] * u[j]) * m for i in range(2) for j in range(2)}
    K = (KX, KY)
    divdiv = sum((1j * K[i]) * (1j * K[j]) * prod[(i, j)] for i in range(2) for j in range(2))
    with np.errstate(invalid="ignore", divide="ignore"):
        ph = np.where(K2 > 0, divdiv / K2, 0.0)  # Delta p = -divdiv
    p = spectral.ifft2(ph, n)
    # advective form for the force and the residual
    adv = np.stack([_advective(u, u[0]), _advective(u, u[1])])
    lap_u = np.stack([spectral.ifft2(-K2 * uh[0], n), spectral.ifft2(-K2 * uh[1], n)])
    force = spectral.leray(adv) - nu * lap_u
    px, py = spectral.ifft2(1j * KX * ph, n), spectral.ifft2(1j * KY * ph, n)
    mom = adv + np.stack([px, py]) - nu * lap_u - force
    mom_norm = math.sqrt(float(np.mean((mom**2).sum(axis=0))))
    scale_mom = max(math.sqrt(float(np.mean((adv**2).sum(axis=0)))),
                    math.sqrt(float(np.mean((force**2).sum(axis=0)))), 1e-300)
    scal = []
    scale_s = 1e-300
    for th in theta_result.snapshots:
        thh = spectral.fft2(th) * m
        flux = spectral.fft2(u[0] * spectral.ifft2(thh, n)) * KX + spectral.fft2(u[1] * spectral.ifft2(thh, n)) * KY
        dth = spectral.ifft2(-1j * flux * m - nu * K2 * thh, n)
        lap = spectral.ifft2(-K2 * thh, n)
        adv_t = _advective(u, spectral.ifft2(thh, n))
        r = dth + adv_t - nu * lap
        scal.append(math.sqrt(float(np.mean(r**2))))
        scale_s = max(scale_s, math.sqrt(float(np.mean(dth**2))), math.sqrt(float(np.mean(adv_t**2))),
                      math.sqrt(float(np.mean((nu * lap) ** 2))))
    absolute = math.sqrt(mom_norm**2 + max(scal) ** 2)
    rel = max(mom_norm / scale_mom, max(scal) / scale_s)
    fields = NSFields(u, theta_result.snapshots[-1], p, force, nu)
    report = {"momentum": mom_norm, "scalar": max(scal), "absolute": absolute, "relative": rel,
              "energy_residual": theta_result.energy_residual}
    return fields, report
