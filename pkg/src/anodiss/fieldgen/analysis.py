"""Diagnostics on velocity fields: stream function, Hölder estimate, gradient along curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import spectral
from ..errors import DomainError
from .mollified import GridField
from .patches import StraightPatch, TurnPatch


@dataclass
class StreamResult:
    H: np.ndarray
    mean_velocity: tuple
    divergence: float
    recovery_error: float


def stream_function(u, div_tol=1e-8):
    """Zero-mean ``H`` with ``(-d_y H, d_x H) = u - mean(u)``.

    ``u`` is a ``[2, n, n]`` array or a :class:`GridField`.  The mean velocity
    (a constant flux, not representable by a periodic ``H``) is returned
    separately; the relative divergence and the relative ``L^2`` error of
    ``grad-perp H`` against ``u - mean`` are reported, not enforced.
    """
    data = u.data if isinstance(u, GridField) else np.asarray(u, dtype=float)
    mean = data.mean(axis=(1, 2))
    w = data - mean[:, None, None]
    vort = spectral.grad(w[1])[0] - spectral.grad(w[0])[1]
    H = spectral.inverse_laplacian(vort)
    Hx, Hy = spectral.grad(H)
    scale = math.sqrt(float(np.mean(w**2))) or 1.0
    err = math.sqrt(float(np.mean((-Hy - w[0]) ** 2 + (Hx - w[1]) ** 2))) / scale
    div = float(np.sqrt(np.mean(spectral.divergence(w) ** 2))) * data.shape[1] ** -1 / scale
    return StreamResult(H, (float(mean[0]), float(mean[1])), div, err)


@dataclass
class HolderEstimate:
    alpha: float
    seminorm: float
    sup: float

    @property
    def norm(self):
        return self.sup + self.seminorm


def holder_norm(f, alpha):
    """Hölder estimate from all axis-aligned grid pairs at dyadic lags ``h, 2h, ..., 1/4``.

    ``f`` is ``[n, n]`` (scalar) or ``[c, n, n]`` (vector; Euclidean norm).
    """
    if not (0 < alpha <= 1):
        raise DomainError("alpha must lie in (0, 1]")
    data = f.data if isinstance(f, GridField) else np.asarray(f, dtype=float)
    if data.ndim == 2:
        data = data[None]
    n = data.shape[-1]
    sup = float(np.sqrt((data**2).sum(axis=0)).max())
    semi = 0.0
    lag = 1
    while lag <= n // 4:
        dist = (lag / n) ** alpha
        for axis in (1, 2):
            diff = np.roll(data, -lag, axis=axis) - data
            semi = max(semi, float(np.sqrt((diff**2).sum(axis=0)).max()) / dist)
        lag *= 2
    return HolderEstimate(alpha, semi, sup)


class PatchField:
    """Field made of closed-form patches in the plane (first match wins, zero elsewhere)."""

    kind = "analytic"

    def __init__(self, patches, min_scale=None):
        self.patches = list(patches)
        self.min_scale = min_scale if min_scale is not None else min(
            p.r if isinstance(p, TurnPatch) else min(p.x1 - p.x0, p.y1 - p.y0) for p in self.patches)

    @property
    def max_speed(self):
        return max(p.speed for p in self.patches)

    def _each(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        free = np.ones(np.broadcast(x, y).shape, dtype=bool)
        x, y = np.broadcast_to(x, free.shape), np.broadcast_to(y, free.shape)
        for p in self.patches:
            m = free & p.contains(x, y)
            if m.any():
                yield p, m, x[m], y[m]
                free &= ~m

    def support(self, x, y):
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)
        for p, m, _, _ in self._each(x, y):
            out |= m
        return out

    def evaluate(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        u1, u2 = np.zeros(shape), np.zeros(shape)
        for p, m, xs, ys in self._each(x, y):
            a, b = p.velocity(xs, ys)
            u1[m], u2[m] = a, b
        return u1, u2

    def jacobian(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        J = np.zeros(shape + (2, 2))
        for p, m, xs, ys in self._each(x, y):
            J[m] = p.jacobian(xs, ys)
        return J


def _ball_offsets(eps, n_r=8, n_theta=32):
    r = eps * np.arange(1, n_r + 1) / n_r
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    ox = np.concatenate([[0.0], (R * np.cos(TH)).ravel()])
    oy = np.concatenate([[0.0], (R * np.sin(TH)).ravel()])
    return ox, oy


def _ball_sup_grad(field, p, offs):
    J = field.jacobian(p[0] + offs[0], p[1] + offs[1])
    # operator norm of each 2x2 Jacobian
    return float(np.linalg.norm(J, ord=2, axis=(-2, -1)).max())


@dataclass
class CurveIntegral:
    value: float
    t_reached: float
    left_domain: bool
    end_point: tuple
    steps: int


def curve_gradient_integral(field, start, eps_ball, t_end, dt=None, support=None):
    """``int_0^T sup_{B_eps(gamma(t))} |grad u| dt`` along ``gamma' = u(gamma)`` (RK4).

    The ball supremum is taken over a polar stencil of 257 points
    (Jacobians from the patch formulas or from spectral grid derivatives).
    ``support`` (a predicate) ends the integration when the curve leaves the
    pipe; by default a field's own support is used when it has one and
    otherwise the curve stops where the speed vanishes.
    """
    vmax = field.max_speed
    if vmax <= 0:
        raise DomainError("field vanishes identically")
    h_max = field.min_scale / (10 * vmax)
    steps = max(1, math.ceil(t_end / (dt if dt is not None and dt < h_max else h_max)))
    h = t_end / steps
    offs = _ball_offsets(eps_ball)
    if support is None:
        if hasattr(field, "support"):
            support = lambda p: bool(field.support(p[0], p[1]))  # noqa: E731
        else:
            support = lambda p: math.hypot(*map(float, field.evaluate(p[0], p[1]))) > 1e-12 * vmax  # noqa: E731

    def vel(p):
        a, b = field.evaluate(p[0], p[1])
        return np.array([float(a), float(b)])

    p = np.asarray(start, dtype=float)
    if not support(p):
        raise DomainError("start point is not inside a pipe")
    g_prev = _ball_sup_grad(field, p, offs)
    total = 0.0
    for k in range(steps):
        k1 = vel(p)
        k2 = vel(p + 0.5 * h * k1)
        k3 = vel(p + 0.5 * h * k2)
        k4 = vel(p + h * k3)
        q = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not support(q):
            return CurveIntegral(total, k * h, True, tuple(p), k)
        g = _ball_sup_grad(field, q, offs)
        total += 0.5 * h * (g_prev + g)
        g_prev = g
        p = q
    return CurveIntegral(total, t_end, False, tuple(p), steps)


def straight_pipe_field(x0, x1, y0, y1, v):
    """A single straight pipe as a :class:`PatchField` (test helper)."""
    return PatchField([StraightPatch(x0, x1, y0, y1, v, 0.0)])
