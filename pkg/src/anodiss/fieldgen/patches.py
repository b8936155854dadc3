"""Closed-form velocity patches: straight pipes and quarter-turn pipes.

A patch is a velocity field supported on a simple region.  All patches are
vectorised over point arrays and expose

* ``contains(x, y)`` -- boolean support mask,
* ``velocity(x, y)`` -- velocity inside the support (caller masks),
* ``jacobian(x, y)`` -- ``(..., 2, 2)`` array, ``J[i, j] = d u_i / d x_j``,
* ``intervals(p0, d)`` -- parameter intervals of the segment ``p0 + t d``,
  ``t in [0, 1]``, lying in the support.

The turn patch is the stretched rotating pipe

.. math::

    w(x, y) = \\Big(\\frac{v y}{s}, -\\frac{v x}{\\lambda^2 s}\\Big),
    \\qquad s = \\sqrt{x^2/\\lambda^2 + y^2},

on the quadrant ``x, y >= 0`` and ``r <= s < 2r``.  It equals
``A u_alpha(A^{-1} p)`` with ``A = diag(sqrt(lam), 1/sqrt(lam))`` and
``alpha = v / sqrt(lam)``; its stream function is ``-v s``, so ``s`` is
constant along trajectories.  Pipes entering at ``{0} x [r, 2r]`` with
velocity ``(v, 0)`` leave through ``[lam r, 2 lam r] x {0}`` with velocity
``(0, -v / lam)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


def _clip_interval(lo, hi, a, b):
    """Intersect [lo, hi] with {t : a + b t >= 0}."""
    if b == 0:
        return (lo, hi) if a >= 0 else None
    t = -a / b
    if b > 0:
        lo = max(lo, t)
    else:
        hi = min(hi, t)
    return (lo, hi) if lo < hi else None


@dataclass(frozen=True)
class StraightPatch:
    """Constant velocity on the half-open box ``[x0, x1) x [y0, y1)``."""

    x0: float
    x1: float
    y0: float
    y1: float
    vx: float
    vy: float

    def contains(self, x, y):
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)

    def velocity(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.vx), np.full_like(x, self.vy)

    def jacobian(self, x, y):
        return np.zeros(np.shape(x) + (2, 2))

    def stream(self, x, y):
        # psi with (-psi_y, psi_x) = (vx, vy)
        return -self.vx * np.asarray(y) + self.vy * np.asarray(x)

    @property
    def bbox(self):
        return (self.x0, self.x1, self.y0, self.y1)

    @property
    def speed(self):
        return math.hypot(self.vx, self.vy)

    def mirrored(self):
        """Reflection ``y -> -y`` of region and field."""
        return StraightPatch(self.x0, self.x1, -self.y1, -self.y0, self.vx, -self.vy)

    def intervals(self, p0, d):
        seg = (0.0, 1.0)
        for a, b in (
            (p0[0] - self.x0, d[0]),
            (self.x1 - p0[0], -d[0]),
            (p0[1] - self.y0, d[1]),
            (self.y1 - p0[1], -d[1]),
        ):
            seg = _clip_interval(seg[0], seg[1], a, b)
            if seg is None:
                return []
        return [seg]


@dataclass(frozen=True)
class TurnPatch:
    """Quarter-turn pipe ``u(p) = sigma M w(M^T (p - c))`` with ``M`` orthogonal."""

    cx: float
    cy: float
    M: tuple  # ((m00, m01), (m10, m11)), entries in {-1, 0, 1}
    sigma: int
    r: float
    lam: float
    v: float

    @property
    def Mat(self):
        return np.array(self.M, dtype=float)

    def _q(self, x, y):
        M = self.M
        dx = np.asarray(x, dtype=float) - self.cx
        dy = np.asarray(y, dtype=float) - self.cy
        # q = M^T (p - c)
        return M[0][0] * dx + M[1][0] * dy, M[0][1] * dx + M[1][1] * dy

    def _s(self, a, b):
        return np.sqrt((a / self.lam) ** 2 + b * b)

    def contains(self, x, y):
        a, b = self._q(x, y)
        s = self._s(a, b)
        return (a >= 0) & (b >= 0) & (s >= self.r) & (s < 2 * self.r)

    def velocity(self, x, y):
        a, b = self._q(x, y)
        s = self._s(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            w1 = self.v * b / s
            w2 = -self.v * a / (self.lam**2 * s)
        M = self.M
        return (
            self.sigma * (M[0][0] * w1 + M[0][1] * w2),
            self.sigma * (M[1][0] * w1 + M[1][1] * w2),
        )

    def jacobian(self, x, y):
        a, b = self._q(x, y)
        s = self._s(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = self.v / (self.lam**2 * s**3)
        J = np.empty(np.shape(a) + (2, 2))
        J[..., 0, 0] = -f * a * b
        J[..., 0, 1] = f * a * a
        J[..., 1, 0] = -f * b * b
        J[..., 1, 1] = f * a * b
        Mt = self.Mat
        return self.sigma * (Mt @ J @ Mt.T)

    def stream(self, x, y):
        a, b = self._q(x, y)
        return self.sigma * round(np.linalg.det(self.Mat)) * (-self.v * self._s(a, b))

    @property
    def bbox(self):
        corners = np.array([[0, 0], [2 * self.lam * self.r, 0], [0, 2 * self.r],
                            [2 * self.lam * self.r, 2 * self.r]], dtype=float)
        pts = corners @ self.Mat.T + [self.cx, self.cy]
        return (pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max())

    @property
    def speed(self):
        return self.v

    def mirrored(self):
        R = np.diag([1.0, -1.0])
        M2 = R @ self.Mat
        return TurnPatch(self.cx, -self.cy, tuple(map(tuple, M2.astype(int).tolist())),
                         self.sigma, self.r, self.lam, self.v)

    def intervals(self, p0, d):
        M = self.M
        a0 = M[0][0] * (p0[0] - self.cx) + M[1][0] * (p0[1] - self.cy)
        b0 = M[0][1] * (p0[0] - self.cx) + M[1][1] * (p0[1] - self.cy)
        ea = M[0][0] * d[0] + M[1][0] * d[1]
        eb = M[0][1] * d[0] + M[1][1] * d[1]
        seg = _clip_interval(0.0, 1.0, a0, ea)
        if seg is not None:
            seg = _clip_interval(seg[0], seg[1], b0, eb)
        if seg is None:
            return []
        lo, hi = seg
        il2 = 1.0 / self.lam**2
        qa = ea * ea * il2 + eb * eb
        qb = 2 * (a0 * ea * il2 + b0 * eb)
        qc = a0 * a0 * il2 + b0 * b0
        outer = _quad_below(qa, qb, qc - 4 * self.r**2)
        if outer is None:
            return []
        lo, hi = max(lo, outer[0]), min(hi, outer[1])
        if lo >= hi:
            return []
        inner = _quad_below(qa, qb, qc - self.r**2)
        if inner is None or inner[1] <= lo or inner[0] >= hi:
            return [(lo, hi)]
        out = []
        if inner[0] > lo:
            out.append((lo, inner[0]))
        if inner[1] < hi:
            out.append((inner[1], hi))
        return out


def _quad_below(a, b, c):
    """Interval where ``a t^2 + b t + c < 0`` for ``a >= 0`` (None if empty)."""
    if a == 0:
        if b == 0:
            return (-math.inf, math.inf) if c < 0 else None
        t = -c / b
        return (-math.inf, t) if b > 0 else (t, math.inf)
    disc = b * b - 4 * a * c
    if disc <= 0:
        return None
    sq = math.sqrt(disc)
    # numerically stable roots
    qq = -0.5 * (b + math.copysign(sq, b))
    t1, t2 = qq / a, c / qq
    return (min(t1, t2), max(t1, t2))


def rotating_pipe(r, R, lam, v):
    """Canonical stretched rotating pipe entering at ``{0} x [r, R]``.

    Only ``R = 2 r`` is supported, matching the construction.
    """
    if not (0 < r < R) or v <= 0 or lam < 1:
        raise DomainError("rotating_pipe needs 0 < r < R, v > 0 and lam >= 1")
    if not math.isclose(R, 2 * r, rel_tol=1e-12):
        raise DomainError("rotating_pipe uses R = 2 r")
    return TurnPatch(0.0, 0.0, ((1, 0), (0, 1)), 1, float(r), float(lam), float(v))


def turn_transit_time(patch, s0):
    """Time to traverse a turn patch along the streamline ``s = s0``.

    With ``alpha = v / sqrt(lam)`` and radius ``rho = sqrt(lam) s0`` in the
    unstretched frame the quarter turn takes ``pi rho / (2 alpha)``.
    """
    return math.pi * patch.lam * s0 / (2 * patch.v)


# quarter-turn orientations used by the block
ID = ((1, 0), (0, 1))
NEG = ((-1, 0), (0, -1))
FLIP_Y = ((1, 0), (0, -1))
FLIP_X = ((-1, 0), (0, 1))


def gauss_flux(patch, p0, d, t0, t1, nodes):
    """Integral of ``u . (d_y, -d_x)`` over ``t in [t0, t1]`` by Gauss-Legendre."""
    if isinstance(patch, StraightPatch):
        return (t1 - t0) * (patch.vx * d[1] - patch.vy * d[0])
    xg, wg = nodes
    t = 0.5 * (t1 - t0) * xg + 0.5 * (t1 + t0)
    u1, u2 = patch.velocity(p0[0] + t * d[0], p0[1] + t * d[1])
    return 0.5 * (t1 - t0) * float(np.dot(wg, u1 * d[1] - u2 * d[0]))
