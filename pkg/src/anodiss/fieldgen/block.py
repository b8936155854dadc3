"""Branching-merging block.

Local coordinates: the block occupies ``[0, L] x [-(A+B)/2, (A+B)/2]``; a pipe
of width ``A`` and speed ``v`` enters at ``x = 0`` in ``|y| < A/2`` and
leaves at ``x = L`` in the same band.

Layout of the lower half (the upper half is its mirror image).  The entering
pipe is cut into ``n`` lanes of width ``Ahat = A/(2n)``, lane ``k = 1`` being
the outermost.  Lane ``k`` runs right up to ``X_k`` and then

1. turns clockwise through a stretched rotating pipe (inner radius
   ``Ahat``, stretch ``lam = A'/Ahat``) into a vertical pipe of width
   ``A'`` and speed ``v' = v/lam``, flowing down through the sub-rectangle
   ``R_k``,
2. turns back (shrinking turn) into a thin lane near the bottom of the block,
3. runs right to ``L - 3A/2``.

The ``n`` bottom lanes form a bundle of width ``A/2`` that turns up, rises
along ``x in [L - A, L - A/2]`` and turns right to leave through
``y in [-A/2, 0]``.  Lane order is preserved, so the outermost lane leaves
where it entered.  Sub-rectangles are horizontal translates of each other
with period ``A' + B'``.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError, GeometryError
from .patches import FLIP_X, FLIP_Y, ID, NEG, StraightPatch, TurnPatch, turn_transit_time

#: rotation matrices by quarter turns (counter-clockwise)
ROT = {
    0: np.array([[1.0, 0.0], [0.0, 1.0]]),
    1: np.array([[0.0, -1.0], [1.0, 0.0]]),
    2: np.array([[-1.0, 0.0], [0.0, -1.0]]),
    3: np.array([[0.0, 1.0], [-1.0, 0.0]]),
}


def rotate(rot, x, y):
    """Apply the quarter-turn rotation ``rot`` to vectors ``(x, y)``."""
    rot %= 4
    if rot == 0:
        return x, y
    if rot == 1:
        return -y, x
    if rot == 2:
        return -x, -y
    return y, -x


class BranchingBlock:
    """Closed-form branching-merging pipe.

    Parameters follow the construction: ``(L, A, B)`` of the host rectangle,
    ``(A2, B2)`` the width of the widened pipes and the gap between
    sub-rectangles, ``n`` branches per side, entering speed ``v`` and ``L2``
    the length of the sub-rectangles (defaults to the longest that fits).
    """

    def __init__(self, L, A, B, A2, B2, n, v, L2=None, rel_tol=1e-12):
        if int(n) != n or n < 10:
            raise DomainError(f"n must be an integer >= 10, got {n}")
        n = int(n)
        if min(L, A, B, A2, B2, v) <= 0:
            raise DomainError("block dimensions and speed must be positive")
        if abs(L - (n * A2 + n * B2 + 2 * A)) > rel_tol * L:
            raise DomainError("L = n A' + n B' + 2 A violated")
        self.L, self.A, self.B = float(L), float(A), float(B)
        self.A2, self.B2, self.n, self.v = float(A2), float(B2), n, float(v)
        self.Ahat = A / (2 * n)
        self.lam = A2 / self.Ahat
        self.v2 = v / self.lam
        self.period = A2 + B2
        self.gap = self.Ahat
        self.h = B / 2 - 3 * self.Ahat - self.gap
        self.y_top = -A / 2 - self.Ahat
        l2_max = self.h - (n - 1) * self.Ahat
        self.L2 = l2_max if L2 is None else float(L2)
        s_lo = max(0.0, A2 - B2 / 2)
        s_hi = min(A / 2, A / 2 - A2 + B2 / 2)
        self.s = 0.5 * (s_lo + s_hi)
        self.Yb = -A / 2 - 3 * self.Ahat - self.h
        self.xb = L - 1.5 * A
        self.ycb = self.Yb + A
        problems = []
        if self.lam < 1:
            problems.append(f"widened pipe narrower than a lane (lam={self.lam:.4g})")
        if B2 < A2:
            problems.append("B' < A': neighbouring turns would overlap")
        if self.h <= 0:
            problems.append("no room for the vertical branches (B too small)")
        if self.L2 <= 0 or self.L2 > l2_max * (1 + 1e-12):
            problems.append(f"sub-rectangle length {self.L2:.4g} exceeds branch length {l2_max:.4g}")
        if s_lo > s_hi:
            problems.append("sub-rectangles do not fit between entry and merge")
        if self.ycb >= -A:
            problems.append("merge riser collides with the exit turn")
        if problems:
            raise GeometryError("; ".join(problems))
        self.X = np.array([self.s + k * self.period - A2 + B2 / 2 for k in range(n)])
        lower = self._lower_patches()
        self.lower = lower
        self.patches = lower + [p.mirrored() for p in lower]
        self._check_children_disjoint()

    # -- layout ---------------------------------------------------------

    def yc(self, k):
        """Turn centre height of lane ``k`` (1-based, lower half)."""
        return -self.A / 2 + (k - 2) * self.Ahat

    def _lower_patches(self):
        A, Ah, A2, h, v, lam = self.A, self.Ahat, self.A2, self.h, self.v, self.lam
        out = []
        for k in range(1, self.n + 1):
            Xk = self.X[k - 1]
            yc = self.yc(k)
            out.append(StraightPatch(0.0, Xk, yc + Ah, yc + 2 * Ah, v, 0.0))
            out.append(TurnPatch(Xk, yc, ID, 1, Ah, lam, v))
            out.append(StraightPatch(Xk + A2, Xk + 2 * A2, yc - h, yc, 0.0, -self.v2))
            out.append(TurnPatch(Xk + 3 * A2, yc - h, NEG, -1, Ah, lam, v))
            out.append(StraightPatch(Xk + 3 * A2, self.xb, yc - h - 2 * Ah, yc - h - Ah, v, 0.0))
        out.append(TurnPatch(self.xb, self.ycb, FLIP_Y, 1, A / 2, 1.0, v))
        out.append(StraightPatch(self.L - A, self.L - A / 2, self.ycb, -A, 0.0, v))
        out.append(TurnPatch(self.L, -A, FLIP_X, -1, A / 2, 1.0, v))
        return out

    def child_origin(self, i):
        """Origin and rotation of sub-rectangle ``i`` (0-based, ``n..2n-1`` upper)."""
        k = i % self.n
        ox = self.X[k] + 1.5 * self.A2
        if i < self.n:
            return ox, self.y_top, 3
        return ox, -self.y_top, 1

    def child_bounds(self, i):
        """Axis-aligned extent ``(x0, x1, y0, y1)`` of sub-rectangle ``i``."""
        k = i % self.n
        x0 = self.s + k * self.period
        if i < self.n:
            return x0, x0 + self.period, self.y_top - self.L2, self.y_top
        return x0, x0 + self.period, -self.y_top, -self.y_top + self.L2

    def _check_children_disjoint(self):
        # pairwise intersection test of the sub-rectangles and the host
        bounds = [self.child_bounds(i) for i in range(2 * self.n)]
        half = (self.A + self.B) / 2
        for i, (a0, a1, b0, b1) in enumerate(bounds):
            if a0 < 0 or a1 > self.L or b0 < -half or b1 > half:
                raise GeometryError(f"sub-rectangle {i} leaves the block")
            for c0, c1, d0, d1 in bounds[i + 1:]:
                if min(a1, c1) - max(a0, c0) > 1e-12 * self.L and min(b1, d1) - max(b0, d0) > 0:
                    raise GeometryError("sub-rectangles overlap")

    # -- lookup -----------------------------------------------------------

    def child_lookup(self, x, y):
        """Sub-rectangle index (``-1`` if none) and child-local coordinates."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        k = np.floor((x - self.s) / self.period).astype(np.int64)
        inx = (k >= 0) & (k < self.n)
        ay = np.abs(y)
        iny = (ay >= -self.y_top) & (ay < -self.y_top + self.L2)
        hit = inx & iny
        idx = np.where(hit, np.where(y < 0, k, k + self.n), -1)
        kk = np.clip(k, 0, self.n - 1)
        ox = self.X[kk] + 1.5 * self.A2
        # lower: rotation 3, local = R^{-1}(p - o) = (-(y - oy), x - ox)
        # upper: rotation 1, local = (y - oy, -(x - ox))
        lower = y < 0
        xc = np.where(lower, self.y_top - y, y + self.y_top)
        yc = np.where(lower, x - ox, -(x - ox))
        return idx, xc, yc

    def _first_match(self, x, y, fn, shape_tail=()):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(x.shape + shape_tail if shape_tail else (2,) + x.shape)
        free = np.ones(x.shape, dtype=bool)
        for p in self.patches:
            x0, x1, y0, y1 = p.bbox
            box = free & (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            if not box.any():
                continue
            m = np.zeros_like(free)
            m[box] = p.contains(x[box], y[box])
            if not m.any():
                continue
            fn(p, x[m], y[m], out, m)
            free &= ~m
        return out

    def velocity(self, x, y):
        """Block field ``W`` (sub-rectangles carry their straight pipes)."""

        def put(p, xs, ys, out, m):
            u1, u2 = p.velocity(xs, ys)
            out[0][m] = u1
            out[1][m] = u2

        out = self._first_match(x, y, put)
        return out[0], out[1]

    def jacobian(self, x, y):
        def put(p, xs, ys, out, m):
            out[m] = p.jacobian(xs, ys)

        return self._first_match(x, y, put, (2, 2))

    def patch_index(self, x, y):
        """Index of the patch containing each point (``-1`` outside)."""

        def put(p, xs, ys, out, m):
            out[0][m] = self.patches.index(p)

        x = np.asarray(x, dtype=float)
        out = self._first_match(x, y, put)
        idx = out[0].astype(np.int64)
        inside = np.zeros(x.shape, dtype=bool)
        for p in self.patches:
            inside |= p.contains(x, y)
        return np.where(inside, idx, -1)

    # -- deterministic transit ------------------------------------------------

    def backward_transit(self, i, eta):
        """Backward travel from the entry of sub-rectangle ``i`` to the block entry.

        ``eta`` is the child-local lateral coordinate (``|eta| < A'/2``).
        Returns ``(time, y_entry)`` for the zero-noise backward trajectory.
        """
        k = i % self.n + 1
        Xk = self.X[k - 1]
        ox = Xk + 1.5 * self.A2
        # lateral offset in block x; for upper children the axis is flipped
        x = ox + eta if i < self.n else ox - eta
        a = x - Xk
        s0 = a / self.lam
        turn = TurnPatch(Xk, self.yc(k), ID, 1, self.Ahat, self.lam, self.v)
        t = (k - 1) * self.Ahat / self.v2 + turn_transit_time(turn, s0) + Xk / self.v
        y_entry = self.yc(k) + s0
        return t, (y_entry if i < self.n else -y_entry)

    @property
    def max_speed(self):
        return self.v


def branching_block(L, A, B, A2, B2, n, v, L2=None):
    """Build the branching-merging block; raises ``GeometryError`` if it cannot be laid out."""
    return BranchingBlock(L, A, B, A2, B2, n, v, L2=L2)
