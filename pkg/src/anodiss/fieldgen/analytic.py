"""Piecewise-analytic velocity fields ``b_q``.

``b_0`` is a horizontal strip of width ``A_0`` around ``y = 1/2`` wrapping the
torus.  For ``q >= 1`` the straight pipe inside every level-``j`` rectangle
(``j < q``) is replaced by the branching block of level ``j``.  Evaluation
descends the hierarchy with arithmetic child lookup, so a point costs
``O(q)`` work independently of ``N_q``.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError
from .block import ROT, rotate
from .patches import StraightPatch, gauss_flux
from .tree import PipeTree, level_blocks, root_frame

MIN_SCALE = 1e-6


def _rotate_jac(rot, J):
    R = ROT[rot % 4]
    return R @ J @ R.T


class AnalyticField:
    """The field ``b_q`` on the torus, built from a parameter table."""

    kind = "analytic"

    def __init__(self, table, q, blocks=None):
        if q < 0:
            raise DomainError("q must be >= 0")
        self.table = table
        self.q = q
        self.blocks = blocks if blocks is not None else level_blocks(table, q)
        self.root = root_frame(table)
        self.v = [table.value("v", j) for j in range(q + 1)]
        self.A = [table.value("A", j) for j in range(q + 1)]
        self.L = [table.value("L", j) for j in range(q + 1)]

    @property
    def max_speed(self):
        return self.v[0]

    @property
    def min_scale(self):
        """Smallest geometric length: the finest lane width."""
        if self.q == 0:
            return self.A[0]
        return min(b.Ahat for b in self.blocks)

    # -- pointwise evaluation -------------------------------------------

    def _strip(self, j, eta):
        A = self.A[j]
        return ((eta >= -A / 2) & (eta < A / 2)).astype(float) * self.v[j]

    def _local(self, j, xi, eta):
        """Velocity of ``b_q`` restricted to a level-``j`` rectangle, local coordinates."""
        if j == self.q:
            return self._strip(j, eta), np.zeros_like(eta)
        blk = self.blocks[j]
        u1, u2 = blk.velocity(xi, eta)
        idx, xc, yc = blk.child_lookup(xi, eta)
        m = idx >= 0
        if m.any():
            c1, c2 = self._local(j + 1, xc[m], yc[m])
            low = idx[m] < blk.n
            # lower children use rotation 3, upper rotation 1
            u1[m] = np.where(low, c2, -c2)
            u2[m] = np.where(low, -c1, c1)
        return u1, u2

    def _local_jac(self, j, xi, eta):
        if j == self.q:
            return np.zeros(np.shape(xi) + (2, 2))
        blk = self.blocks[j]
        J = blk.jacobian(xi, eta)
        idx, xc, yc = blk.child_lookup(xi, eta)
        m = idx >= 0
        if m.any():
            Jc = self._local_jac(j + 1, xc[m], yc[m])
            low = idx[m] < blk.n
            Jc = np.where(low[:, None, None], _rotate_jac(3, Jc), _rotate_jac(1, Jc))
            J[m] = Jc
        return J

    def _root_split(self, x, y):
        x = np.asarray(x, dtype=float) % 1.0
        y = np.asarray(y, dtype=float) % 1.0
        xi, eta = self.root.to_local(x, y)
        inside = (xi >= 0) & (xi < self.root.length) & (np.abs(eta) < self.root.width / 2)
        return x, y, xi, eta, inside

    def evaluate(self, x, y):
        """Velocity ``(u1, u2)`` at torus points (coordinates wrapped mod 1)."""
        x, y, xi, eta, inside = self._root_split(x, y)
        shape = np.broadcast(x, y).shape
        x, y = np.broadcast_to(x, shape), np.broadcast_to(y, shape)
        xi, eta, inside = (np.broadcast_to(a, shape) for a in (xi, eta, inside))
        u1 = np.array(self._strip(0, y - 0.5), dtype=float)
        u2 = np.zeros(shape)
        if self.q >= 1 and inside.any():
            a, b = self._local(0, np.atleast_1d(xi[inside]), np.atleast_1d(eta[inside]))
            u1[inside], u2[inside] = a, b
        return u1, u2

    def jacobian(self, x, y):
        """``J[..., i, j] = d u_i / d x_j`` (zero on straight pipes, excludes wall jumps)."""
        x, y, xi, eta, inside = self._root_split(x, y)
        shape = np.broadcast(x, y).shape
        J = np.zeros(shape + (2, 2))
        if self.q >= 1:
            inside = np.broadcast_to(inside, shape)
            xi, eta = np.broadcast_to(xi, shape), np.broadcast_to(eta, shape)
            if inside.any():
                J[inside] = self._local_jac(0, np.atleast_1d(xi[inside]), np.atleast_1d(eta[inside]))
        return J

    def sample(self, res):
        """Cell-corner samples on the ``res x res`` grid, array ``[2, res, res]`` (``[comp, ix, iy]``)."""
        g = np.arange(res) / res
        X, Y = np.meshgrid(g, g, indexing="ij")
        u1, u2 = self.evaluate(X, Y)
        return np.stack([u1, u2])

    def tree(self):
        return PipeTree(self.table, self.q, blocks=self.blocks)

    # -- fluxes -----------------------------------------------------------

    def _flux_local(self, j, p0, d, t0, t1, nodes):
        if j == self.q:
            pipe = StraightPatch(0.0, self.L[j], -self.A[j] / 2, self.A[j] / 2, self.v[j], 0.0)
            return sum(gauss_flux(pipe, p0, d, max(a, t0), min(b, t1), nodes)
                       for a, b in pipe.intervals(p0, d) if min(b, t1) > max(a, t0))
        blk = self.blocks[j]
        kids = []
        for i in range(2 * blk.n):
            x0, x1, y0, y1 = blk.child_bounds(i)
            for a, b in StraightPatch(x0, x1, y0, y1, 0.0, 0.0).intervals(p0, d):
                a, b = max(a, t0), min(b, t1)
                if b > a:
                    kids.append((i, a, b))
        holes = sorted((a, b) for _, a, b in kids)
        total = 0.0
        for p in blk.patches:
            for a, b in p.intervals(p0, d):
                a, b = max(a, t0), min(b, t1)
                for c, e in _subtract(a, b, holes):
                    total += gauss_flux(p, p0, d, c, e, nodes)
        for i, a, b in kids:
            ox, oy, crot = blk.child_origin(i)
            q0 = rotate(-crot, p0[0] - ox, p0[1] - oy)
            dq = rotate(-crot, d[0], d[1])
            total += self._flux_local(j + 1, q0, dq, a, b, nodes)
        return total

    def segment_flux(self, p0, p1, order=24):
        """Flux ``int u . n ds`` through the segment ``p0 -> p1``, ``n`` its right normal.

        Exact on straight pieces, Gauss-Legendre of the given order on each
        curved-pipe piece.  The segment may cross the torus boundary.
        """
        nodes = np.polynomial.legendre.leggauss(order)
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(p1, dtype=float) - p0
        # split into pieces inside single unit cells so the root frame is unambiguous
        total = 0.0
        for a, b in _cell_pieces(p0, d):
            mid = p0 + 0.5 * (a + b) * d
            shift = np.floor(mid)
            s0 = p0 - shift
            # b_0 strip outside the root rectangle (and everywhere when q == 0)
            strip = StraightPatch(-1.0, 2.0, 0.5 - self.A[0] / 2, 0.5 + self.A[0] / 2, self.v[0], 0.0)
            rl = root_frame(self.table)
            if self.q == 0:
                holes = []
            else:
                box = StraightPatch(rl.anchor[0], rl.anchor[0] + rl.length,
                                    rl.anchor[1] - rl.width / 2, rl.anchor[1] + rl.width / 2, 0.0, 0.0)
                holes = [(max(c, a), min(e, b)) for c, e in box.intervals(s0, d) if min(e, b) > max(c, a)]
            for c, e in strip.intervals(s0, d):
                c, e = max(c, a), min(e, b)
                for f, g in _subtract(c, e, holes):
                    total += gauss_flux(strip, s0, d, f, g, nodes)
            for c, e in holes:
                q0 = (s0[0] - rl.anchor[0], s0[1] - rl.anchor[1])
                total += self._flux_local(0, q0, d, c, e, nodes)
        return total

    def box_flux(self, x0, x1, y0, y1, order=24):
        """Net outward flux through the boundary of an axis-aligned box."""
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        # counter-clockwise traversal: the right normal points outward
        return sum(self.segment_flux(corners[i], corners[(i + 1) % 4], order) for i in range(4))


def _subtract(a, b, holes):
    """Pieces of ``[a, b]`` outside the sorted disjoint intervals ``holes``."""
    out = []
    cur = a
    for c, e in holes:
        if e <= cur or c >= b:
            continue
        if c > cur:
            out.append((cur, min(c, b)))
        cur = max(cur, e)
        if cur >= b:
            break
    if cur < b:
        out.append((cur, b))
    return [(c, e) for c, e in out if e > c]


def _cell_pieces(p0, d):
    """Parameter intervals of ``p0 + t d``, ``t in [0, 1]``, between integer grid lines."""
    ts = {0.0, 1.0}
    for k in range(2):
        if d[k] != 0:
            lo, hi = sorted((p0[k], p0[k] + d[k]))
            for z in range(math.ceil(lo), math.floor(hi) + 1):
                t = (z - p0[k]) / d[k]
                if 0 < t < 1:
                    ts.add(t)
    ts = sorted(ts)
    return list(zip(ts[:-1], ts[1:]))


def build_bq(table, q):
    """Analytic field ``b_q`` and its rectangle tree."""
    if q > table.q_max:
        raise DomainError(f"table only reaches level {table.q_max}")
    scales = [table.value("A", q)] + [table.value("A", j) / (2 * table.n(j + 1)) for j in range(q)]
    if min(scales) < MIN_SCALE:
        raise DomainError(f"b_{q} has scales below {MIN_SCALE:g} (finest {min(scales):.3g}); not representable")
    field = AnalyticField(table, q)
    return field, field.tree()
