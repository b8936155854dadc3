"""Rectangle hierarchy of the iterated construction.

Level ``j`` holds ``N_j`` congruent rectangles ``[0, L_j] x [-W_j/2, W_j/2]``
(``W_j = A_j + B_j``) placed on the torus by a quarter-turn pose.  Each
level-``j`` rectangle carries the branching block of level ``j`` whose
``2 n_{j+1}`` sub-rectangles form level ``j + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .block import ROT, BranchingBlock, rotate


def wrap(z):
    """Map torus differences to ``[-1/2, 1/2)``."""
    return (np.asarray(z, dtype=float) + 0.5) % 1.0 - 0.5


@dataclass(frozen=True)
class RectFrame:
    """Pose and size of a rectangle ``[0, length] x [-width/2, width/2]``."""

    anchor: tuple
    rotation: int
    length: float
    width: float

    def __post_init__(self):
        if self.rotation not in (0, 1, 2, 3):
            raise DomainError("rotation must be a quarter turn index 0..3")
        if not (self.length > 0 and self.width > 0):
            raise DomainError("rectangle must have positive area")

    def to_local(self, x, y):
        # quarter turns preserve the lattice, so wrap after rotating; the
        # axial window is centred on the rectangle (lengths may exceed 1/2)
        dx = np.asarray(x, dtype=float) - self.anchor[0]
        dy = np.asarray(y, dtype=float) - self.anchor[1]
        xi, eta = rotate(-self.rotation, dx, dy)
        c = 0.5 * self.length
        return wrap(xi - c) + c, wrap(eta)

    def to_global(self, xi, eta):
        gx, gy = rotate(self.rotation, np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))
        return (gx + self.anchor[0]) % 1.0, (gy + self.anchor[1]) % 1.0

    def contains(self, x, y):
        xi, eta = self.to_local(x, y)
        return (xi >= 0) & (xi <= self.length) & (np.abs(eta) <= self.width / 2)

    def sub(self, xi0, xi1, eta0, eta1):
        """Sub-rectangle given in this frame's coordinates (same rotation)."""
        gx, gy = rotate(self.rotation, xi0, 0.5 * (eta0 + eta1))
        anchor = ((self.anchor[0] + gx) % 1.0, (self.anchor[1] + gy) % 1.0)
        return RectFrame(anchor, self.rotation, xi1 - xi0, eta1 - eta0)

    @property
    def area(self):
        return self.length * self.width

    def sample(self, m, rng):
        """``m`` uniform points inside, as global coordinates."""
        xi = rng.uniform(0.0, self.length, m)
        eta = rng.uniform(-self.width / 2, self.width / 2, m)
        return self.to_global(xi, eta)


def level_blocks(table, q):
    """Branching blocks ``0..q-1`` for a table (block ``j`` lives in level-``j`` rectangles)."""
    blocks = []
    for j in range(q):
        blocks.append(BranchingBlock(
            table.value("L", j), table.value("A", j), table.value("B", j),
            table.value("A", j + 1), table.value("B", j + 1), table.n(j + 1),
            table.value("v", j), L2=table.value("L", j + 1)))
    return blocks


def root_frame(table):
    A0, B0, L0 = table.value("A", 0), table.value("B", 0), table.value("L", 0)
    return RectFrame((A0, 0.5), 0, L0, A0 + B0)


class PipeTree:
    """Rectangle collections ``R_0..R_q`` with ancestor links and the sub-collections.

    Per level ``j`` the arrays ``anchor (N_j, 2)``, ``rot``, ``parent``,
    ``branch`` (0-based index inside the parent's block, ``< n`` lower side)
    and the boolean flags ``in_E``, ``in_M``, ``in_G`` are stored.
    """

    def __init__(self, table, q, blocks=None):
        if q < 0 or q > table.q_max:
            raise DomainError(f"level {q} outside table range 0..{table.q_max}")
        self.table = table
        self.q = q
        self.blocks = blocks if blocks is not None else level_blocks(table, q)
        root = root_frame(table)
        self.anchor = [np.array([root.anchor])]
        self.rot = [np.zeros(1, dtype=np.int64)]
        self.parent = [np.full(1, -1, dtype=np.int64)]
        self.branch = [np.zeros(1, dtype=np.int64)]
        self.in_E = [np.ones(1, dtype=bool)]
        self.in_M = [np.ones(1, dtype=bool)]
        for j in range(1, q + 1):
            self._add_level(j)
        self.in_G = [self._good(j) for j in range(q + 1)]

    def _add_level(self, j):
        blk = self.blocks[j - 1]
        n = blk.n
        pa, pr = self.anchor[j - 1], self.rot[j - 1]
        origins = np.array([blk.child_origin(i) for i in range(2 * n)])
        crot = origins[:, 2].astype(np.int64)
        P = len(pa)
        anchor = np.empty((P, 2 * n, 2))
        rot = np.empty((P, 2 * n), dtype=np.int64)
        for r in range(4):
            m = pr == r
            if not m.any():
                continue
            gx, gy = rotate(r, origins[:, 0], origins[:, 1])
            anchor[m, :, 0] = pa[m, 0, None] + gx
            anchor[m, :, 1] = pa[m, 1, None] + gy
            rot[m] = (r + crot) % 4
        self.anchor.append((anchor % 1.0).reshape(-1, 2))
        self.rot.append(rot.ravel())
        self.parent.append(np.repeat(np.arange(P), 2 * n))
        b = np.tile(np.arange(2 * n), P)
        self.branch.append(b)
        k = b % n  # 0-based position along one side
        c = math.ceil(n / 4)
        self.in_E.append(np.repeat(self.in_E[j - 1], 2 * n) & (k != 0) & (k != n - 1))
        self.in_M.append((k >= c) & (k < n - c))

    def _good(self, j):
        g = self.in_E[j] & self.in_M[j]
        idx = np.arange(len(g))
        # only the ancestors that exist are required to lie in M
        for d in range(1, 5):
            if j - d < 1:
                break
            idx = self.parent[j - d + 1][idx]
            g &= self.in_M[j - d][idx]
        return g

    # -- accessors --------------------------------------------------------

    def count(self, j):
        return len(self.rot[j])

    def dims(self, j):
        t = self.table
        return t.value("L", j), t.value("A", j), t.value("B", j)

    def frame(self, j, i):
        L, A, B = self.dims(j)
        return RectFrame(tuple(self.anchor[j][i]), int(self.rot[j][i]), L, A + B)

    def frames(self, j, which="R"):
        idx = self.indices(j, which)
        return [self.frame(j, i) for i in idx]

    def indices(self, j, which="R"):
        if which == "R":
            return np.arange(self.count(j))
        flag = {"E": self.in_E, "M": self.in_M, "G": self.in_G}[which][j]
        return np.flatnonzero(flag)

    def ancestor(self, j, i, levels=1):
        for d in range(levels):
            i = self.parent[j - d][i]
        return i

    def cardinalities(self):
        return [
            {"level": j, "R": self.count(j), "E": int(self.in_E[j].sum()),
             "M": int(self.in_M[j].sum()), "G": int(self.in_G[j].sum())}
            for j in range(self.q + 1)
        ]

    # -- derived sets -----------------------------------------------------

    def dset_frames(self, j):
        """Strips ``D_{j,R} = [0, L/3] x [-A/2 - B/50, -A/2 - B/100]`` for ``R`` in ``G_j``."""
        L, A, B = self.dims(j)
        return [f.sub(0.0, L / 3, -A / 2 - B / 50, -A / 2 - B / 100) for f in self.frames(j, "G")]

    def dset_area(self, j):
        L, A, B = self.dims(j)
        return int(self.in_G[j].sum()) * (B / 100) * (L / 3)

    def sample_dset(self, j, m, rng, cap=None):
        """Stratified starts in ``D_j``: one per good rectangle (up to ``cap``), then uniform fill."""
        frames = self.dset_frames(j)
        if not frames:
            raise DomainError(f"D_{j} is empty")
        pts = []
        strat = frames[: cap if cap is not None else m][:m]
        for f in strat:
            pts.append(np.column_stack(f.sample(1, rng)))
        rest = m - len(strat)
        if rest > 0:
            pick = rng.integers(0, len(frames), rest)
            for i in pick:
                pts.append(np.column_stack(frames[i].sample(1, rng)))
        return np.vstack(pts)

    def segment_sets(self, j):
        """Segments ``C_{j,R}`` and ``Gamma_{j,R}`` for ``R`` in ``E_j``.

        Each entry is ``(frame, eta0, eta1)``: the segment ``{0} x [eta0, eta1]``
        in the rectangle's coordinates.
        """
        L, A, B = self.dims(j)
        Abar = math.exp(self.table.log_Abar[j + 1])
        fr = self.frames(j, "E")
        C = [(f, -A / 4, A / 4) for f in fr]
        G = [(f, -A / 2 + Abar, A / 2 - Abar) for f in fr]
        return C, G

    def sset_frames(self, j):
        """The two shear strips of half-width ``ell_j`` at the pipe walls, ``R`` in ``E_j``."""
        L, A, B = self.dims(j)
        ell = math.exp(self.table.log_ell[j])
        out = []
        for f in self.frames(j, "E"):
            out.append(f.sub(0.0, L, -A / 2 - ell, -A / 2 + ell))
            out.append(f.sub(0.0, L, A / 2 - ell, A / 2 + ell))
        return out

    def fset_frames(self, j, i):
        """Rectangles ``F_j(R)`` for rectangle ``i`` of level ``j``.

        Inside every sub-rectangle the central strip ``|eta| <= A'`` and the
        boundary strips, merged across neighbours and widened to ``2 A'``.
        Frames use the sub-rectangles' own coordinates.
        """
        if j + 1 > self.q:
            raise DomainError("F_j needs level j+1 in the tree")
        L2, A2, B2 = self.dims(j + 1)
        W2 = A2 + B2
        kids = np.flatnonzero(self.parent[j + 1] == i)
        out = []
        for c in kids:
            f = self.frame(j + 1, c)
            out.append(f.sub(0.0, L2, -A2, A2))
            out.append(f.sub(0.0, L2, -W2 / 2, -W2 / 2 + 2 * A2))
            out.append(f.sub(0.0, L2, W2 / 2 - 2 * A2, W2 / 2))
        return out

    def locate(self, j, x, y):
        """Index of the level-``j`` rectangle containing each point (``-1`` if none)."""
        x = np.asarray(x, dtype=float) % 1.0
        y = np.asarray(y, dtype=float) % 1.0
        root = root_frame(self.table)
        xi, eta = root.to_local(x, y)
        idx = np.where((xi >= 0) & (xi < root.length) & (np.abs(eta) < root.width / 2), 0, -1)
        for lev in range(1, j + 1):
            blk = self.blocks[lev - 1]
            ok = idx >= 0
            ci, xc, yc = blk.child_lookup(np.where(ok, xi, -1.0), np.where(ok, eta, 0.0))
            hit = ok & (ci >= 0)
            idx = np.where(hit, idx * 2 * blk.n + ci, -1)
            xi, eta = np.where(hit, xc, xi), np.where(hit, yc, eta)
        return idx


__all__ = ["RectFrame", "PipeTree", "level_blocks", "root_frame", "wrap", "ROT"]
