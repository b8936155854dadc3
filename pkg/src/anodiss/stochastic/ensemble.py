"""Backward stochastic flow ensembles.

The backward flow of an autonomous field is simulated as the forward SDE
``dY = -u(Y) ds + sqrt(2 kappa) dW`` on the universal cover, so ``Y(T)``
has the law of ``X_{T,0}(x)``.  Euler-Maruyama with a fixed step.

Randomness: trajectories of start ``i`` are cut into chunks of
``CHUNK`` consecutive indices; chunk ``c`` draws from a Philox generator
seeded by ``SeedSequence([seed, i, c])``, one ``(count, 2)`` normal block
per step.  Work is batched and threaded over chunks, so endpoints do not
depend on the thread count or batching.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, NumericalError

CHUNK = 4096
BATCH_TRAJ = 1 << 16


@dataclass(frozen=True)
class EnsembleSpec:
    n_traj: int
    dt: float
    T: float
    seed: int = 0
    store_paths: bool = False

    def __post_init__(self):
        if self.n_traj < 1 or not (self.dt > 0) or not (self.T > 0):
            raise DomainError("ensemble needs n_traj >= 1, dt > 0 and T > 0")

    @property
    def steps(self):
        return max(1, math.ceil(self.T / self.dt - 1e-9))


@dataclass
class TrajectoryBatch:
    starts: np.ndarray          # (S, 2)
    endpoints: np.ndarray       # (S, n_traj, 2), lifted to R^2
    kappa: float
    spec: EnsembleSpec
    paths: np.ndarray | None = None  # (S, n_traj, steps + 1, 2)
    extras: dict = field(default_factory=dict)

    @property
    def mean(self):
        return self.endpoints.mean(axis=1)

    @property
    def cov(self):
        d = self.endpoints - self.mean[:, None, :]
        n = self.endpoints.shape[1]
        return np.einsum("sni,snj->sij", d, d) / max(n - 1, 1)

    @property
    def variance(self):
        """Unbiased ``E|X - E X|^2`` per start."""
        c = self.cov
        return c[:, 0, 0] + c[:, 1, 1]

    @property
    def variance_x1(self):
        return self.cov[:, 0, 0]

    def write_csv(self, path):
        S, n, _ = self.endpoints.shape
        idx = np.tile(np.arange(n), S)
        st = np.repeat(self.starts, n, axis=0)
        ep = self.endpoints.reshape(-1, 2)
        with open(path, "w") as fh:
            fh.write("start_x,start_y,end_x,end_y,seed_index\n")
            for a, b, c, d, i in zip(st[:, 0], st[:, 1], ep[:, 0], ep[:, 1], idx):
                fh.write(f"{a:.17g},{b:.17g},{c:.17g},{d:.17g},{i}\n")


def thread_count():
    try:
        return max(1, int(os.environ.get("ANODISS_THREADS", "1")))
    except ValueError:
        return 1


def _items(n_starts, n_traj):
    out = []
    for i in range(n_starts):
        for c in range(0, n_traj, CHUNK):
            out.append((i, c // CHUNK, min(CHUNK, n_traj - c)))
    return out


def check_dt(u, dt):
    if u is None:
        return
    vmax, scale = u.max_speed, u.min_scale
    if vmax * dt > scale / 4 * (1 + 1e-12):
        raise NumericalError(
            f"dt={dt:g} too large: |u|_inf dt = {vmax * dt:.3g} > min-scale/4 = {scale / 4:.3g}")


def simulate(u, kappa, spec, starts, observer=None, track=()):
    """Core Euler-Maruyama loop.

    ``observer(step, t, Y_prev, Y, sl)`` is called after every step for each
    batch (``sl`` selects the batch inside the flat trajectory list).
    ``track`` may contain ``"noise_max"`` (running ``max |B_s|``) and
    ``"u1_integral"`` (``int_0^T u^1(Y_s) ds``, left-point rule).
    Returns ``(endpoints (S, n, 2), paths or None, extras)``.
    """
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    check_dt(u, spec.dt)
    steps = spec.steps
    dt = spec.T / steps
    sig = math.sqrt(2 * kappa * dt)
    S, n = len(starts), spec.n_traj
    items = _items(S, n)
    ends = np.empty((S, n, 2))
    paths = np.empty((S, n, steps + 1, 2)) if spec.store_paths else None
    extras = {k: np.zeros((S, n)) for k in track}
    # batches of whole chunks
    batches, cur, size = [], [], 0
    for it in items:
        cur.append(it)
        size += it[2]
        if size >= BATCH_TRAJ:
            batches.append(cur)
            cur, size = [], 0
    if cur:
        batches.append(cur)

    def run(batch):
        gens = [np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, i, c])))
                for i, c, _ in batch]
        counts = [m for _, _, m in batch]
        Y = np.concatenate([np.repeat(starts[i][None], m, axis=0) for i, _, m in batch])
        B = np.zeros_like(Y) if "noise_max" in track else None
        bmax = np.zeros(len(Y)) if B is not None else None
        u1int = np.zeros(len(Y)) if "u1_integral" in track else None
        P = None
        if paths is not None:
            P = np.empty((len(Y), steps + 1, 2))
            P[:, 0] = Y
        for s in range(1, steps + 1):
            Z = np.concatenate([g.standard_normal((m, 2)) for g, m in zip(gens, counts)])
            Yp = Y
            if u is not None:
                a, b = u.evaluate(Y[:, 0], Y[:, 1])
                drift = np.column_stack([a, b])
                if u1int is not None:
                    u1int += a * dt
                Y = Y - dt * drift + sig * Z
            else:
                Y = Y + sig * Z
            if B is not None:
                B += math.sqrt(dt) * Z
                np.maximum(bmax, np.hypot(B[:, 0], B[:, 1]), out=bmax)
            if P is not None:
                P[:, s] = Y
            if observer is not None:
                observer(s, s * dt, Yp, Y, batch)
        if not np.all(np.isfinite(Y)):
            raise NumericalError("non-finite trajectory endpoint")
        return batch, Y, P, bmax, u1int

    workers = min(thread_count(), len(batches))
    if workers > 1 and observer is None:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, batches))
    else:
        results = [run(b) for b in batches]
    for batch, Y, P, bmax, u1int in results:
        off = 0
        for i, c, m in batch:
            sl = slice(c * CHUNK, c * CHUNK + m)
            ends[i, sl] = Y[off:off + m]
            if P is not None:
                paths[i, sl] = P[off:off + m]
            if bmax is not None:
                extras["noise_max"][i, sl] = bmax[off:off + m]
            if u1int is not None:
                extras["u1_integral"][i, sl] = u1int[off:off + m]
            off += m
    return ends, paths, extras


def backward_flow_ensemble(u, kappa, spec, starts, track=()):
    """Endpoints of the backward flow for every start (``u=None`` means ``u = 0``)."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends, paths, extras = simulate(u, kappa, spec, starts, track=track)
    return TrajectoryBatch(starts, ends, kappa, spec, paths, extras)
