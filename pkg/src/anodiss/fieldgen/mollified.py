"""Grid-sampled velocity fields and the mollified sequence ``u_q``.

``u_q = b_0 * phi_{ell_0} + sum_j w_j * phi_{ell_j}`` with
``w_j = b_j - b_{j-4}`` for ``j`` a positive multiple of 4 (``layers="paper"``)
or ``w_j = b_j - b_{j-1}`` for every ``j`` (``layers="every"``).  Each layer
is point-sampled on the grid, convolved with a discrete unit-mass tensor
bump and the sum is Leray-projected.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage, signal

from .. import spectral
from ..errors import DomainError, ResolutionError
from .analytic import AnalyticField


def bump_1d(n, ell):
    """Periodic discrete bump ``exp(-1/(1 - (x/ell)^2))`` on ``n`` points, unit sum."""
    x = np.arange(n) / n
    x = np.minimum(x, 1.0 - x)
    r = x / ell
    k = np.zeros(n)
    inside = r < 1
    k[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    s = k.sum()
    if s == 0:
        raise ResolutionError(f"mollifier radius {ell:g} below grid spacing {1 / n:g}")
    return k / s


def mollify(f, ell):
    """Convolve a periodic ``[.., n, n]`` array with the tensor bump of radius ``ell``."""
    n = f.shape[-1]
    kh = np.fft.rfft(bump_1d(n, ell))
    kf = np.fft.fft(bump_1d(n, ell))
    fh = np.fft.rfft2(f)
    fh = fh * kf[:, None] * kh[None, :]
    return np.fft.irfft2(fh, s=(n, n))


class GridField:
    """Velocity samples ``data[c, ix, iy]`` at ``(ix/n, iy/n)`` with periodic interpolation.

    ``order=1`` interpolates bilinearly, ``order=3`` with periodic cubic
    B-splines.
    """

    kind = "mollified"

    def __init__(self, data, min_scale=None, meta=None, order=1):
        data = np.asarray(data, dtype=float)
        if data.ndim != 3 or data.shape[0] != 2 or data.shape[1] != data.shape[2]:
            raise DomainError("grid field data must have shape (2, n, n)")
        if not np.all(np.isfinite(data)):
            raise DomainError("grid field has non-finite samples")
        self.data = data
        self.res = data.shape[1]
        self.h = 1.0 / self.res
        self.min_scale = float(min_scale) if min_scale is not None else self.h
        self.meta = dict(meta or {})
        self.order = order
        self._coef = None
        self._grad = None

    @classmethod
    def from_function(cls, fn, res, **kw):
        g = np.arange(res) / res
        X, Y = np.meshgrid(g, g, indexing="ij")
        u1, u2 = fn(X, Y)
        return cls(np.stack([np.broadcast_to(u1, X.shape), np.broadcast_to(u2, X.shape)]), **kw)

    @classmethod
    def zero(cls, res, **kw):
        return cls(np.zeros((2, res, res)), min_scale=kw.pop("min_scale", 1.0), **kw)

    @property
    def max_speed(self):
        return float(np.sqrt((self.data**2).sum(axis=0)).max())

    def with_order(self, order):
        return GridField(self.data, self.min_scale, self.meta, order)

    def sample(self, res):
        """Samples at another resolution by Fourier resampling."""
        if res == self.res:
            return self.data.copy()
        out = signal.resample(self.data, res, axis=1)
        return signal.resample(out, res, axis=2)

    def _interp(self, arr, x, y, key=None):
        n = self.res
        fx = np.asarray(x, dtype=float) * n
        fy = np.asarray(y, dtype=float) * n
        if self.order == 3:
            if self._coef is None:
                self._coef = {}
            if key not in self._coef:
                self._coef[key] = ndimage.spline_filter(arr, order=3, mode="grid-wrap")
            coords = np.stack([np.ravel(fx), np.ravel(fy)])
            vals = ndimage.map_coordinates(self._coef[key], coords, order=3, mode="grid-wrap",
                                           prefilter=False)
            return vals.reshape(np.shape(fx))
        i0 = np.floor(fx)
        j0 = np.floor(fy)
        wx = fx - i0
        wy = fy - j0
        i0 = i0.astype(np.int64) % n
        j0 = j0.astype(np.int64) % n
        i1 = (i0 + 1) % n
        j1 = (j0 + 1) % n
        return ((1 - wx) * ((1 - wy) * arr[i0, j0] + wy * arr[i0, j1])
                + wx * ((1 - wy) * arr[i1, j0] + wy * arr[i1, j1]))

    def evaluate(self, x, y):
        return self._interp(self.data[0], x, y, "u1"), self._interp(self.data[1], x, y, "u2")

    def gradient_grids(self):
        """Spectral ``d u_i / d x_j`` on the grid, shape ``(2, 2, n, n)``."""
        if self._grad is None:
            g = np.empty((2, 2, self.res, self.res))
            for i in range(2):
                g[i, 0], g[i, 1] = spectral.grad(self.data[i])
            self._grad = g
        return self._grad

    def jacobian(self, x, y):
        g = self.gradient_grids()
        J = np.empty(np.shape(x) + (2, 2))
        for i in range(2):
            for j in range(2):
                J[..., i, j] = self._interp(g[i, j], x, y, f"d{i}{j}")
        return J

    def mean(self):
        return self.data.mean(axis=(1, 2))

    def divergence_norm(self):
        """Relative ``L^2`` norm of the spectral divergence."""
        div = spectral.divergence(self.data)
        scale = max(self.max_speed * self.res, 1e-300)
        return float(np.sqrt(np.mean(div**2)) / scale)


def contributing_layers(q, layers="paper"):
    if layers == "paper":
        return [0] + [j for j in range(4, q + 1, 4)]
    if layers == "every":
        return list(range(q + 1))
    raise DomainError(f"unknown layer schedule {layers!r}")


def required_resolution(table, q, layers="paper"):
    """Smallest grid resolving every contributing mollifier and pipe width (4 points each)."""
    js = contributing_layers(q, layers)
    jmax = max(js)
    widths = [table.value("A", jmax)]
    if jmax >= 1:
        widths.append(table.value("A", jmax - 1) / (2 * table.n(jmax)))
    ells = [math.exp(table.log_ell[j]) for j in js]
    return int(math.ceil(4.0 / min(widths + ells))), min(widths + ells)


def build_uq(table, q, grid_res, layers="paper", order=1):
    """Mollified field ``u_q`` sampled on a ``grid_res`` grid."""
    need, scale = required_resolution(table, q, layers)
    if grid_res < need:
        raise ResolutionError(f"u_{q} needs grid_res >= {need}, got {grid_res}")
    js = contributing_layers(q, layers)
    prev = None
    total = np.zeros((2, grid_res, grid_res))
    for j in js:
        bj = AnalyticField(table, j).sample(grid_res)
        layer = bj if j == 0 else bj - prev
        total += mollify(layer, math.exp(table.log_ell[j]))
        prev = bj
    total = spectral.leray(total)
    meta = {"q": q, "layers": layers, "kind": "mollified", "ells": [math.exp(table.log_ell[j]) for j in js]}
    return GridField(total, min_scale=scale, meta=meta, order=order)


def wrap_field(field, res=None, order=1):
    """Return a :class:`GridField` for any field model (analytic fields are point-sampled)."""
    if isinstance(field, GridField):
        if res is None or res == field.res:
            return field if field.order == order else field.with_order(order)
        return GridField(field.sample(res), field.min_scale, field.meta, order)
    if isinstance(field, AnalyticField):
        if res is None:
            raise DomainError("sampling an analytic field needs a resolution")
        return GridField(field.sample(res), field.min_scale, {"kind": "analytic", "q": field.q}, order)
    raise DomainError(f"unsupported field type {type(field).__name__}")
