"""Fourier helpers on the unit torus sampled at ``x_i = i / n``.

Arrays use ``[ix, iy]`` indexing, vector fields ``[component, ix, iy]``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import fft as sfft


@lru_cache(maxsize=16)
def wavenumbers(n):
    """Angular wavenumbers ``(KX, KY, K2)`` for the real FFT layout ``(n, n//2 + 1)``."""
    kx = 2 * np.pi * sfft.fftfreq(n, 1.0 / n)
    ky = 2 * np.pi * sfft.rfftfreq(n, 1.0 / n)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    K2 = KX**2 + KY**2
    for a in (KX, KY, K2):
        a.setflags(write=False)
    return KX, KY, K2


@lru_cache(maxsize=16)
def dealias_mask(n):
    """2/3-rule mask in the real FFT layout."""
    kx = np.abs(sfft.fftfreq(n, 1.0 / n))
    ky = sfft.rfftfreq(n, 1.0 / n)
    cut = n / 3.0
    m = (kx[:, None] < cut) & (ky[None, :] < cut)
    m.setflags(write=False)
    return m


def fft2(f, workers=None):
    return sfft.rfft2(f, workers=workers)


def ifft2(fh, n, workers=None):
    return sfft.irfft2(fh, s=(n, n), workers=workers)


def grad(f):
    n = f.shape[0]
    KX, KY, _ = wavenumbers(n)
    fh = fft2(f)
    return ifft2(1j * KX * fh, n), ifft2(1j * KY * fh, n)


def laplacian(f):
    n = f.shape[0]
    _, _, K2 = wavenumbers(n)
    return ifft2(-K2 * fft2(f), n)


def divergence(u):
    n = u.shape[1]
    KX, KY, _ = wavenumbers(n)
    return ifft2(1j * KX * fft2(u[0]) + 1j * KY * fft2(u[1]), n)


def leray(u, truncate=False):
    """Divergence-free part of ``u`` (mean kept); optional 2/3 truncation."""
    n = u.shape[1]
    KX, KY, K2 = wavenumbers(n)
    a, b = fft2(u[0]), fft2(u[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(K2 > 0, (KX * a + KY * b) / K2, 0.0)
    a = a - KX * p
    b = b - KY * p
    if truncate:
        m = dealias_mask(n)
        a, b = a * m, b * m
    return np.stack([ifft2(a, n), ifft2(b, n)])


def inverse_laplacian(f):
    """Zero-mean solution of ``Delta g = f - mean(f)``."""
    n = f.shape[0]
    _, _, K2 = wavenumbers(n)
    fh = fft2(f)
    with np.errstate(invalid="ignore", divide="ignore"):
        gh = np.where(K2 > 0, -fh / K2, 0.0)
    return ifft2(gh, n)


def l2_norm_sq(f):
    """``int f^2`` over the unit torus (grid quadrature, exact for band-limited data)."""
    return float(np.mean(f * f))


@lru_cache(maxsize=16)
def rfft_multiplicity(n):
    """How many full-spectrum modes each real-FFT entry stands for (1 or 2)."""
    m = np.full((n, n // 2 + 1), 2.0)
    m[:, 0] = 1.0
    if n % 2 == 0:
        m[:, -1] = 1.0
    m.setflags(write=False)
    return m


def parseval(fh, n, weight=None):
    """``int |f|^2`` (optionally weighted in Fourier space) from a real-FFT array."""
    w = np.abs(fh) ** 2
    if weight is not None:
        w = w * weight
    # columns other than ky = 0 (and ky = n/2 for even n) stand for two modes
    total = 2.0 * w.sum() - w[:, 0].sum()
    if n % 2 == 0:
        total -= w[:, -1].sum()
    return float(total) / n**4


def fourier_eval(fh, n, x, y):
    """Trigonometric interpolant of a real-FFT array at arbitrary points."""
    kx = 2 * np.pi * sfft.fftfreq(n, 1.0 / n)
    ky = 2 * np.pi * sfft.rfftfreq(n, 1.0 / n)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    c = np.full(ky.shape, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    out = np.empty(x.shape)
    for i, (a, b) in enumerate(zip(x.ravel(), y.ravel())):
        ex = np.exp(1j * kx * a)
        ey = np.exp(1j * ky * b) * c
        out.ravel()[i] = np.real(ex @ fh @ ey) / n**2
    return out
