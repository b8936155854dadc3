"""Binary grid files.

Layout: one ASCII magic line, one JSON header line, then float64
little-endian arrays in C order.  Field files hold ``u1`` then ``u2``
(each ``res x res``, ``[ix, iy]``); scalar files hold ``count`` snapshots.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError

FIELD_MAGIC = b"ANODISS-FIELD v1"
SCALAR_MAGIC = b"ANODISS-SCALAR v1"


def _write(path, magic, header, arrays):
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(path, magic):
    with open(path, "rb") as fh:
        first = fh.readline().rstrip(b"\n")
        if first != magic:
            raise ConfigError(f"{path}: expected {magic.decode()!r}, found {first[:40]!r}")
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f8")
    return header, data


def write_field(path, data, **meta):
    """Write a ``[2, res, res]`` velocity array."""
    res = data.shape[1]
    _write(path, FIELD_MAGIC, {"res": res, **meta}, [data[0], data[1]])


def read_field(path):
    header, data = _read(path, FIELD_MAGIC)
    res = header["res"]
    if data.size != 2 * res * res:
        raise ConfigError(f"{path}: truncated field data")
    return data.reshape(2, res, res).copy(), header


def write_scalar(path, snapshots, times, **meta):
    snaps = np.asarray(snapshots, dtype=float)
    if snaps.ndim == 2:
        snaps = snaps[None]
    header = {"res": snaps.shape[1], "count": snaps.shape[0], "times": [float(t) for t in times], **meta}
    _write(path, SCALAR_MAGIC, header, list(snaps))


def read_scalar(path):
    header, data = _read(path, SCALAR_MAGIC)
    res, count = header["res"], header["count"]
    if data.size != count * res * res:
        raise ConfigError(f"{path}: truncated scalar data")
    return data.reshape(count, res, res).copy(), header
