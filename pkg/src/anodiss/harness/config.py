"""Experiment configuration: a small INI schema with validation and round-trip."""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ConfigError

STAGES = ("params", "field", "solve", "fldiss", "fk", "variance", "report")
FIELDS = ("uq", "bq", "zero", "shear")
KAPPA_SOURCES = ("table", "explicit")
MIN_SCALE_GUARD = 1e-6


@dataclass
class ExperimentConfig:
    """One pipeline run.

    ``velocity`` picks the field: ``uq`` (mollified, resolution checked),
    ``bq`` (analytic field sampled on the grid), ``zero``, or ``shear``
    (``(shear_amp sin 2 pi y, 0)``).  Diffusivities come from the parameter
    table (optionally capped) or from ``kappa_list``.
    """

    name: str = "experiment"
    regime: str = "desk"
    alpha: float = 0.5
    eps: float = 0.3
    delta: float = 0.3
    a0: float = 0.1
    q_max: int = 3
    q_list: list = field(default_factory=lambda: [0])
    velocity: str = "uq"
    layers: str = "paper"
    shear_amp: float = 1.0
    grid_res: int = 64
    kappa_source: str = "table"
    kappa_list: list = field(default_factory=list)
    kappa_cap: float | None = None
    theta0: str = "cosx"
    T: float = 1.0
    cfl: float = 0.5
    dt_max: float = 1e-2
    n_traj: int = 4000
    mc_dt: float = 5e-3
    seed: int = 0
    start_grid: int = 8
    n_probe: int = 16
    n_dset: int = 32
    stages: list = field(default_factory=lambda: ["params", "solve", "report"])
    out_dir: str = "runs/experiment"

    def validate(self):
        if self.regime not in ("paper", "desk"):
            raise ConfigError(f"regime must be paper or desk, got {self.regime!r}")
        if self.velocity not in FIELDS:
            raise ConfigError(f"velocity must be one of {FIELDS}, got {self.velocity!r}")
        if self.layers not in ("paper", "every"):
            raise ConfigError("layers must be paper or every")
        if self.kappa_source not in KAPPA_SOURCES:
            raise ConfigError(f"kappa_source must be one of {KAPPA_SOURCES}")
        if self.kappa_source == "explicit" and not self.kappa_list:
            raise ConfigError("kappa_source=explicit needs kappa_list")
        if any(k < 0 for k in self.kappa_list):
            raise ConfigError("diffusivities must be >= 0")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; known: {', '.join(STAGES)}")
        if not self.q_list or any(q < 0 or q > self.q_max for q in self.q_list):
            raise ConfigError(f"q_list must be non-empty and inside 0..q_max={self.q_max}")
        for name in ("grid_res", "n_traj", "start_grid", "n_probe", "n_dset"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("T", "mc_dt", "cfl", "dt_max"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive")
        if not (0 < self.a0 < 1):
            raise ConfigError("a0 must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    # -- serialisation --------------------------------------------------------

    def to_text(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        sec = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                sec[f.name] = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif v is None:
                sec[f.name] = "none"
            elif isinstance(v, float):
                sec[f.name] = repr(v)
            else:
                sec[f.name] = str(v)
        cp["experiment"] = sec
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if "experiment" not in cp:
            raise ConfigError("config needs an [experiment] section")
        return cls.from_mapping(dict(cp["experiment"]))

    @classmethod
    def from_mapping(cls, raw, base=None):
        """Build from string values (config file or CLI overrides)."""
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        base = base or cls()
        vals = {}
        for k, s in raw.items():
            vals[k] = _parse(k, s, getattr(cls(), k))
        return replace(base, **vals).validate()

    def digest(self):
        """Hash of the scientific content (``out_dir`` excluded)."""
        d = asdict(self)
        d.pop("out_dir")
        return hashlib.sha256(repr(sorted(d.items())).encode()).hexdigest()[:16]

    def kappas(self, table, q):
        if self.kappa_source == "explicit":
            return list(self.kappa_list)
        k = math.exp(table.log_kappa[q])
        return [min(k, self.kappa_cap) if self.kappa_cap is not None else k]


def _parse(key, s, default):
    s = str(s).strip()
    try:
        if isinstance(default, list):
            items = [x.strip() for x in s.split(",") if x.strip()]
            if key in ("q_list",):
                return [int(x) for x in items]
            if key == "kappa_list":
                return [float(x) for x in items]
            return items
        if key == "kappa_cap":
            return None if s.lower() in ("none", "") else float(s)
        if isinstance(default, bool):
            return s.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {s!r}") from exc
    return s


def load_config(path):
    try:
        with open(path) as fh:
            return ExperimentConfig.from_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


BUILTIN = {
    "fldiss-smoke": dict(name="fldiss-smoke", velocity="zero", q_list=[0], kappa_source="explicit",
                         kappa_list=[1e-2], theta0="cosx", T=1.0, grid_res=64, n_traj=4000,
                         mc_dt=1.0, start_grid=8, stages=["params", "solve", "fldiss", "report"],
                         out_dir="runs/fldiss-smoke"),
    "heat-decay": dict(name="heat-decay", velocity="zero", q_list=[0], kappa_source="explicit",
                       kappa_list=[1e-3], theta0="cosx", T=1.0, grid_res=64,
                       stages=["params", "solve", "report"], out_dir="runs/heat-decay"),
    "desk-ladder": dict(name="desk-ladder", velocity="uq", q_list=[0, 2], kappa_source="table",
                        kappa_cap=1e-3, theta0="cosx", T=1.0, grid_res=256, n_traj=2000,
                        mc_dt=5e-3, n_dset=16, stages=["params", "field", "solve", "variance", "report"],
                        out_dir="runs/desk-ladder"),
}


def builtin_config(name, **overrides):
    if name not in BUILTIN:
        raise ConfigError(f"unknown built-in config {name!r}; available: {', '.join(BUILTIN)}")
    return replace(ExperimentConfig(), **{**BUILTIN[name], **overrides}).validate()
