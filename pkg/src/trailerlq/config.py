"""Flat ``key = value`` configuration with units in the key names.

Blank lines and ``#`` comments are ignored. Unknown or repeated keys are
errors. Every key has a default, so an empty file is a valid configuration.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .kvfile import format_value
from .ldi import PathParameterSet
from .lq import DEFAULT_Q, CostWeights
from .vehicle import VehicleGeometry

_SECTION = "toolkit"


def _floats(n: int | None):
    def parse(text: str):
        vals = tuple(float(v) for v in text.replace(",", " ").split())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals
    return parse


def _format(v) -> str:
    # shortest round-trip form, so the dump reads like a hand-written file
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(_format(x) for x in v)
    return format_value(v)


def _optional_float(text: str):
    return None if text.strip().lower() in ("none", "") else float(text)


def _q_matrix(text: str):
    vals = _floats(None)(text)
    if len(vals) not in (4, 16):
        raise ValueError("Q_diag takes 4 values (diagonal) or 16 (full, row major)")
    return vals


@dataclass(frozen=True)
class ToolkitConfig:
    L1_m: float = 3.8
    L2_m: float = 2.8
    L3_m: float = 6.6
    M1_m: float = 0.72
    v3_mps: float = -1.0
    Q_diag: tuple = DEFAULT_Q
    R: float = 1.0
    beta3_max_deg: float = 40.0
    beta2_max_deg: float = 20.0
    u0_max: float = 0.37
    joint_diff_max_deg: float = 20.0
    steer_diff_max_deg: float = 10.0
    eps_per_s: float = 0.001
    mu_max: float = 1e4
    mu_gap_rel: float = 1e-3
    beta_grid_deg: float = 0.25
    u0_grid: float = 0.001
    inflation: float = 0.02
    n_verify_samples: int = 10000
    path: str = "eight"  # eight | straight | CSV file of samples
    straight_length_m: float = 200.0
    path_ds_m: float = 0.01
    eight_amplitude: float = 0.29
    eight_ramp_m: float = 16.0
    eight_hold_m: float = 32.0
    eight_straight_m: float = 16.0
    dt_s: float = 0.01
    duration_s: float | None = None
    s0_m: float | None = None
    e0_z3_m: float = -4.2
    e0_etheta3_rad: float = -0.1
    e0_ebeta3_rad: float = 0.1
    e0_ebeta2_rad: float = -0.3
    u_max: float | None = None

    @property
    def geometry(self) -> VehicleGeometry:
        return VehicleGeometry(self.L1_m, self.L2_m, self.L3_m, self.M1_m)

    @property
    def weights(self) -> CostWeights:
        q = np.array(self.Q_diag, dtype=float)
        return CostWeights(np.diag(q) if q.size == 4 else q.reshape(4, 4), self.R)

    @property
    def e0(self) -> tuple[float, float, float, float]:
        return (self.e0_z3_m, self.e0_etheta3_rad, self.e0_ebeta3_rad, self.e0_ebeta2_rad)

    @property
    def parameter_set(self) -> PathParameterSet:
        r = math.radians
        return PathParameterSet(r(self.beta3_max_deg), r(self.beta2_max_deg), self.u0_max,
                                r(self.joint_diff_max_deg), r(self.steer_diff_max_deg))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self, keys=None) -> str:
        text = self.to_text()
        if keys is not None:
            text = "".join(l + "\n" for l in text.splitlines() if l.split(" = ")[0] in keys)
        return hashlib.sha256(text.encode()).hexdigest()

    def certification_digest(self) -> str:
        """Digest of the keys the certificate depends on."""
        return self.digest(CERTIFICATION_KEYS)


CERTIFICATION_KEYS = (
    "L1_m", "L2_m", "L3_m", "M1_m", "v3_mps", "Q_diag", "R", "beta3_max_deg", "beta2_max_deg",
    "u0_max", "joint_diff_max_deg", "steer_diff_max_deg", "eps_per_s", "mu_max", "mu_gap_rel",
    "beta_grid_deg", "u0_grid", "inflation", "n_verify_samples",
)


_PARSERS = {
    "Q_diag": _q_matrix,
    "duration_s": _optional_float,
    "u_max": _optional_float,
    "s0_m": _optional_float,
    "path": str.strip,
    "n_verify_samples": int,
}


def _validate(cfg: ToolkitConfig) -> None:
    cfg.geometry
    cfg.weights
    if cfg.v3_mps == 0:
        raise ValueError("v3_mps must be non-zero")
    if not cfg.dt_s > 0:
        raise ValueError("dt_s must be positive")
    if cfg.duration_s is not None and not cfg.duration_s > 0:
        raise ValueError("duration_s must be positive")
    if cfg.eps_per_s < 0:
        raise ValueError("eps_per_s must be non-negative")
    if min(cfg.beta3_max_deg, cfg.beta2_max_deg, cfg.u0_max, cfg.joint_diff_max_deg,
           cfg.steer_diff_max_deg) < 0:
        raise ValueError("parameter-set limits must be non-negative")
    if max(cfg.beta3_max_deg, cfg.beta2_max_deg) >= 90:
        raise ValueError("joint limits must stay below 90 deg")
    if not (cfg.beta_grid_deg > 0 and cfg.u0_grid > 0 and cfg.path_ds_m > 0
            and cfg.straight_length_m > 0):
        raise ValueError("grid resolutions must be positive")
    if not 0 <= cfg.inflation < 1:
        raise ValueError("inflation must lie in [0, 1)")
    if not cfg.mu_max > 1:
        raise ValueError("mu_max must exceed 1")
    if cfg.n_verify_samples < 0:
        raise ValueError("n_verify_samples must be non-negative")


def parse_config(text: str) -> ToolkitConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if parser.sections() != [_SECTION]:
        raise ConfigError("section headers are not allowed")
    known = {f.name: f for f in fields(ToolkitConfig)}
    values = {}
    for key, raw in parser.items(_SECTION):
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        parse = _PARSERS.get(key, float)
        try:
            values[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    cfg = ToolkitConfig(**values)
    try:
        _validate(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ToolkitConfig:
    if path is None:
        return ToolkitConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)
