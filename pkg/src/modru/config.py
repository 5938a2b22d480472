"""Scenario configuration: flat key-value files with env-var overrides.

Config files hold ``section.key = value`` lines (``#`` comments).  Any
key can also be overridden through the environment as
``MODRU_<key with dots replaced by underscores>`` (exact case, or all
upper case).  Profile-valued keys use ``pos:val, pos:val, ...`` pairs.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .plant import CarParams, PositionProfile, TruckParams

ENV_PREFIX = "MODRU_"


def parse_pairs(text: str, kind: str) -> PositionProfile:
    """Parse 'pos:val, pos:val, ...' into a position profile."""
    bps, vals = [], []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        pos, sep, val = chunk.partition(":")
        if not sep:
            raise ConfigError(f"expected pos:val pair, got {chunk!r}")
        try:
            bps.append(float(pos))
            vals.append(float(val))
        except ValueError as exc:
            raise ConfigError(f"bad numeric pair {chunk!r}") from exc
    if not bps:
        raise ConfigError("empty breakpoint list")
    try:
        return PositionProfile(np.array(bps), np.array(vals), kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_mask(text: str) -> tuple[bool, ...]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 6 or any(p not in ("0", "1") for p in parts):
        raise ConfigError(f"mask must be six 0/1 flags, got {text!r}")
    return tuple(p == "1" for p in parts)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected boolean, got {text!r}")


def _parse_optional_float(text: str) -> float | None:
    t = text.strip().lower()
    if t in ("", "none", "auto"):
        return None
    return float(text)


@dataclass
class Scenario:
    """Complete description of one experiment run."""

    name: str = "truck-default"
    plant_type: str = "truck"
    plant_params: TruckParams | CarParams = field(default_factory=TruckParams)
    path_length: float = 10_000.0
    slope: PositionProfile = None
    v_limit: PositionProfile = None
    T_f: float = 1000.0
    to_n: int = 100
    to_mode: str = "full"
    to_gamma: float | None = None
    vdot_lim: float = 0.7
    to_u_lim: float | None = 4000.0
    eff_gen: float = 1.1
    eff_regen: float = 0.9
    fit_eff: bool = True
    est_duration: float = 1800.0
    est_h: float = 0.5
    est_noise: float = 0.0
    est_hold: float = 60.0
    est_slope_amp: float = 0.02
    est_mask: tuple = (True, True, False, True, True, False)
    rho_I: float = 0.01
    rho_u: float = 2e-5
    grid_n: int = 11
    ctrl_u_lim: float = 4000.0
    sim_h: float = 0.5
    sim_substeps: int = 2
    resample_m: int = 0
    seed: int = 1234


def default_truck_scenario() -> Scenario:
    """10 km haul: +-4% grade features and a reduced-limit mid-zone."""
    sc = Scenario()
    sc.slope = PositionProfile(
        np.array([0.0, 2000.0, 2300.0, 3100.0, 3400.0, 5600.0,
                  5900.0, 6700.0, 7000.0, 10_000.0]),
        np.array([0.0, 0.0, 0.04, 0.04, 0.0, 0.0, -0.04, -0.04, 0.0, 0.0]),
        "linear")
    sc.v_limit = PositionProfile(np.array([0.0, 4700.0, 5600.0]),
                                 np.array([25.0, 15.0, 25.0]), "constant")
    return sc


def default_car_scenario() -> Scenario:
    """1 km urban stretch with rolling grade and a faster middle zone."""
    sc = Scenario(
        name="car-default",
        plant_type="car",
        plant_params=CarParams(),
        path_length=1000.0,
        T_f=75.2,
        to_n=50,
        vdot_lim=2.0,
        to_u_lim=4000.0,
        est_duration=400.0,
        est_h=0.2,
        est_hold=40.0,
        est_slope_amp=0.005,
        rho_u=2e-6,
        ctrl_u_lim=4500.0,
        sim_h=0.2,
        sim_substeps=1,
    )
    sc.slope = PositionProfile(
        np.array([0.0, 100.0, 200.0, 350.0, 450.0, 550.0, 700.0, 800.0, 1000.0]),
        np.array([0.0, 0.0, 0.04, 0.04, 0.0, -0.04, -0.04, 0.0, 0.0]),
        "linear")
    sc.v_limit = PositionProfile(np.array([0.0, 300.0, 700.0]),
                                 np.array([13.9, 16.7, 13.9]), "constant")
    return sc


# key -> (scenario field, parser); plant.* overrides are handled separately.
_KEYS = {
    "scenario.name": ("name", str),
    "path.length": ("path_length", float),
    "to.T_f": ("T_f", float),
    "to.N": ("to_n", int),
    "to.mode": ("to_mode", str),
    "to.gamma": ("to_gamma", _parse_optional_float),
    "to.vdot_lim": ("vdot_lim", float),
    "to.u_lim": ("to_u_lim", _parse_optional_float),
    "eff.gen": ("eff_gen", float),
    "eff.regen": ("eff_regen", float),
    "est.fit_efficiency": ("fit_eff", _parse_bool),
    "est.duration": ("est_duration", float),
    "est.h": ("est_h", float),
    "est.noise": ("est_noise", float),
    "est.hold": ("est_hold", float),
    "est.slope_amp": ("est_slope_amp", float),
    "est.mask": ("est_mask", _parse_mask),
    "ctrl.rho_I": ("rho_I", float),
    "ctrl.rho_u": ("rho_u", float),
    "ctrl.grid_n": ("grid_n", int),
    "ctrl.u_lim": ("ctrl_u_lim", float),
    "sim.h": ("sim_h", float),
    "sim.substeps": ("sim_substeps", int),
    "resample.M": ("resample_m", int),
    "seed": ("seed", int),
}


def read_config_file(path) -> dict[str, str]:
    """Read 'key = value' lines; later keys win."""
    out: dict[str, str] = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    for i, line in enumerate(p.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{i}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def env_overrides(environ=None) -> dict[str, str]:
    """Collect MODRU_* environment overrides for known config keys."""
    environ = os.environ if environ is None else environ
    out: dict[str, str] = {}
    keys = list(_KEYS) + ["plant.type", "slope.breakpoints", "slope.kind",
                          "vlim.breakpoints", "vlim.kind"]
    plant_fields = set(f.name for f in dataclasses.fields(TruckParams)) | \
        set(f.name for f in dataclasses.fields(CarParams))
    keys += [f"plant.{f}" for f in plant_fields]
    for key in keys:
        for candidate in (ENV_PREFIX + key.replace(".", "_"),
                          (ENV_PREFIX + key.replace(".", "_")).upper()):
            if candidate in environ:
                out[key] = environ[candidate]
                break
    return out


def scenario_from_config(cfg: dict[str, str], environ=None) -> Scenario:
    """Build a scenario from config entries on top of the built-in defaults."""
    cfg = dict(cfg)
    cfg.update(env_overrides(environ))
    plant_type = cfg.pop("plant.type", "truck")
    if plant_type == "truck":
        sc = default_truck_scenario()
    elif plant_type == "car":
        sc = default_car_scenario()
    else:
        raise ConfigError(f"unknown plant.type {plant_type!r}")

    plant_over: dict[str, float] = {}
    slope_kind = cfg.pop("slope.kind", "linear")
    vlim_kind = cfg.pop("vlim.kind", "constant")
    for key, raw in cfg.items():
        if key == "slope.breakpoints":
            sc.slope = parse_pairs(raw, slope_kind)
            continue
        if key == "vlim.breakpoints":
            sc.v_limit = parse_pairs(raw, vlim_kind)
            continue
        if key.startswith("plant."):
            plant_over[key.split(".", 1)[1]] = raw
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        name, parser = _KEYS[key]
        try:
            setattr(sc, name, parser(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc

    if plant_over:
        valid = {f.name for f in dataclasses.fields(type(sc.plant_params))}
        bad = set(plant_over) - valid
        if bad:
            raise ConfigError(f"unknown plant parameter(s): {sorted(bad)}")
        try:
            sc.plant_params = dataclasses.replace(
                sc.plant_params, **{k: float(v) for k, v in plant_over.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    if sc.to_mode not in ("full", "pseudo"):
        raise ConfigError(f"to.mode must be 'full' or 'pseudo', got {sc.to_mode!r}")
    for positive in ("path_length", "T_f", "vdot_lim", "est_duration", "est_h",
                     "sim_h", "rho_I", "rho_u", "ctrl_u_lim"):
        if getattr(sc, positive) <= 0:
            raise ConfigError(f"{positive} must be positive")
    if sc.to_n < 2 or sc.grid_n < 2 or sc.sim_substeps < 1:
        raise ConfigError("to.N and ctrl.grid_n must be >= 2, sim.substeps >= 1")
    return sc


def load_scenario(config_path=None, environ=None, seed: int | None = None) -> Scenario:
    cfg = read_config_file(config_path) if config_path else {}
    sc = scenario_from_config(cfg, environ)
    if seed is not None:
        sc.seed = seed
    return sc
