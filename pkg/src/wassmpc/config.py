"""Experiment configuration: defaults, INI round-trip, and typed overrides.

The file format is a flat-sectioned key=value text file with one section per
study plus a [run] section for the invocation itself.  Unknown keys are
rejected; overrides are type-checked against the schema.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class BatteryConfig:
    # Plant constants
    q: float = 8280.0
    r0: float = 0.01
    r1: float = 0.01
    r2: float = 0.02
    c1: float = 2500.0
    c2: float = 70000.0
    dt: float = 1.0
    soc_initial: float = 0.2
    soc_target: float = 0.8
    vrc1_initial: float = 0.0
    vrc2_initial: float = 0.0
    # Synthetic open-circuit voltage profile
    ocv_base: float = 3.2
    ocv_slope: float = 0.10
    ocv_dip_amp: float = 0.1
    ocv_dip_rate: float = 35.0
    ocv_knee_amp: float = 0.1
    ocv_knee_rate: float = 25.0
    ocv_step_amp: float = 0.0075
    ocv_step_width: float = 0.02
    # Constraint and input box
    v_limit: float = 3.6
    i_min: float = 0.0
    i_max: float = 40.0
    bootstrap_current: float = 25.0
    episode_steps: int = 500
    # Horizon / ambiguity
    n_target: int = 8
    eta: float = 0.025
    beta: float = 0.95
    # Solver
    mutants: int = 5000
    paper_scale_mutants: int = 250000
    mutation_scale_frac: float = 0.1
    es_iterations: int = 1
    # Model learning
    hidden_units: int = 10
    train_iterations: int = 200
    train_lr: float = 0.01
    train_lr_decay: float = 0.999
    residual_cap: int = 2000
    residual_window: int = 0
    c_drift: float = 0.0


@dataclass(frozen=True)
class VehicleConfig:
    # Plant constants
    length: float = 0.5
    dt: float = 0.2
    x1_initial: float = 5.0
    x2_initial: float = 10.0
    heading_initial: float = 0.7853981633974483
    speed_initial: float = 0.5
    # Input box and safe first action
    accel_min: float = -1.0
    accel_max: float = 1.0
    steer_min: float = -0.75
    steer_max: float = 0.75
    bootstrap_accel: float = 0.0
    bootstrap_steer: float = 0.0
    # Obstacle field generator
    arena: float = 100.0
    grid_resolution: float = 0.25
    n_gaussians: int = 12
    amplitude_min: float = 0.5
    amplitude_max: float = 1.5
    sigma_min: float = 4.0
    sigma_max: float = 12.0
    cutoff_quantile: float = 0.80
    corridor_width: float = 3.0
    corridor_progress: float = 170.0
    max_steps: int = 1500
    # Horizon / ambiguity
    n_target: int = 12
    eta: float = 0.005
    beta: float = 0.95
    # Solver
    mutants: int = 5000
    paper_scale_mutants: int = 750000
    mutation_scale_frac: float = 0.1
    es_iterations: int = 1
    # Model learning
    hidden_units: int = 10
    train_iterations: int = 200
    train_lr: float = 0.01
    train_lr_decay: float = 0.999
    residual_cap: int = 2000
    residual_window: int = 0
    c_drift: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    study: str = "battery"
    dro_enabled: bool = True
    seeds: tuple[int, ...] = (1,)
    battery: BatteryConfig = BatteryConfig()
    vehicle: VehicleConfig = VehicleConfig()

    @property
    def params(self):
        return self.battery if self.study == "battery" else self.vehicle


_STUDY_TYPES = {"battery": BatteryConfig, "vehicle": VehicleConfig}


def _coerce(key: str, raw: str, target_type: type):
    try:
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "on", "yes"):
                return True
            if lowered in ("0", "false", "off", "no"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for key '{key}': {raw!r} (expected {target_type.__name__})")


def parse_seeds(text: str) -> tuple[int, ...]:
    """Seed lists: '1..3' ranges, comma lists, or a single integer."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _apply_section(params, section_name: str, items) -> object:
    schema = {f.name: f.type for f in fields(type(params))}
    updates = {}
    for key, raw in items:
        if key not in schema:
            raise ConfigError(f"unknown key '{key}' in section [{section_name}]")
        current = getattr(params, key)
        updates[key] = _coerce(key, raw, type(current))
    return replace(params, **updates)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                study: str | None = None, dro: bool | None = None,
                seeds: tuple[int, ...] | None = None) -> ExperimentConfig:
    """Defaults, then the file, then key=value overrides, then explicit flags."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section == "run":
                for key, raw in parser.items(section):
                    if key == "study":
                        if raw not in _STUDY_TYPES:
                            raise ConfigError(f"unknown study '{raw}'")
                        cfg = replace(cfg, study=raw)
                    elif key == "dro":
                        cfg = replace(cfg, dro_enabled=_coerce(key, raw, bool))
                    elif key == "seeds":
                        cfg = replace(cfg, seeds=parse_seeds(raw))
                    else:
                        raise ConfigError(f"unknown key '{key}' in section [run]")
            elif section in _STUDY_TYPES:
                cfg = replace(cfg, **{section: _apply_section(getattr(cfg, section),
                                                              section, parser.items(section))})
            else:
                raise ConfigError(f"unknown section [{section}]")
    if study is not None:
        if study not in _STUDY_TYPES:
            raise ConfigError(f"unknown study '{study}'")
        cfg = replace(cfg, study=study)
    if overrides:
        pairs = []
        for entry in overrides:
            if "=" not in entry:
                raise ConfigError(f"override must look like key=value, got '{entry}'")
            key, raw = entry.split("=", 1)
            pairs.append((key.strip(), raw.strip()))
        cfg = replace(cfg, **{cfg.study: _apply_section(getattr(cfg, cfg.study),
                                                        cfg.study, pairs)})
    if dro is not None:
        cfg = replace(cfg, dro_enabled=dro)
    if seeds is not None:
        cfg = replace(cfg, seeds=tuple(int(s) for s in seeds))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    p = cfg.params
    checks = [
        (0.0 < p.eta < 1.0, "eta", "must lie in (0, 1)"),
        (0.0 <= p.beta < 1.0, "beta", "must lie in [0, 1)"),
        (p.n_target >= 1, "n_target", "must be >= 1"),
        (p.mutants >= 1, "mutants", "must be >= 1"),
        (p.mutation_scale_frac > 0.0, "mutation_scale_frac", "must be positive"),
        (p.hidden_units >= 1, "hidden_units", "must be >= 1"),
        (p.train_iterations >= 1, "train_iterations", "must be >= 1"),
        (p.train_lr > 0.0, "train_lr", "must be positive"),
        (p.residual_cap >= 1, "residual_cap", "must be >= 1"),
        (p.residual_window >= 0, "residual_window", "must be >= 0"),
        (p.c_drift >= 0.0, "c_drift", "must be >= 0"),
    ]
    if cfg.study == "battery":
        checks += [
            (p.i_max > p.i_min, "i_max", "must exceed i_min"),
            (p.i_min <= p.bootstrap_current <= p.i_max, "bootstrap_current",
             "must lie in the input box"),
            (p.episode_steps >= 1, "episode_steps", "must be >= 1"),
            (0.0 <= p.soc_initial <= 1.0, "soc_initial", "must lie in [0, 1]"),
            (0.0 < p.soc_target <= 1.0, "soc_target", "must lie in (0, 1]"),
            (min(p.q, p.r0, p.r1, p.r2, p.c1, p.c2, p.dt) > 0.0, "q",
             "plant constants must be positive"),
        ]
    else:
        checks += [
            (p.accel_max > p.accel_min, "accel_max", "must exceed accel_min"),
            (p.steer_max > p.steer_min, "steer_max", "must exceed steer_min"),
            (p.length > 0.0 and p.dt > 0.0, "length", "plant constants must be positive"),
            (p.n_gaussians >= 0, "n_gaussians", "must be >= 0"),
            (0.0 < p.cutoff_quantile < 1.0, "cutoff_quantile", "must lie in (0, 1)"),
            (p.max_steps >= 1, "max_steps", "must be >= 1"),
        ]
    for ok, key, message in checks:
        if not ok:
            raise ConfigError(f"invalid value for key '{key}': {message}")
    if not cfg.seeds:
        raise ConfigError("invalid value for key 'seeds': at least one seed required")


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Echo the effective configuration; feeding the file back reproduces it."""
    parser = configparser.ConfigParser()
    parser["run"] = {
        "study": cfg.study,
        "dro": "on" if cfg.dro_enabled else "off",
        "seeds": ",".join(str(s) for s in cfg.seeds),
    }
    for name in ("battery", "vehicle"):
        section = getattr(cfg, name)
        parser[name] = {f.name: repr(getattr(section, f.name)) for f in fields(section)}
    with open(path, "w") as fh:
        parser.write(fh)
