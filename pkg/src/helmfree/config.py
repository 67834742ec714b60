"""Run configuration: INI-style text, strict key validation, CLI overrides.

Unknown sections or keys are errors (typos must not silently fall back to
defaults). `--set section.key=value` overrides are applied before
validation so they obey the same rules.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dc_field

__all__ = ["ConfigError", "RunConfig", "parse_config", "apply_overrides",
           "DEFAULTS"]


class ConfigError(ValueError):
    pass


# section -> key -> (type tag, default); None default means "no value"
DEFAULTS = {
    "problem": {
        "name": ("str", "ClosedOff"),
        "n": ("int", 65),
        "k": ("float", 40.0),
        "frequency": ("float", 20.0),
        "shape": ("ints", (61, 61, 101)),
        "domain": ("floats", (0.0, 600.0, 0.0, 600.0, -1000.0, 0.0)),
        "velocities": ("floats", (2000.0, 1500.0, 3000.0)),
        "interfaces": ("floats", (-200.0, -400.0, -500.0, -700.0)),
        "velocity_file": ("str", ""),
        "source": ("floats", (300.0, 300.0, 0.0)),
    },
    "solver": {
        "method": ("str", "gmres"),
        "tol": ("float", 1e-6),
        "maxit": ("int", 400),
        "s": ("int", 4),
        "rng_seed": ("int", 1234),
        "restart": ("int", 0),         # 0 = non-restarted
    },
    "preconditioner": {
        "beta1": ("float", 1.0),
        "beta2": ("float", -0.5),
        "omega": ("float", 0.8),
        "nu1": ("int", 1),
        "nu2": ("int", 1),
        "cycle": ("str", "V"),
        "coarsest_threshold": ("int", 17),
        "threshold_cmp": ("str", "gt"),
        "coarsest_tol": ("float", 1e-11),
        "coarsest_maxit": ("int", 2000),
    },
    "topology": {
        "npx0": ("int", 1),
        "npy0": ("int", 1),
        "npz0": ("int", 1),
        "fabric": ("str", "thread"),
        "port_base": ("int", 0),       # 0 = unix sockets
    },
    "output": {
        "dir": ("str", "out"),
        "vtk": ("bool", False),
        "write_field": ("bool", True),
        "verbosity": ("int", 1),
    },
}

_VALID_CHOICES = {
    ("problem", "name"): ("ClosedOff", "Wedge", "Salt"),
    ("solver", "method"): ("gmres", "bicgstab", "idrs"),
    ("preconditioner", "cycle"): ("V", "F"),
    ("preconditioner", "threshold_cmp"): ("gt", "ge"),
    ("topology", "fabric"): ("thread", "socket"),
}


@dataclass
class RunConfig:
    problem: dict = dc_field(default_factory=dict)
    solver: dict = dc_field(default_factory=dict)
    preconditioner: dict = dc_field(default_factory=dict)
    topology: dict = dc_field(default_factory=dict)
    output: dict = dc_field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {s: dict(self.section(s)) for s in DEFAULTS}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for s in DEFAULTS:
            cfg.section(s).update(d.get(s, {}))
        return cfg


def _convert(section: str, key: str, raw: str):
    tag, _ = DEFAULTS[section][key]
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if tag == "ints":
            return tuple(int(p) for p in raw.split(","))
        if tag == "floats":
            return tuple(float(p) for p in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(
            f"invalid value for {section}.{key}: {raw!r} (expected {tag})") from None


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse config text, apply `section.key=value` overrides, validate."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    raw: dict = {s: {} for s in DEFAULTS}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}] "
                              f"(expected one of {sorted(DEFAULTS)})")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(
                    f"unknown key {section}.{key} "
                    f"(expected one of {sorted(DEFAULTS[section])})")
            raw[section][key] = value
    for item in overrides:
        section, key, value = _split_override(item)
        raw[section][key] = value

    cfg = RunConfig()
    for section, keys in DEFAULTS.items():
        out = cfg.section(section)
        for key, (tag, default) in keys.items():
            if key in raw[section]:
                out[key] = _convert(section, key, raw[section][key])
            else:
                out[key] = default
    _validate(cfg)
    return cfg


def _split_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, value = item.split("=", 1)
    if "." not in path:
        raise ConfigError(f"override key {path!r} must look like section.key")
    section, key = path.split(".", 1)
    section, key = section.strip(), key.strip()
    if section not in DEFAULTS:
        raise ConfigError(f"unknown section {section!r} in override {item!r}")
    if key not in DEFAULTS[section]:
        raise ConfigError(f"unknown key {section}.{key} in override {item!r}")
    return section, key, value


def _validate(cfg: RunConfig) -> None:
    for (section, key), choices in _VALID_CHOICES.items():
        val = cfg.section(section)[key]
        if val not in choices:
            raise ConfigError(
                f"{section}.{key} must be one of {choices}, got {val!r}")
    topo = cfg.topology
    for key in ("npx0", "npy0", "npz0"):
        if topo[key] < 1:
            raise ConfigError(f"topology.{key} must be >= 1, got {topo[key]}")
    sol = cfg.solver
    if sol["tol"] <= 0:
        raise ConfigError(f"solver.tol must be positive, got {sol['tol']}")
    if sol["maxit"] < 1:
        raise ConfigError(f"solver.maxit must be >= 1, got {sol['maxit']}")
    if sol["s"] < 1:
        raise ConfigError(f"solver.s must be >= 1, got {sol['s']}")
    pre = cfg.preconditioner
    if pre["nu1"] < 0 or pre["nu2"] < 0:
        raise ConfigError("preconditioner.nu1/nu2 must be >= 0")
    if not 0 < pre["omega"] <= 1:
        raise ConfigError(f"preconditioner.omega must be in (0, 1], "
                          f"got {pre['omega']}")


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Re-validate an existing config with additional overrides applied."""
    d = cfg.to_dict()
    for item in overrides:
        section, key, value = _split_override(item)
        d[section][key] = _convert(section, key, value)
    out = RunConfig.from_dict(d)
    _validate(out)
    return out
