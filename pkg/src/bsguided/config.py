"""Run configuration: YAML file, ``key=value`` overrides and validation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .geometry import LatticeGeometry, energy_threshold, make_lattice
from .grid import MAX_DIMENSION, Grid, make_grid
from .potential import Potential, PotentialSpec, build_potential
from .spectral import S0

DEFAULTS: dict[str, Any] = {
    "lattice": {"a2": 2 * math.pi, "a3": 2 * math.pi},
    "potential": {
        "longitudinal": "rational",
        "q": 2.0,
        "sigma": 1.0,
        "R": 5.0,
        "transverse": "bump",
        "radius": None,
        "fourier": [],
    },
    "physics": {"E": 0.1, "delta": 1.0, "s": 6.0, "g": "auto", "c": "auto"},
    "grid": {"L": 40.0, "N1": 256, "M": 2, "n_l": 9},
    "numerics": {"rule": "bandlimited"},
    "trace": {"n_theta": 128, "mode": "radial_scan", "g_sweep": True, "gradient": False},
    "scan": {"n_theta": 16, "n_r": 9, "margin": 1.0},
    "guided": {"k": None, "theta": 0.0, "m_max": 6, "boundary": False},
    "verify": {"n_theta": 128, "guided_nodes": "all", "eps_sequence": [1e-2, 1e-3, 1e-4]},
    "seed": 0,
    "threads": 1,
}


def _merge(base: dict, new: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in new.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"configuration key {where!r} must be a section")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def parse_override(item: str) -> tuple[list[str], Any]:
    """Split ``a.b.c=value``; the value is parsed as YAML (numbers, lists, null)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        val = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {item!r}: {exc}") from exc
    return key.split("."), val


def load_config(path: str | None = None, overrides: list[str] | tuple = ()) -> dict:
    """Defaults, then the YAML file, then the overrides in order."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"configuration file {path!r} not found")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path!r}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path!r} must contain a mapping")
        cfg = _merge(cfg, data)
    for item in overrides:
        keys, val = parse_override(item)
        node: dict = {}
        cur = node
        for k in keys[:-1]:
            cur = cur.setdefault(k, {})
        cur[keys[-1]] = val
        cfg = _merge(cfg, node)
    return cfg


def config_hash(cfg: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _num(cfg: dict, section: str, key: str, kind=float) -> Any:
    val = cfg[section][key]
    if isinstance(val, bool):
        raise ConfigError(f"{section}.{key} must be a number, got {val!r}")
    try:
        out = kind(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key} must be a number, got {val!r}") from exc
    if kind is int and out != val:
        raise ConfigError(f"{section}.{key} must be an integer, got {val!r}")
    if kind is float and not math.isfinite(out):
        raise ConfigError(f"{section}.{key} must be finite, got {val!r}")
    return out


@dataclass
class RunConfig:
    """Validated configuration together with the objects it describes."""

    raw: dict
    lat: LatticeGeometry
    grid: Grid
    pot: Potential
    E: float
    delta: float
    s: float
    g_spec: Any
    c_spec: Any
    rule: str
    seed: int
    threads: int

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def E_delta(self) -> float:
        return energy_threshold(self.lat, self.delta)


def validate(cfg: dict) -> RunConfig:
    """Check every invariant of the configuration and build lattice, grid and potential.

    Raises
    ------
    ConfigError
        On the first violated constraint; the message names the bound.
    """
    lat = make_lattice(_num(cfg, "lattice", "a2"), _num(cfg, "lattice", "a3"))
    E = _num(cfg, "physics", "E")
    delta = _num(cfg, "physics", "delta")
    s = _num(cfg, "physics", "s")
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    Ed = energy_threshold(lat, delta)
    if not 0 < E < Ed:
        raise ConfigError(f"E = {E} must lie in (0, E_delta) with E_delta = {Ed:.6g} for delta = {delta}")
    if not s > S0:
        raise ConfigError(f"s = {s} must exceed s0 = 3 + sqrt(5) = {S0:.6f}")
    g = cfg["physics"]["g"]
    if g != "auto":
        g = _num(cfg, "physics", "g")
        if not g > 0:
            raise ConfigError(f"coupling g must be positive, got {g}")
    c = cfg["physics"]["c"]
    if c != "auto":
        c = _num(cfg, "physics", "c")
        if not c > 0:
            raise ConfigError(f"remainder bound c must be positive, got {c}")
    L = _num(cfg, "grid", "L")
    N1 = _num(cfg, "grid", "N1", int)
    M = _num(cfg, "grid", "M", int)
    n_l = _num(cfg, "grid", "n_l", int)
    if N1 * (2 * M + 1) ** 2 > MAX_DIMENSION:
        raise ConfigError(f"dimension N1 (2M+1)^2 = {N1 * (2 * M + 1) ** 2} exceeds the memory guard {MAX_DIMENSION}")
    grid = make_grid(lat, L, N1, M, n_l)
    pc = cfg["potential"]
    try:
        fourier = tuple((tuple(int(n) for n in item[0]), float(item[1])) for item in (pc.get("fourier") or []))
        spec = PotentialSpec(
            longitudinal=str(pc["longitudinal"]),
            q=float(pc["q"]),
            sigma=float(pc["sigma"]),
            R=float(pc["R"]),
            transverse=str(pc["transverse"]),
            radius=None if pc["radius"] is None else float(pc["radius"]),
            fourier=fourier,
        )
    except (TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid potential section: {exc}") from exc
    pot = build_potential(spec, grid)
    rule = cfg["numerics"]["rule"]
    if rule not in ("bandlimited", "trapezoid"):
        raise ConfigError(f"numerics.rule must be 'bandlimited' or 'trapezoid', got {rule!r}")
    seed = cfg["seed"]
    threads = cfg["threads"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {threads!r}")
    for sec, key, least in (("trace", "n_theta", 3), ("scan", "n_theta", 1), ("scan", "n_r", 2), ("verify", "n_theta", 3)):
        if _num(cfg, sec, key, int) < least:
            raise ConfigError(f"{sec}.{key} must be at least {least}")
    return RunConfig(cfg, lat, grid, pot, E, delta, s, g, c, rule, seed, threads)
