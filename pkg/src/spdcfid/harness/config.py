"""Scenario configuration: JSON or TOML, merged over the shipped defaults."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..spdc import PumpConfig

AUTO = "auto"
SWEEP = "sweep"


def default_payload() -> dict:
    text = resources.files("spdcfid.data").joinpath("default_scenario.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from exc


def _num(section: dict, key: str, where: str, allow=(), positive=False, nonneg=False):
    val = section[key]
    if isinstance(val, str) and val in allow:
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        extra = f" or one of {list(allow)}" if allow else ""
        raise ConfigError(f"{where}.{key} must be a finite number{extra}, got {val!r}")
    if positive and val <= 0:
        raise ConfigError(f"{where}.{key} must be positive")
    if nonneg and val < 0:
        raise ConfigError(f"{where}.{key} must be non-negative")
    return float(val)


def _int(section: dict, key: str, where: str, minimum: int):
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"{where}.{key} must be an integer >= {minimum}, got {val!r}")
    return val


@dataclass(frozen=True)
class ScenarioConfig:
    payload: dict
    base_dir: Path

    # -- accessors --------------------------------------------------------
    def section(self, name: str) -> dict:
        return self.payload[name]

    @property
    def pump(self) -> PumpConfig:
        return PumpConfig(**self.payload["pump"])

    @property
    def timing(self) -> str:
        return self.payload["run"]["timing"]

    @property
    def seed(self) -> int:
        return self.payload["run"]["seed"]

    @property
    def rays(self) -> int:
        return self.payload["sampling"]["rays"]

    @property
    def resamples(self) -> int:
        return self.payload["run"]["resamples"]

    @property
    def lens(self) -> str:
        return self.payload["lens"]["prescription"]

    def lens_path(self) -> Path | None:
        name = self.lens
        if name in ("none", "asphere", "doublet"):
            return None
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Dotted keys, e.g. with_overrides(**{"run.seed": 3})."""
        nested: dict = {}
        for dotted, val in changes.items():
            sec, _, key = dotted.partition(".")
            nested.setdefault(sec, {})[key] = val
        return build_config(_merge(self.payload, nested), self.base_dir, merged=True)


def _validate(p: dict, base_dir: Path) -> None:
    pump = p["pump"]
    for k in ("wavelength_nm", "waist_um"):
        _num(pump, k, "pump", positive=True)
    _num(pump, "linewidth_rad_s", "pump", nonneg=True)
    _num(pump, "polarization_deg", "pump")
    pair = p["pair"]
    for k in ("signal_nm", "idler_nm", "linewidth_nm"):
        _num(pair, k, "pair", positive=True)
    cr = p["crystals"]
    if not isinstance(cr["material"], str):
        raise ConfigError("crystals.material must be a material name")
    _num(cr, "cut_angle_deg", "crystals", allow=(AUTO,))
    _num(cr, "length_mm", "crystals", nonneg=True)
    _num(cr, "overlap_length_mm", "crystals", allow=(AUTO,), nonneg=True)
    _num(cr, "gap_mm", "crystals", nonneg=True)
    comp = p["compensators"]
    _num(comp, "cut_angle_deg", "compensators")
    _num(comp, "pre_length_mm", "compensators", allow=(AUTO,), nonneg=True)
    _num(comp, "post_length_mm", "compensators", allow=(AUTO, SWEEP), nonneg=True)
    if comp["post_timing"] not in ("phase", "group"):
        raise ConfigError("compensators.post_timing must be 'phase' or 'group'")
    sw = p["sweep"]
    for k in ("start_mm", "stop_mm"):
        _num(sw, k, "sweep", nonneg=True)
    _num(sw, "step_mm", "sweep", positive=True)
    if sw["stop_mm"] < sw["start_mm"]:
        raise ConfigError("sweep.stop_mm must not be below sweep.start_mm")
    if not isinstance(sw["monte_carlo"], bool):
        raise ConfigError("sweep.monte_carlo must be true or false")
    _int(sw, "monte_carlo_rays", "sweep", 2)
    lens = p["lens"]
    if not isinstance(lens["prescription"], str):
        raise ConfigError("lens.prescription must be 'none', 'asphere', 'doublet' or a file path")
    _num(lens, "distance_mm", "lens", nonneg=True)
    if lens["prescription"] not in ("none", "asphere", "doublet"):
        path = Path(lens["prescription"])
        path = path if path.is_absolute() else base_dir / path
        if not path.is_file():
            raise ConfigError(f"lens prescription file {path} does not exist")
    sm = p["sampling"]
    _int(sm, "rays", "sampling", 1)
    _num(sm, "half_width_nm", "sampling", positive=True)
    _num(sm, "alpha_max_deg", "sampling", nonneg=True)
    _num(sm, "collection_angle_deg", "sampling", positive=True)
    if not isinstance(sm["collinear_only"], bool):
        raise ConfigError("sampling.collinear_only must be true or false")
    em = p["emission_map"]
    for k in ("lambda_min_nm", "lambda_max_nm", "alpha_max_deg"):
        _num(em, k, "emission_map", positive=True)
    for k in ("lambda_step_nm", "alpha_step_deg", "capture_angle_deg"):
        _num(em, k, "emission_map", positive=True)
    if em["lambda_max_nm"] <= em["lambda_min_nm"]:
        raise ConfigError("emission_map wavelength range is empty")
    run = p["run"]
    if run["timing"] not in ("phase", "group"):
        raise ConfigError("run.timing must be 'phase' or 'group'")
    _int(run, "seed", "run", 0)
    _int(run, "resamples", "run", 100)
    _num(run, "histogram_bin_fs", "run", positive=True)
    _int(run, "trace_dump_rays", "run", 1)
    if run["trace_dump_rays"] > 10_000:
        raise ConfigError("run.trace_dump_rays is limited to 10000")
    try:
        PumpConfig(**pump)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_config(override: dict[str, Any] | None = None, base_dir: str | Path = ".",
                 merged: bool = False) -> ScenarioConfig:
    payload = override if merged else _merge(default_payload(), override or {})
    base_dir = Path(base_dir)
    _validate(payload, base_dir)
    return ScenarioConfig(payload, base_dir)


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    if path is None:
        return build_config()
    return build_config(read_config_file(path), Path(path).resolve().parent)
