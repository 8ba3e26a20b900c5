"""Lens prescription files.

A prescription is a JSON object with a ``surfaces`` list. Each entry gives
``radius_mm`` (0 for a plane), ``conic``, ``asphere_coeffs`` [A4, A6, ...],
``thickness_mm`` (to the next surface) and ``material`` (the medium after the
surface; "air" for vacuum), plus ``aperture_mm`` (clear half-height).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..dispersion import Material, get_material
from ..errors import ConfigError
from .system import ASPHERE, PLANE, SPHERE, VACUUM, Lens, Medium, OpticalSystem, Pol, Ray, Surface

AIR_NAMES = {"air", "vacuum", ""}


@dataclass(frozen=True)
class SurfaceSpec:
    radius_mm: float
    conic: float
    asphere_coeffs: tuple[float, ...]
    thickness_mm: float
    material: Material | None
    aperture_mm: float

    def surface(self, z: float) -> Surface:
        after = VACUUM if self.material is None else Medium(self.material)
        if self.radius_mm == 0:
            if self.conic or any(self.asphere_coeffs):
                raise ConfigError("a plane surface cannot carry conic or asphere terms")
            return Surface(z, PLANE, aperture=self.aperture_mm, after=after)
        kind = ASPHERE if self.conic or any(self.asphere_coeffs) else SPHERE
        return Surface(z, kind, self.radius_mm, self.conic, self.asphere_coeffs, self.aperture_mm, after)


@dataclass(frozen=True)
class LensPrescription:
    name: str
    surfaces: tuple[SurfaceSpec, ...]
    notes: str = ""

    @property
    def center_thickness(self) -> float:
        return sum(s.thickness_mm for s in self.surfaces[:-1])

    def build(self, z_front: float) -> Lens:
        out, z = [], z_front
        for s in self.surfaces:
            out.append(s.surface(z))
            z += s.thickness_mm
        return Lens(tuple(out), self.name)

    def back_focus(self, lam_nm: float, height_mm: float = 1e-3) -> float:
        """Distance from the last vertex to the paraxial focus for a collimated input."""
        lens = self.build(0.0)
        plane = lens.last_z + 1.0
        from .tracer import trace  # local import: tracer depends on this module's package

        r = trace(Ray((-1.0, height_mm), (1.0, 0.0), lam_nm, Pol.H), OpticalSystem([lens], plane), strict=True)
        dz, dx = r.direction
        if dx == 0:
            raise ConfigError(f"{self.name}: no focus (afocal)")
        z_cross = r.position[0] - r.position[1] * dz / dx
        return z_cross - lens.last_z

    def effective_focal_length(self, lam_nm: float, height_mm: float = 1e-3) -> float:
        lens = self.build(0.0)
        from .tracer import trace

        r = trace(Ray((-1.0, height_mm), (1.0, 0.0), lam_nm, Pol.H),
                  OpticalSystem([lens], lens.last_z + 1.0), strict=True)
        return -height_mm / (r.direction[1] / r.direction[0])


def _float(entry, key, default=None):
    try:
        val = entry.get(key, default)
        if val is None:
            raise KeyError(key)
        return float(val)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"lens surface field {key!r} missing or not numeric in {entry!r}") from exc


def parse_prescription(payload, name: str = "lens") -> LensPrescription:
    if not isinstance(payload, dict) or not isinstance(payload.get("surfaces"), list):
        raise ConfigError("lens prescription needs a 'surfaces' list")
    specs = []
    for entry in payload["surfaces"]:
        mat_name = str(entry.get("material", "air"))
        material = None if mat_name.lower() in AIR_NAMES else get_material(mat_name)
        coeffs = entry.get("asphere_coeffs", []) or []
        spec = SurfaceSpec(
            radius_mm=_float(entry, "radius_mm"),
            conic=_float(entry, "conic", 0.0),
            asphere_coeffs=tuple(float(c) for c in coeffs),
            thickness_mm=_float(entry, "thickness_mm", 0.0),
            material=material,
            aperture_mm=_float(entry, "aperture_mm", math.inf),
        )
        if spec.thickness_mm < 0 or spec.aperture_mm <= 0:
            raise ConfigError(f"bad thickness or aperture in {entry!r}")
        specs.append(spec)
    if len(specs) < 2:
        raise ConfigError("a lens needs at least two surfaces")
    if specs[-1].material is not None:
        raise ConfigError("the last lens surface must exit into air")
    for s in specs:
        if s.radius_mm != 0 and np.isfinite(s.aperture_mm):
            c = 1.0 / s.radius_mm
            if (1.0 + s.conic) * c * c * s.aperture_mm**2 >= 1.0:
                raise ConfigError("sag is not single-valued over the aperture")
    return LensPrescription(payload.get("name", name), tuple(specs), payload.get("notes", ""))


def load_prescription(path: str | Path) -> LensPrescription:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_prescription(payload, Path(path).stem)


def shipped_prescription(name: str) -> LensPrescription:
    """``asphere`` or ``doublet``."""
    fname = f"lens_{name}.json"
    try:
        text = resources.files("spdcfid.data").joinpath(fname).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"no shipped lens {name!r}") from None
    return parse_prescription(json.loads(text), name)
