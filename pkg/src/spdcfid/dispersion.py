"""Refractive indices of uniaxial crystals and isotropic glasses.

All wavelengths are vacuum wavelengths in micrometres. Angles in the public
functions are in degrees; the ``*_rad`` helpers used by the tracer take radians.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, IsotropicMaterialError, WavelengthOutOfRange

#: Speed of light in mm/fs.
C_MM_PER_FS = 2.99792458e-4
#: Speed of light in um/fs.
C_UM_PER_FS = 0.299792458


class Wave(str, enum.Enum):
    ORDINARY = "o"
    EXTRAORDINARY = "e"

    @classmethod
    def parse(cls, value: "Wave | str") -> "Wave":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("o", "ordinary"):
            return cls.ORDINARY
        if key in ("e", "extraordinary"):
            return cls.EXTRAORDINARY
        raise ValueError(f"unknown polarization eigenmode {value!r}")


class AxisPlane(str, enum.Enum):
    """Plane containing the optic axis and the z axis.

    A horizontal plane coincides with the meridional (z, x) plane, so H light is
    extraordinary; a vertical plane makes V light extraordinary.
    """

    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class SellmeierCoefficients:
    """n^2 = A + B/(lam^2 - C) + E lam^2 with lam in um."""

    A: float
    B: float
    C: float
    E: float

    def __post_init__(self):
        if self.B < 0 or self.C < 0:
            raise ConfigError(f"Sellmeier coefficients need B >= 0 and C >= 0, got {self}")

    def n_squared(self, lam_um):
        l2 = np.asarray(lam_um, dtype=float) ** 2
        if np.any(l2 <= self.C):
            raise WavelengthOutOfRange("wavelength at or below the Sellmeier pole")
        return self.A + self.B / (l2 - self.C) + self.E * l2

    def index(self, lam_um):
        return np.sqrt(self.n_squared(lam_um))

    def dn_dlam(self, lam_um):
        """Analytic derivative of n with respect to wavelength (1/um)."""
        lam = np.asarray(lam_um, dtype=float)
        l2 = lam * lam
        d_n2 = -2.0 * lam * self.B / (l2 - self.C) ** 2 + 2.0 * self.E * lam
        return d_n2 / (2.0 * np.sqrt(self.n_squared(lam)))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.A, self.B, self.C, self.E)


@dataclass(frozen=True)
class Material:
    name: str
    ordinary: SellmeierCoefficients
    extraordinary: SellmeierCoefficients | None = None
    window_um: tuple[float, float] = (0.2, 5.0)
    source: str = ""

    @property
    def is_uniaxial(self) -> bool:
        return self.extraordinary is not None

    def coefficients(self, pol: Wave | str) -> SellmeierCoefficients:
        pol = Wave.parse(pol)
        if pol is Wave.ORDINARY:
            return self.ordinary
        if self.extraordinary is None:
            raise IsotropicMaterialError(f"{self.name} is isotropic; no extraordinary index")
        return self.extraordinary

    def check_window(self, lam_um, strict: bool = False) -> None:
        lam = np.asarray(lam_um, dtype=float)
        lo, hi = self.window_um
        bad = (lam <= lo) | (lam >= hi) if strict else (lam < lo) | (lam > hi)
        if np.any(bad):
            raise WavelengthOutOfRange(
                f"{self.name}: wavelength {np.min(lam):.6g}-{np.max(lam):.6g} um outside "
                f"validity window [{lo}, {hi}] um"
            )


@dataclass(frozen=True)
class CrystalOrientation:
    """Cut angle of the optic axis against the facet normal.

    ``flipped`` mirrors the axis about the facet normal (axis tilted towards -x
    instead of +x), which reverses the walk-off direction.
    """

    cut_angle_deg: float
    plane: AxisPlane = AxisPlane.HORIZONTAL
    flipped: bool = False

    def __post_init__(self):
        if not 0.0 <= self.cut_angle_deg <= 90.0:
            raise ConfigError(f"cut angle must be within [0, 90] deg, got {self.cut_angle_deg}")
        object.__setattr__(self, "plane", AxisPlane(self.plane))

    @property
    def axis_sign(self) -> float:
        return -1.0 if self.flipped else 1.0


# ---------------------------------------------------------------------------
# materials database


def _coeffs_from_json(entry) -> SellmeierCoefficients | None:
    if entry is None:
        return None
    try:
        return SellmeierCoefficients(float(entry["A"]), float(entry["B"]), float(entry["C"]), float(entry["E"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad Sellmeier entry {entry!r}") from exc


def parse_materials(payload) -> dict[str, Material]:
    entries = payload["materials"] if isinstance(payload, dict) else payload
    out: dict[str, Material] = {}
    for entry in entries:
        try:
            name = entry["name"]
            lo, hi = entry["window_um"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad material entry {entry!r}") from exc
        out[name] = Material(
            name=name,
            ordinary=_coeffs_from_json(entry["ordinary"]),
            extraordinary=_coeffs_from_json(entry.get("extraordinary")),
            window_um=(float(lo), float(hi)),
            source=entry.get("source", ""),
        )
    return out


def load_materials(path: str | Path | None = None) -> dict[str, Material]:
    """Read a materials database. ``None`` loads the shipped one."""
    if path is None:
        return dict(_default_materials())
    with open(path, encoding="utf-8") as fh:
        return parse_materials(json.load(fh))


@lru_cache(maxsize=None)
def _default_materials() -> dict[str, Material]:
    text = resources.files("spdcfid.data").joinpath("materials.json").read_text(encoding="utf-8")
    return parse_materials(json.loads(text))


def get_material(name: str) -> Material:
    db = _default_materials()
    try:
        return db[name]
    except KeyError:
        raise ConfigError(f"unknown material {name!r}; known: {sorted(db)}") from None


# ---------------------------------------------------------------------------
# indices


def refractive_index(material: Material, pol: Wave | str, lam_um):
    material.check_window(lam_um)
    n = material.coefficients(pol).index(lam_um)
    return float(n) if np.ndim(n) == 0 else n


def effective_index_rad(n_o, n_e, theta_rad):
    c = np.cos(theta_rad) / n_o
    s = np.sin(theta_rad) / n_e
    return 1.0 / np.sqrt(c * c + s * s)


def effective_index(n_o, n_e, theta_deg):
    """Index of an extraordinary wave whose normal makes ``theta_deg`` with the optic axis."""
    theta = np.asarray(theta_deg, dtype=float)
    if np.any((theta < 0.0) | (theta > 90.0)):
        raise ValueError("theta must lie in [0, 90] degrees")
    n = effective_index_rad(n_o, n_e, np.radians(theta))
    return float(n) if np.ndim(n) == 0 else n


def walkoff_displacement_rad(n_o, n_e, theta_rad, length_mm):
    n_eff = effective_index_rad(n_o, n_e, theta_rad)
    return 0.5 * length_mm * n_eff**2 * (1.0 / n_o**2 - 1.0 / n_e**2) * np.sin(2.0 * theta_rad)


def walkoff_displacement(material: Material, lam_um, theta_deg, length_mm):
    """Signed transverse walk-off (mm) of an extraordinary ray after ``length_mm``.

    Negative for negative uniaxial crystals; see the materials file header for
    the direction convention used by the tracer.
    """
    if not material.is_uniaxial:
        raise IsotropicMaterialError(f"{material.name} has no walk-off")
    theta = np.asarray(theta_deg, dtype=float)
    if np.any((theta < 0.0) | (theta > 90.0)):
        raise ValueError("theta must lie in [0, 90] degrees")
    material.check_window(lam_um)
    n_o = material.ordinary.index(lam_um)
    n_e = material.extraordinary.index(lam_um)
    rho = walkoff_displacement_rad(n_o, n_e, np.radians(theta), length_mm)
    return float(rho) if np.ndim(rho) == 0 else rho


def group_index(material: Material, pol: Wave | str, lam_um):
    """n_g = n - lam dn/dlam, derivative taken analytically from the Sellmeier form."""
    material.check_window(lam_um, strict=True)
    coeffs = material.coefficients(pol)
    ng = coeffs.index(lam_um) - np.asarray(lam_um, dtype=float) * coeffs.dn_dlam(lam_um)
    return float(ng) if np.ndim(ng) == 0 else ng


def effective_group_index_rad(material: Material, lam_um, theta_rad):
    """Group index of the extraordinary wave at fixed angle to the optic axis."""
    if not material.is_uniaxial:
        raise IsotropicMaterialError(f"{material.name} has no extraordinary wave")
    lam = np.asarray(lam_um, dtype=float)
    n_o = material.ordinary.index(lam)
    n_e = material.extraordinary.index(lam)
    d_o = material.ordinary.dn_dlam(lam)
    d_e = material.extraordinary.dn_dlam(lam)
    c2 = np.cos(theta_rad) ** 2
    s2 = np.sin(theta_rad) ** 2
    n_eff = 1.0 / np.sqrt(c2 / n_o**2 + s2 / n_e**2)
    d_eff = n_eff**3 * (c2 * d_o / n_o**3 + s2 * d_e / n_e**3)
    return n_eff - lam * d_eff


def coherence_time(lam_center_um, dlam_um) -> float:
    """Coherence time in fs for a rectangular spectrum: lam^2 / (c dlam)."""
    if dlam_um <= 0:
        raise ValueError("spectral linewidth must be positive")
    return float(lam_center_um) ** 2 / (C_UM_PER_FS * float(dlam_um))
