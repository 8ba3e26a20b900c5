"""Type-I phase matching, conversion efficiency and SPDC pair sampling."""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .dispersion import (
    CrystalOrientation,
    Material,
    effective_index_rad,
    refractive_index,
)
from .errors import ConfigError, NoPhaseMatching, PhysicsError, SamplingError

#: Events per independently seeded partition; fixed so output never depends on worker count.
CHUNK_SIZE = 4096
#: Rejection-sampling candidates allowed per accepted event.
MAX_DRAWS_PER_EVENT = 10_000


class Origin(str, enum.Enum):
    CRYSTAL_I = "crystal_I"
    CRYSTAL_II = "crystal_II"


@dataclass(frozen=True)
class PumpConfig:
    wavelength_nm: float = 405.0
    waist_um: float = 100.0
    #: Angular-frequency linewidth in rad/s; 0 means CW.
    linewidth_rad_s: float = 0.0
    polarization_deg: float = 45.0

    def __post_init__(self):
        if self.wavelength_nm <= 0 or self.waist_um <= 0 or self.linewidth_rad_s < 0:
            raise ConfigError(f"invalid pump parameters {self}")

    @property
    def sigma_x_um(self) -> float:
        # pair creation follows the intensity exp(-2 x^2 / w^2)
        return self.waist_um / 2.0

    @property
    def coherence_time_fs(self) -> float:
        """Width parameter of the pump envelope on the sum-time coordinate.

        Equal to 2/linewidth for the Gaussian pump spectrum exp(-(Omega/linewidth)^2).
        """
        if self.linewidth_rad_s == 0.0:
            return math.inf
        return 2.0 / (self.linewidth_rad_s * 1e-15)

    @property
    def angular_frequency_rad_fs(self) -> float:
        return 2.0 * math.pi * 299.792458 / self.wavelength_nm

    @property
    def fraction_crystal_I(self) -> float:
        # V component drives crystal I (its extraordinary axis is vertical)
        return math.sin(math.radians(self.polarization_deg)) ** 2


@dataclass(frozen=True)
class SpdcCrystal:
    material: Material
    orientation: CrystalOrientation
    length_mm: float

    def __post_init__(self):
        if self.length_mm < 0:
            raise ConfigError("crystal length must be non-negative")
        if not self.material.is_uniaxial:
            raise ConfigError(f"{self.material.name} is isotropic; SPDC needs a uniaxial crystal")

    @property
    def cut_angle_rad(self) -> float:
        return math.radians(self.orientation.cut_angle_deg)


@dataclass(frozen=True)
class PairEvent:
    origin: Origin
    birth_z_mm: float
    transverse_x_um: float
    lambda_s_nm: float
    lambda_i_nm: float
    alpha_s_deg: float
    alpha_i_deg: float
    weight: float = 1.0

    @property
    def polarization(self) -> str:
        return "H" if self.origin is Origin.CRYSTAL_I else "V"


@dataclass
class PairBatch:
    """Column store for many pair events."""

    origin_is_I: np.ndarray
    birth_z_mm: np.ndarray
    transverse_x_um: np.ndarray
    lambda_s_nm: np.ndarray
    lambda_i_nm: np.ndarray
    alpha_s_deg: np.ndarray
    alpha_i_deg: np.ndarray
    weight: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weight is None:
            self.weight = np.ones_like(self.birth_z_mm)

    def __len__(self) -> int:
        return len(self.birth_z_mm)

    @classmethod
    def from_events(cls, events) -> "PairBatch":
        events = list(events)
        return cls(
            origin_is_I=np.array([e.origin is Origin.CRYSTAL_I for e in events], dtype=bool),
            birth_z_mm=np.array([e.birth_z_mm for e in events], dtype=float),
            transverse_x_um=np.array([e.transverse_x_um for e in events], dtype=float),
            lambda_s_nm=np.array([e.lambda_s_nm for e in events], dtype=float),
            lambda_i_nm=np.array([e.lambda_i_nm for e in events], dtype=float),
            alpha_s_deg=np.array([e.alpha_s_deg for e in events], dtype=float),
            alpha_i_deg=np.array([e.alpha_i_deg for e in events], dtype=float),
            weight=np.array([e.weight for e in events], dtype=float),
        )

    @classmethod
    def concatenate(cls, batches) -> "PairBatch":
        batches = list(batches)
        names = ("origin_is_I", "birth_z_mm", "transverse_x_um", "lambda_s_nm",
                 "lambda_i_nm", "alpha_s_deg", "alpha_i_deg", "weight")
        return cls(**{k: np.concatenate([getattr(b, k) for b in batches]) for k in names})

    def to_events(self) -> list[PairEvent]:
        return [
            PairEvent(
                origin=Origin.CRYSTAL_I if self.origin_is_I[k] else Origin.CRYSTAL_II,
                birth_z_mm=float(self.birth_z_mm[k]),
                transverse_x_um=float(self.transverse_x_um[k]),
                lambda_s_nm=float(self.lambda_s_nm[k]),
                lambda_i_nm=float(self.lambda_i_nm[k]),
                alpha_s_deg=float(self.alpha_s_deg[k]),
                alpha_i_deg=float(self.alpha_i_deg[k]),
                weight=float(self.weight[k]),
            )
            for k in range(len(self))
        ]


# ---------------------------------------------------------------------------
# kinematics


def idler_wavelength(lambda_p_nm, lambda_s_nm):
    """Energy conservation for a CW pump."""
    lambda_s_nm = np.asarray(lambda_s_nm, dtype=float)
    if np.any(lambda_s_nm <= lambda_p_nm):
        raise PhysicsError("signal wavelength must exceed the pump wavelength")
    return 1.0 / (1.0 / lambda_p_nm - 1.0 / lambda_s_nm)


def _wavenumber(n, lambda_nm):
    """rad/mm"""
    return 2.0e6 * np.pi * n / lambda_nm


def _pump_wavenumber(pump_nm: float, crystal: SpdcCrystal) -> float:
    mat = crystal.material
    n_o = refractive_index(mat, "o", pump_nm * 1e-3)
    n_e = refractive_index(mat, "e", pump_nm * 1e-3)
    return float(_wavenumber(effective_index_rad(n_o, n_e, crystal.cut_angle_rad), pump_nm))


def idler_angle(crystal: SpdcCrystal, lambda_s_nm, lambda_i_nm, alpha_s_deg):
    """Internal idler angle balancing the signal's transverse momentum (pump on axis)."""
    mat = crystal.material
    k_s = _wavenumber(refractive_index(mat, "o", np.asarray(lambda_s_nm) * 1e-3), lambda_s_nm)
    k_i = _wavenumber(refractive_index(mat, "o", np.asarray(lambda_i_nm) * 1e-3), lambda_i_nm)
    sin_i = -k_s * np.sin(np.radians(alpha_s_deg)) / k_i
    if np.any(np.abs(sin_i) > 1.0):
        raise PhysicsError("no idler direction balances the signal transverse momentum")
    return np.degrees(np.arcsin(sin_i))


def external_angle(material: Material, lambda_nm, alpha_internal_deg):
    """Angle in air after refraction out of a facet normal to z (ordinary wave)."""
    n = refractive_index(material, "o", np.asarray(lambda_nm) * 1e-3)
    s = n * np.sin(np.radians(alpha_internal_deg))
    if np.any(np.abs(s) > 1.0):
        raise PhysicsError("ray is totally reflected at the exit facet")
    return np.degrees(np.arcsin(s))


def phase_mismatch(pump: PumpConfig, crystal: SpdcCrystal, lambda_s_nm, lambda_i_nm,
                   alpha_s_deg, alpha_i_deg):
    """Longitudinal mismatch k_p,z - k_s,z - k_i,z in rad/mm.

    The pump runs along z as an extraordinary wave at the cut angle; signal and
    idler are ordinary waves at internal angles ``alpha_*`` from the pump.
    """
    mat = crystal.material
    lam_s = np.asarray(lambda_s_nm, dtype=float)
    lam_i = np.asarray(lambda_i_nm, dtype=float)
    a_s = np.radians(alpha_s_deg)
    a_i = np.radians(alpha_i_deg)
    n_s = refractive_index(mat, "o", lam_s * 1e-3)
    n_i = refractive_index(mat, "o", lam_i * 1e-3)
    if np.any(np.abs(n_s * np.sin(a_s)) > 1.0) or np.any(np.abs(n_i * np.sin(a_i)) > 1.0):
        raise PhysicsError("emission angle cannot refract out of the crystal")
    k_p = _pump_wavenumber(pump.wavelength_nm, crystal)
    dk = k_p - _wavenumber(n_s, lam_s) * np.cos(a_s) - _wavenumber(n_i, lam_i) * np.cos(a_i)
    return float(dk) if np.ndim(dk) == 0 else dk


def pm_efficiency(dk, length_mm):
    """sinc^2(dk L / 2); np.sinc is sin(pi x)/(pi x)."""
    if length_mm <= 0:
        raise ValueError("interaction length must be positive")
    val = np.sinc(np.asarray(dk, dtype=float) * length_mm / (2.0 * np.pi)) ** 2
    return float(val) if np.ndim(val) == 0 else val


def _check_energy(lambda_p_nm, lambda_s_nm, lambda_i_nm, rtol=1e-9):
    if min(lambda_s_nm, lambda_i_nm) <= lambda_p_nm:
        raise NoPhaseMatching("daughter wavelengths must exceed the pump wavelength")
    mismatch = abs(1.0 / lambda_s_nm + 1.0 / lambda_i_nm - 1.0 / lambda_p_nm)
    if mismatch > rtol / lambda_p_nm:
        raise NoPhaseMatching(
            f"energy not conserved: 1/{lambda_s_nm} + 1/{lambda_i_nm} != 1/{lambda_p_nm}"
        )


def phase_matching_angle(lambda_p_nm: float, lambda_s_nm: float, lambda_i_nm: float,
                         material: Material) -> float:
    """Collinear type-I cut angle in degrees."""
    _check_energy(lambda_p_nm, lambda_s_nm, lambda_i_nm)
    lp, ls, li = lambda_p_nm * 1e-3, lambda_s_nm * 1e-3, lambda_i_nm * 1e-3
    n_po = refractive_index(material, "o", lp)
    n_pe = refractive_index(material, "e", lp)
    target = refractive_index(material, "o", ls) / ls + refractive_index(material, "o", li) / li

    def residual(theta):
        return effective_index_rad(n_po, n_pe, theta) / lp - target

    lo, hi = 0.0, 0.5 * math.pi
    if residual(lo) * residual(hi) > 0:
        raise NoPhaseMatching(
            f"no collinear type-I solution in {material.name} for {lambda_p_nm} -> "
            f"{lambda_s_nm} + {lambda_i_nm} nm"
        )
    theta = brentq(residual, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    return math.degrees(theta)


# ---------------------------------------------------------------------------
# efficiency map


@dataclass
class EfficiencyMap:
    lambda_nm: np.ndarray
    alpha_deg: np.ndarray
    #: shape (len(lambda_nm), len(alpha_deg))
    values: np.ndarray
    material: Material | None = None

    def external_alpha(self) -> np.ndarray:
        """External emission angle per cell, degrees."""
        lam = np.broadcast_to(self.lambda_nm[:, None], self.values.shape)
        alpha = np.broadcast_to(self.alpha_deg[None, :], self.values.shape)
        return external_angle(self.material, lam, alpha)

    def band_capture_fraction(self, bands_nm, max_external_deg: float) -> float:
        """Efficiency-weighted fraction of in-band cells within the collection angle."""
        lam = self.lambda_nm[:, None]
        in_band = np.zeros(self.values.shape, dtype=bool)
        for lo, hi in bands_nm:
            in_band |= np.broadcast_to((lam >= lo) & (lam <= hi), self.values.shape)
        w = np.where(in_band, self.values, 0.0)
        total = w.sum()
        if total == 0:
            raise PhysicsError("no efficiency inside the requested bands")
        inside = np.abs(self.external_alpha()) <= max_external_deg
        return float(w[inside].sum() / total)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["lambda_nm", "alpha_deg", "efficiency"])
            for i, lam in enumerate(self.lambda_nm):
                for j, alpha in enumerate(self.alpha_deg):
                    writer.writerow([repr(float(lam)), repr(float(alpha)), repr(float(self.values[i, j]))])


def emission_map(pump: PumpConfig, crystal: SpdcCrystal, lambda_grid_nm, alpha_grid_deg) -> EfficiencyMap:
    lam = np.asarray(lambda_grid_nm, dtype=float)
    alpha = np.asarray(alpha_grid_deg, dtype=float)
    if lam.size == 0 or alpha.size == 0:
        raise ConfigError("emission map grids must be non-empty")
    if np.any(np.diff(lam) <= 0) or np.any(np.diff(alpha) <= 0):
        raise ConfigError("emission map grids must be strictly increasing")
    ls, al = np.meshgrid(lam, alpha, indexing="ij")
    li = idler_wavelength(pump.wavelength_nm, ls)
    ai = idler_angle(crystal, ls, li, al)
    dk = phase_mismatch(pump, crystal, ls, li, al, ai)
    return EfficiencyMap(lam, alpha, pm_efficiency(dk, crystal.length_mm), crystal.material)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SamplingWindow:
    """Support of the (signal wavelength, internal signal angle) proposal.

    ``max_external_deg`` keeps only pairs whose signal and idler both leave the
    crystal within that angle of the axis (the collection cone).
    """

    lambda_min_nm: float
    lambda_max_nm: float
    alpha_max_deg: float
    max_external_deg: float = math.inf

    def __post_init__(self):
        if not (self.lambda_max_nm > self.lambda_min_nm and self.alpha_max_deg >= 0
                and self.max_external_deg >= 0):
            raise ConfigError(f"invalid sampling window {self}")


def _sample_chunk(args) -> PairBatch:
    seed, index, n, pump, crystals, window = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    x = rng.normal(0.0, pump.sigma_x_um, n)
    origin_is_I = rng.random(n) < pump.fraction_crystal_I
    u_z = rng.random(n)
    length = np.where(origin_is_I, crystals[0].length_mm, crystals[1].length_mm)
    birth_z = u_z * length

    lam_s = np.empty(n)
    alpha_s = np.empty(n)
    filled = 0
    drawn = 0
    cap = MAX_DRAWS_PER_EVENT * n
    while filled < n:
        if drawn >= cap:
            raise SamplingError(
                f"rejection sampling exceeded {MAX_DRAWS_PER_EVENT} draws per event; "
                "efficiency map is degenerate over the sampling window"
            )
        m = min(max(4 * (n - filled), 256), cap - drawn)
        drawn += m
        cand_l = rng.uniform(window.lambda_min_nm, window.lambda_max_nm, m)
        cand_a = rng.uniform(-window.alpha_max_deg, window.alpha_max_deg, m)
        u = rng.random(m)
        # both crystals share material and cut, so one crystal's kinematics serve both
        cand_li = idler_wavelength(pump.wavelength_nm, cand_l)
        cand_ai = idler_angle(crystals[0], cand_l, cand_li, cand_a)
        eff = pm_efficiency(
            phase_mismatch(pump, crystals[0], cand_l, cand_li, cand_a, cand_ai), crystals[0].length_mm
        )
        if math.isfinite(window.max_external_deg):
            mat = crystals[0].material
            ext_s = external_angle(mat, cand_l, cand_a)
            ext_i = external_angle(mat, cand_li, cand_ai)
            inside = np.maximum(np.abs(ext_s), np.abs(ext_i)) <= window.max_external_deg
            eff = np.where(inside, eff, 0.0)
        ok = np.flatnonzero(u < eff)[: n - filled]
        lam_s[filled:filled + ok.size] = cand_l[ok]
        alpha_s[filled:filled + ok.size] = cand_a[ok]
        filled += ok.size

    lam_i = idler_wavelength(pump.wavelength_nm, lam_s)
    alpha_i = idler_angle(crystals[0], lam_s, lam_i, alpha_s)
    return PairBatch(origin_is_I, birth_z, x, lam_s, lam_i, alpha_s, alpha_i)


def _partition(n: int) -> list[int]:
    sizes = [CHUNK_SIZE] * (n // CHUNK_SIZE)
    if n % CHUNK_SIZE:
        sizes.append(n % CHUNK_SIZE)
    return sizes


def sample_pair_batch(n: int, pump: PumpConfig, crystals, seed: int, window: SamplingWindow,
                      workers: int = 1) -> PairBatch:
    """Draw ``n`` pair events as columns.

    The count is split into fixed-size partitions, each seeded from
    ``SeedSequence(seed, spawn_key=(k,))``, so the result does not depend on
    ``workers``.
    """
    if n < 1:
        raise ConfigError("need at least one pair event")
    crystals = tuple(crystals)
    if len(crystals) != 2:
        raise ConfigError("exactly two SPDC crystals expected")
    a, b = crystals
    if a.material != b.material or a.orientation.cut_angle_deg != b.orientation.cut_angle_deg:
        raise ConfigError("crossed crystals must share material and cut angle")
    jobs = [(seed, k, size, pump, crystals, window) for k, size in enumerate(_partition(n))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sample_chunk, jobs))
    else:
        parts = [_sample_chunk(job) for job in jobs]
    return PairBatch.concatenate(parts)


def sample_pairs(n: int, pump: PumpConfig, crystals, seed: int, window: SamplingWindow,
                 workers: int = 1) -> list[PairEvent]:
    return sample_pair_batch(n, pump, crystals, seed, window, workers).to_events()
