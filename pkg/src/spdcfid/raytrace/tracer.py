"""Ray-level and batch tracing, pump leg timing and pair-event arrival records."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..dispersion import (
    C_MM_PER_FS,
    AxisPlane,
    effective_group_index_rad,
    effective_index_rad,
    group_index,
    refractive_index,
)
from ..errors import ConfigError, RaySurfaceMiss, TotalInternalReflection
from ..spdc import Origin, PairBatch, PairEvent, PumpConfig
from . import backend
from .system import (
    ALIVE,
    DEAD_TIR,
    STATUS_NAMES,
    CrystalSlab,
    OpticalSystem,
    Pol,
    Ray,
    RayBatch,
    SlabRole,
)


class Timing(str, enum.Enum):
    PHASE = "phase"
    GROUP = "group"


def _group(timing) -> bool:
    return Timing(timing) is Timing.GROUP


def _check_wavelengths(system: OpticalSystem, lam_nm) -> None:
    lam_um = np.asarray(lam_nm, dtype=float) * 1e-3
    seen = set()
    for s in system.surfaces:
        m = s.after.material
        if m is not None and m.name not in seen:
            seen.add(m.name)
            m.check_window(lam_um)


def _first_surface_after(system: OpticalSystem, z: float) -> int:
    for k, s in enumerate(system.surfaces):
        if s.z >= z - 1e-12:
            return k
    return len(system.surfaces)


def trace_batch(rays: RayBatch, system: OpticalSystem, timing=Timing.PHASE,
                record: bool = False, backend_name: str | None = None):
    """Trace a column batch in place; returns the batch and optional vertices."""
    tab = system.table()
    verts = None
    if record:
        verts = np.full((len(rays), len(tab.z) + 2, 2), np.nan)
    backend.trace_arrays(
        tab, rays.z, rays.x, rays.dz, rays.dx, rays.lam_um, rays.pol_h, rays.t, rays.start,
        rays.status, _group(timing), verts, backend_name,
    )
    return rays, verts


def _single(ray: Ray, start: int) -> RayBatch:
    return RayBatch(
        z=np.array([ray.position[0]], dtype=float),
        x=np.array([ray.position[1]], dtype=float),
        dz=np.array([ray.direction[0]], dtype=float),
        dx=np.array([ray.direction[1]], dtype=float),
        lam_um=np.array([ray.wavelength_nm * 1e-3]),
        pol_h=np.array([ray.pol is Pol.H]),
        t=np.array([ray.t_fs], dtype=float),
        start=np.array([start]),
    )


def _to_ray(b: RayBatch, template: Ray) -> Ray:
    st = int(b.status[0])
    return Ray(
        position=(float(b.z[0]), float(b.x[0])),
        direction=(float(b.dz[0]), float(b.dx[0])),
        wavelength_nm=template.wavelength_nm,
        pol=template.pol,
        t_fs=float(b.t[0]),
        alive=st == ALIVE,
        reason=STATUS_NAMES[st],
    )


def trace(ray: Ray, system: OpticalSystem, timing=Timing.PHASE, strict: bool = False) -> Ray:
    """Trace one ray from its position to the collection plane.

    Dead rays come back with ``alive=False`` and a reason; ``strict`` raises
    instead.
    """
    if not ray.alive:
        return ray
    _check_wavelengths(system, ray.wavelength_nm)
    start = _first_surface_after(system, ray.position[0])
    b, _ = trace_batch(_single(ray, start), system, timing)
    out = _to_ray(b, ray)
    if strict and not out.alive:
        if b.status[0] == DEAD_TIR:
            raise TotalInternalReflection("ray totally reflected")
        raise RaySurfaceMiss(f"ray lost: {out.reason}")
    return out


def traverse_slab(ray: Ray, slab: CrystalSlab, timing=Timing.PHASE) -> Ray:
    """Carry a ray through one slab (or its remainder, when born inside) to the exit facet."""
    system = OpticalSystem([slab], plane_z=slab.exit_z)
    z = ray.position[0]
    if not slab.entry_z - 1e-12 <= z <= slab.exit_z + 1e-12:
        raise ConfigError("ray is not at or inside the slab")
    start = 1 if z > slab.entry_z else 0
    _check_wavelengths(system, ray.wavelength_nm)
    b, _ = trace_batch(_single(ray, start), system, timing)
    out = _to_ray(b, ray)
    if not out.alive and b.status[0] == DEAD_TIR:
        raise TotalInternalReflection("ray totally reflected at a slab facet")
    return out


# ---------------------------------------------------------------------------
# pump leg


def _slab_index_on_axis(slab: CrystalSlab, lam_um: float, extraordinary: bool, timing) -> float:
    mat = slab.material
    theta = math.radians(slab.orientation.cut_angle_deg)
    if _group(timing):
        if extraordinary:
            return float(effective_group_index_rad(mat, lam_um, theta))
        return group_index(mat, "o", lam_um)
    n_o = refractive_index(mat, "o", lam_um)
    if not extraordinary:
        return n_o
    return float(effective_index_rad(n_o, refractive_index(mat, "e", lam_um), theta))


def _pump_extraordinary(slab: CrystalSlab, pump_pol: Pol) -> bool:
    if not slab.material.is_uniaxial:
        return False
    horizontal = slab.orientation.plane is AxisPlane.HORIZONTAL
    return (pump_pol is Pol.H) == horizontal


def pump_leg(system: OpticalSystem, pump: PumpConfig, birth_z, pump_pol: Pol | str,
             timing=Timing.PHASE):
    """Pump travel time from z = 0 to ``birth_z`` and its walk-off in x.

    The pump runs on axis; ``pump_pol`` is the pump component driving the
    crystal of birth (V for crystal I, H for crystal II).
    """
    pump_pol = Pol(pump_pol)
    z = np.asarray(birth_z, dtype=float)
    lam_um = pump.wavelength_nm * 1e-3
    in_media = np.zeros_like(z)
    t = np.zeros_like(z)
    shift = np.zeros_like(z)
    for slab in system.slabs:
        seg = np.clip(z - slab.entry_z, 0.0, slab.length)
        if not np.any(seg > 0):
            continue
        e = _pump_extraordinary(slab, pump_pol)
        n = _slab_index_on_axis(slab, lam_um, e, timing)
        t = t + n * seg / C_MM_PER_FS
        in_media = in_media + seg
        if e and slab.orientation.plane is AxisPlane.HORIZONTAL:
            mat = slab.material
            n_o = refractive_index(mat, "o", lam_um)
            n_e = refractive_index(mat, "e", lam_um)
            theta = slab.orientation.axis_sign * math.radians(slab.orientation.cut_angle_deg)
            n_eff2 = effective_index_rad(n_o, n_e, theta) ** 2
            shift = shift + 0.5 * seg * n_eff2 * (1 / n_o**2 - 1 / n_e**2) * math.sin(2 * theta)
    t = t + (z - in_media) / C_MM_PER_FS
    return t, shift


# ---------------------------------------------------------------------------
# pair events


@dataclass
class ArrivalRecords:
    """Per-photon arrival data at the collection plane under one origin hypothesis."""

    t_s: np.ndarray  # fs, relative to the reference chief ray
    t_i: np.ndarray
    x_s: np.ndarray  # mm
    x_i: np.ndarray
    status_s: np.ndarray
    status_i: np.ndarray

    @property
    def alive(self) -> np.ndarray:
        return (self.status_s == ALIVE) & (self.status_i == ALIVE)


def _birth_slab(system: OpticalSystem, hypothesis: Origin) -> CrystalSlab:
    return system.slab(SlabRole.SPDC_I if hypothesis is Origin.CRYSTAL_I else SlabRole.SPDC_II)


def _origin_length(system: OpticalSystem, pairs: PairBatch) -> np.ndarray:
    return np.where(pairs.origin_is_I, system.slab(SlabRole.SPDC_I).length,
                    system.slab(SlabRole.SPDC_II).length)


def _raw_arrivals(system, pump, hypothesis, frac, x0_mm, lam_s, lam_i, a_s, a_i, timing,
                  record=False, backend_name=None):
    slab = _birth_slab(system, hypothesis)
    pump_pol = Pol.V if hypothesis is Origin.CRYSTAL_I else Pol.H
    daughter_h = hypothesis is Origin.CRYSTAL_I
    z_b = slab.entry_z + frac * slab.length
    t0, shift = pump_leg(system, pump, z_b, pump_pol, timing)
    start = system.slab_exit_surface(slab)
    n = len(z_b)
    lam = np.concatenate([lam_s, lam_i]) * 1e-3
    alpha = np.radians(np.concatenate([a_s, a_i]))
    rays = RayBatch(
        z=np.concatenate([z_b, z_b]),
        x=np.concatenate([x0_mm + shift, x0_mm + shift]),
        dz=np.cos(alpha),
        dx=np.sin(alpha),
        lam_um=lam,
        pol_h=np.full(2 * n, daughter_h),
        t=np.concatenate([t0, t0]),
        start=np.full(2 * n, start),
    )
    rays, verts = trace_batch(rays, system, timing, record, backend_name)
    return rays, verts, n


def reference_time(system: OpticalSystem, pump: PumpConfig, timing=Timing.PHASE,
                   backend_name: str | None = None) -> float:
    """Arrival time of the axial chief ray at twice the pump wavelength, born mid crystal I."""
    lam = np.array([2.0 * pump.wavelength_nm])
    zero = np.zeros(1)
    rays, _, _ = _raw_arrivals(system, pump, Origin.CRYSTAL_I, np.array([0.5]), zero, lam, lam,
                               zero, zero, timing, backend_name=backend_name)
    if rays.status[0] != ALIVE:
        raise RaySurfaceMiss("the axial reference ray does not reach the collection plane")
    return float(rays.t[0])


def trace_pair_batch(pairs: PairBatch, system: OpticalSystem, pump: PumpConfig,
                     hypothesis: Origin | str, timing=Timing.PHASE, t_ref: float | None = None,
                     backend_name: str | None = None) -> ArrivalRecords:
    """Trace signal and idler of every event as if born in the ``hypothesis`` crystal.

    The birth depth keeps its fractional position, so the same kinematics can
    be replayed in either crystal.
    """
    hypothesis = Origin(hypothesis)
    _check_wavelengths(system, np.concatenate([pairs.lambda_s_nm, pairs.lambda_i_nm]))
    if t_ref is None:
        t_ref = reference_time(system, pump, timing, backend_name)
    length = _origin_length(system, pairs)
    frac = np.divide(pairs.birth_z_mm, length, out=np.full(len(pairs), 0.5), where=length > 0)
    rays, _, n = _raw_arrivals(system, pump, hypothesis, frac, pairs.transverse_x_um * 1e-3,
                               pairs.lambda_s_nm, pairs.lambda_i_nm, pairs.alpha_s_deg,
                               pairs.alpha_i_deg, timing, backend_name=backend_name)
    return ArrivalRecords(
        t_s=rays.t[:n] - t_ref, t_i=rays.t[n:] - t_ref,
        x_s=rays.x[:n].copy(), x_i=rays.x[n:].copy(),
        status_s=rays.status[:n].copy(), status_i=rays.status[n:].copy(),
    )


def trace_pair_event(event: PairEvent, system: OpticalSystem, pump: PumpConfig,
                     hypothesis: Origin | str | None = None, timing=Timing.PHASE) -> dict:
    """Arrival record {t_s, t_i, x_s, x_i, alive, reason} for one event.

    ``hypothesis`` defaults to the event's own origin.
    """
    hyp = event.origin if hypothesis is None else Origin(hypothesis)
    rec = trace_pair_batch(PairBatch.from_events([event]), system, pump, hyp, timing)
    reasons = [STATUS_NAMES[int(rec.status_s[0])], STATUS_NAMES[int(rec.status_i[0])]]
    return {
        "t_s": float(rec.t_s[0]),
        "t_i": float(rec.t_i[0]),
        "x_s": float(rec.x_s[0]),
        "x_i": float(rec.x_i[0]),
        "alive": bool(rec.alive[0]),
        "reason": "alive" if rec.alive[0] else next(r for r in reasons if r != "alive"),
    }
