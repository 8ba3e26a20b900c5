"""Geometry of a meridional optical system: crystal slabs, lens surfaces, media."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..dispersion import AxisPlane, CrystalOrientation, Material
from ..errors import ConfigError

# surface kinds, shared with the kernels
PLANE, SPHERE, ASPHERE = 0, 1, 2
# medium kinds
VACUUM_KIND, ISOTROPIC_KIND, UNIAXIAL_KIND = 0, 1, 2
# ray status codes
ALIVE, DEAD_TIR, DEAD_MISS, DEAD_APERTURE = 0, 1, 2, 3
STATUS_NAMES = {ALIVE: "alive", DEAD_TIR: "tir", DEAD_MISS: "miss", DEAD_APERTURE: "aperture"}
N_ASPHERE = 5  # A4 .. A12


class Pol(str, enum.Enum):
    H = "H"
    V = "V"


class SlabRole(str, enum.Enum):
    SPDC_I = "spdc_I"
    SPDC_II = "spdc_II"
    OVERLAP_III = "overlap_III"
    OVERLAP_IV = "overlap_IV"
    PRE_COMPENSATOR = "pre_compensator"
    POST_COMPENSATOR = "post_compensator"


@dataclass(frozen=True)
class Medium:
    material: Material | None = None
    orientation: CrystalOrientation | None = None

    @property
    def kind(self) -> int:
        if self.material is None:
            return VACUUM_KIND
        return UNIAXIAL_KIND if self.material.is_uniaxial else ISOTROPIC_KIND

    def is_extraordinary(self, pol: Pol | str) -> bool:
        if self.kind != UNIAXIAL_KIND:
            return False
        pol = Pol(pol)
        if self.orientation.plane is AxisPlane.HORIZONTAL:
            return pol is Pol.H
        return pol is Pol.V


VACUUM = Medium()


@dataclass
class Ray:
    position: tuple[float, float]  # (z, x) mm
    direction: tuple[float, float]
    wavelength_nm: float
    pol: Pol = Pol.H
    t_fs: float = 0.0
    alive: bool = True
    reason: str = "alive"

    def __post_init__(self):
        self.pol = Pol(self.pol)
        dz, dx = self.direction
        norm = math.hypot(dz, dx)
        if norm == 0:
            raise ValueError("zero direction")
        self.direction = (dz / norm, dx / norm)


@dataclass(frozen=True)
class Surface:
    z: float
    kind: int = PLANE
    radius: float = math.inf
    conic: float = 0.0
    coeffs: tuple[float, ...] = ()
    aperture: float = math.inf
    after: Medium = VACUUM

    def __post_init__(self):
        if len(self.coeffs) > N_ASPHERE:
            raise ConfigError(f"at most {N_ASPHERE} asphere coefficients (A4..A12) supported")
        if self.kind != PLANE and (self.radius == 0 or not math.isfinite(self.radius)):
            raise ConfigError("curved surfaces need a finite non-zero radius")

    @property
    def curvature(self) -> float:
        return 0.0 if self.kind == PLANE else 1.0 / self.radius

    def sag(self, x):
        """Surface z offset from the vertex at height x."""
        x = np.asarray(x, dtype=float)
        if self.kind == PLANE:
            return np.zeros_like(x)
        c = self.curvature
        r2 = x * x
        arg = 1.0 - (1.0 + self.conic) * c * c * r2
        if np.any(arg < 0):
            raise ValueError("height outside the conic's domain")
        z = c * r2 / (1.0 + np.sqrt(arg))
        for m, a in enumerate(self.coeffs):
            z = z + a * r2 ** (m + 2)
        return z


@dataclass(frozen=True)
class CrystalSlab:
    material: Material
    orientation: CrystalOrientation
    length: float
    entry_z: float
    role: SlabRole

    def __post_init__(self):
        if self.length < 0:
            raise ConfigError("slab length must be non-negative")
        object.__setattr__(self, "role", SlabRole(self.role))

    @property
    def exit_z(self) -> float:
        return self.entry_z + self.length

    @property
    def medium(self) -> Medium:
        return Medium(self.material, self.orientation)


@dataclass(frozen=True)
class Lens:
    """Ordered refracting surfaces at absolute positions; the last one exits to vacuum."""

    surfaces: tuple[Surface, ...]
    name: str = "lens"

    @property
    def first_z(self) -> float:
        return self.surfaces[0].z

    @property
    def last_z(self) -> float:
        return self.surfaces[-1].z


@dataclass
class SurfaceTable:
    """Flat arrays consumed by the tracing kernels."""

    z: np.ndarray
    kind: np.ndarray
    curvature: np.ndarray
    conic: np.ndarray
    coeffs: np.ndarray  # (n_surf, N_ASPHERE)
    aperture: np.ndarray
    medium_after: np.ndarray  # index into media arrays; -1 never used
    # media (index 0 is the entrance medium: vacuum)
    m_kind: np.ndarray
    m_so: np.ndarray  # (n_media, 4)
    m_se: np.ndarray
    m_horizontal: np.ndarray  # 1 if optic axis plane is horizontal
    m_axis: np.ndarray  # signed cut angle, rad
    plane_z: float


class OpticalSystem:
    """Crystal slabs and lenses in increasing z, ending at a collection plane."""

    def __init__(self, elements, plane_z: float):
        self.elements = tuple(elements)
        self.plane_z = float(plane_z)
        self._validate()
        self.surfaces, self._slab_exit_index = self._build_surfaces()
        self._table = None

    # -- construction -----------------------------------------------------
    @staticmethod
    def _extent(el) -> tuple[float, float]:
        if isinstance(el, CrystalSlab):
            return el.entry_z, el.exit_z
        if isinstance(el, Lens):
            return el.first_z, el.last_z
        raise ConfigError(f"unsupported element {el!r}")

    def _validate(self) -> None:
        last = -math.inf
        for el in self.elements:
            lo, hi = self._extent(el)
            if lo < last - 1e-12:
                raise ConfigError("elements must be ordered by increasing z without overlap")
            if isinstance(el, Lens) and any(b.z <= a.z for a, b in zip(el.surfaces, el.surfaces[1:])):
                raise ConfigError(f"{el.name}: surface vertices must increase in z")
            last = hi
        if self.plane_z < last:
            raise ConfigError("collection plane lies before the last element")

    def _build_surfaces(self):
        surfaces: list[Surface] = []
        slab_exit: dict[int, int] = {}
        for idx, el in enumerate(self.elements):
            if isinstance(el, CrystalSlab):
                if el.length == 0:
                    # an empty slab has no interfaces; rays born "in" it start at the next surface
                    slab_exit[idx] = len(surfaces)
                    continue
                if surfaces and surfaces[-1].z == el.entry_z and surfaces[-1].kind == PLANE \
                        and surfaces[-1].after == VACUUM:
                    # contacted with the previous slab: one interface
                    prev = surfaces.pop()
                    surfaces.append(Surface(prev.z, aperture=prev.aperture, after=el.medium))
                else:
                    surfaces.append(Surface(el.entry_z, after=el.medium))
                surfaces.append(Surface(el.exit_z, after=VACUUM))
                slab_exit[idx] = len(surfaces) - 1
            else:
                for k, s in enumerate(el.surfaces):
                    after = VACUUM if k == len(el.surfaces) - 1 else s.after
                    surfaces.append(Surface(s.z, s.kind, s.radius, s.conic, tuple(s.coeffs), s.aperture, after))
        return surfaces, slab_exit

    # -- lookup -----------------------------------------------------------
    @property
    def slabs(self) -> list[CrystalSlab]:
        return [el for el in self.elements if isinstance(el, CrystalSlab)]

    def slab(self, role: SlabRole | str) -> CrystalSlab:
        role = SlabRole(role)
        for el in self.slabs:
            if el.role is role:
                return el
        raise ConfigError(f"system has no {role.value} slab")

    def slab_exit_surface(self, slab: CrystalSlab) -> int:
        for idx, el in enumerate(self.elements):
            if el is slab:
                return self._slab_exit_index[idx]
        raise ConfigError("slab is not part of this system")

    def table(self) -> SurfaceTable:
        if self._table is None:
            self._table = _compile(self.surfaces, self.plane_z)
        return self._table


def _kernel_kind(s: Surface) -> int:
    # the closed-form sphere path only handles pure spheres
    if s.kind == PLANE:
        return PLANE
    return ASPHERE if s.conic != 0.0 or any(s.coeffs) else SPHERE


def _compile(surfaces, plane_z) -> SurfaceTable:
    media: list[Medium] = [VACUUM]
    index: dict[Medium, int] = {VACUUM: 0}
    after = []
    for s in surfaces:
        if s.after not in index:
            index[s.after] = len(media)
            media.append(s.after)
        after.append(index[s.after])
    n = len(surfaces)
    coeffs = np.zeros((n, N_ASPHERE))
    for i, s in enumerate(surfaces):
        coeffs[i, :len(s.coeffs)] = s.coeffs
    m_so = np.zeros((len(media), 4))
    m_se = np.zeros((len(media), 4))
    m_kind = np.zeros(len(media), dtype=np.int64)
    m_h = np.zeros(len(media), dtype=np.int64)
    m_axis = np.zeros(len(media))
    for j, m in enumerate(media):
        m_kind[j] = m.kind
        if m.material is not None:
            m_so[j] = m.material.ordinary.as_tuple()
            m_se[j] = (m.material.extraordinary or m.material.ordinary).as_tuple()
        if m.orientation is not None:
            m_h[j] = 1 if m.orientation.plane is AxisPlane.HORIZONTAL else 0
            m_axis[j] = m.orientation.axis_sign * math.radians(m.orientation.cut_angle_deg)
    return SurfaceTable(
        z=np.array([s.z for s in surfaces], dtype=float),
        kind=np.array([_kernel_kind(s) for s in surfaces], dtype=np.int64),
        curvature=np.array([s.curvature for s in surfaces], dtype=float),
        conic=np.array([s.conic for s in surfaces], dtype=float),
        coeffs=coeffs,
        aperture=np.array([s.aperture for s in surfaces], dtype=float),
        medium_after=np.array(after, dtype=np.int64),
        m_kind=m_kind,
        m_so=m_so,
        m_se=m_se,
        m_horizontal=m_h,
        m_axis=m_axis,
        plane_z=float(plane_z),
    )


@dataclass
class RayBatch:
    """Column store of rays for the kernels. Positions in mm, times in fs."""

    z: np.ndarray
    x: np.ndarray
    dz: np.ndarray
    dx: np.ndarray
    lam_um: np.ndarray
    pol_h: np.ndarray  # bool
    t: np.ndarray
    start: np.ndarray  # index of the first surface still ahead of the ray
    status: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.z)
        if self.status is None:
            self.status = np.zeros(n, dtype=np.int64)
        self.start = np.asarray(self.start, dtype=np.int64)
        self.pol_h = np.asarray(self.pol_h, dtype=bool)

    def __len__(self) -> int:
        return len(self.z)

    def copy(self) -> "RayBatch":
        return RayBatch(*(np.array(getattr(self, k)) for k in
                          ("z", "x", "dz", "dx", "lam_um", "pol_h", "t", "start", "status")))
