"""Scenario runners: stack assembly, compensator solving, sweeps, fidelity, trace dumps."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..dispersion import (
    C_MM_PER_FS,
    AxisPlane,
    CrystalOrientation,
    coherence_time,
    effective_group_index_rad,
    effective_index_rad,
    get_material,
    group_index,
    refractive_index,
)
from ..entanglement import (
    FidelityEstimate,
    OverlapModel,
    PairTimings,
    TauStatistics,
    bootstrap_fidelity,
    pair_timing_batch,
)
from ..errors import ConfigError, PhysicsError
from ..raytrace.prescription import LensPrescription, load_prescription, shipped_prescription
from ..raytrace.system import CrystalSlab, OpticalSystem, Pol, RayBatch, SlabRole
from ..raytrace.tracer import Timing, pump_leg, trace_batch
from ..spdc import (
    CHUNK_SIZE,
    EfficiencyMap,
    Origin,
    PairBatch,
    PumpConfig,
    SamplingWindow,
    SpdcCrystal,
    _partition,
    _sample_chunk,
    emission_map,
    phase_matching_angle,
)
from .config import AUTO, SWEEP, ScenarioConfig

#: loss fraction above which fidelity statistics are flagged unreliable
LOSS_WARNING = 0.5


# ---------------------------------------------------------------------------
# stack


@dataclass(frozen=True)
class StackParameters:
    """Resolved numbers for one concrete crystal stack."""

    cut_angle_deg: float
    crystal_length_mm: float
    overlap_length_mm: float
    pre_length_mm: float
    pre_plane: AxisPlane
    post_length_mm: float
    gap_mm: float


def cut_angle(cfg: ScenarioConfig) -> float:
    cr = cfg.section("crystals")
    if cr["cut_angle_deg"] != AUTO:
        return float(cr["cut_angle_deg"])
    pair = cfg.section("pair")
    return phase_matching_angle(cfg.pump.wavelength_nm, pair["signal_nm"], pair["idler_nm"],
                                get_material(cr["material"]))


def lens_prescription(cfg: ScenarioConfig) -> LensPrescription | None:
    name = cfg.lens
    if name == "none":
        return None
    path = cfg.lens_path()
    return shipped_prescription(name) if path is None else load_prescription(path)


def build_system(cfg: ScenarioConfig, params: StackParameters,
                 lens: LensPrescription | None = None, with_lens: bool = True) -> OpticalSystem:
    cr = cfg.section("crystals")
    comp = cfg.section("compensators")
    bbo = get_material(cr["material"])
    yvo = get_material(comp["material"])
    th = params.cut_angle_deg
    th_c = float(comp["cut_angle_deg"])
    g = params.gap_mm
    L, L3 = params.crystal_length_mm, params.overlap_length_mm
    els = []
    z = 0.0
    els.append(CrystalSlab(yvo, CrystalOrientation(th_c, params.pre_plane), params.pre_length_mm, z,
                           SlabRole.PRE_COMPENSATOR))
    z += params.pre_length_mm + g
    els.append(CrystalSlab(bbo, CrystalOrientation(th, AxisPlane.VERTICAL), L, z, SlabRole.SPDC_I))
    z += L
    els.append(CrystalSlab(bbo, CrystalOrientation(th, AxisPlane.HORIZONTAL), L, z, SlabRole.SPDC_II))
    z += L + g
    els.append(CrystalSlab(bbo, CrystalOrientation(th, AxisPlane.HORIZONTAL, flipped=True), L3, z,
                           SlabRole.OVERLAP_III))
    z += L3
    els.append(CrystalSlab(bbo, CrystalOrientation(th, AxisPlane.VERTICAL, flipped=True), L3, z,
                           SlabRole.OVERLAP_IV))
    z += L3 + g
    els.append(CrystalSlab(yvo, CrystalOrientation(th_c, AxisPlane.VERTICAL), params.post_length_mm, z,
                           SlabRole.POST_COMPENSATOR))
    z += params.post_length_mm
    distance = float(cfg.section("lens")["distance_mm"])
    if lens is None or not with_lens:
        return OpticalSystem(els, plane_z=z + distance)
    front = z + distance
    built = lens.build(front)
    els.append(built)
    plane = built.last_z + lens.back_focus(2.0 * cfg.pump.wavelength_nm)
    return OpticalSystem(els, plane_z=plane)


# ---------------------------------------------------------------------------
# analytic on-axis delays


def _on_axis_index(slab: CrystalSlab, lam_um: float, pol: Pol, timing) -> float:
    mat = slab.material
    e = mat.is_uniaxial and ((pol is Pol.H) == (slab.orientation.plane is AxisPlane.HORIZONTAL))
    theta = math.radians(slab.orientation.cut_angle_deg)
    if Timing(timing) is Timing.GROUP:
        return float(effective_group_index_rad(mat, lam_um, theta)) if e else group_index(mat, "o", lam_um)
    n_o = refractive_index(mat, "o", lam_um)
    return float(effective_index_rad(n_o, refractive_index(mat, "e", lam_um), theta)) if e else n_o


def on_axis_arrival(system: OpticalSystem, pump: PumpConfig, origin: Origin, lam_nm: float,
                    birth_fraction: float = 0.5, timing=Timing.PHASE, include_pump: bool = True) -> float:
    """Delay-sum arrival time (fs) of an axial photon at the end of the last slab.

    Sums n L / c slab by slab with no ray tracing; the lens and final air path
    are common to every axial photon and omitted.
    """
    role = SlabRole.SPDC_I if origin is Origin.CRYSTAL_I else SlabRole.SPDC_II
    birth = system.slab(role)
    z_b = birth.entry_z + birth_fraction * birth.length
    pol = Pol.H if origin is Origin.CRYSTAL_I else Pol.V
    lam_um = lam_nm * 1e-3
    t = 0.0
    if include_pump:
        t_p, _ = pump_leg(system, pump, np.array([z_b]), Pol.V if pol is Pol.H else Pol.H, timing)
        t = float(t_p[0])
    z_end = max(s.exit_z for s in system.slabs)
    in_media = 0.0
    for slab in system.slabs:
        seg = min(slab.exit_z, z_end) - max(slab.entry_z, z_b)
        if seg <= 0:
            continue
        t += _on_axis_index(slab, lam_um, pol, timing) * seg / C_MM_PER_FS
        in_media += seg
    return t + (z_end - z_b - in_media) / C_MM_PER_FS


def on_axis_taus(system: OpticalSystem, pump: PumpConfig, lam_s_nm: float, lam_i_nm: float,
                 timing=Timing.PHASE, birth_fraction: float = 0.5) -> tuple[float, float]:
    """(tau_plus, tau_minus) of an axial event from delay sums."""
    dts = (on_axis_arrival(system, pump, Origin.CRYSTAL_I, lam_s_nm, birth_fraction, timing)
           - on_axis_arrival(system, pump, Origin.CRYSTAL_II, lam_s_nm, birth_fraction, timing))
    dti = (on_axis_arrival(system, pump, Origin.CRYSTAL_I, lam_i_nm, birth_fraction, timing)
           - on_axis_arrival(system, pump, Origin.CRYSTAL_II, lam_i_nm, birth_fraction, timing))
    return 0.5 * (dts + dti), dts - dti


# ---------------------------------------------------------------------------
# compensators


def _base_params(cfg: ScenarioConfig) -> StackParameters:
    cr = cfg.section("crystals")
    L = float(cr["length_mm"])
    L3 = 0.5 * L if cr["overlap_length_mm"] == AUTO else float(cr["overlap_length_mm"])
    return StackParameters(cut_angle(cfg), L, L3, 0.0, AxisPlane.HORIZONTAL, 0.0, float(cr["gap_mm"]))


def _pair_nm(cfg: ScenarioConfig) -> tuple[float, float]:
    pair = cfg.section("pair")
    return float(pair["signal_nm"]), float(pair["idler_nm"])


def tau_minus_curve(cfg: ScenarioConfig, lengths, timing=None, params: StackParameters | None = None):
    """Axial tau_minus for each post-compensator length (delay sums)."""
    timing = Timing(timing or cfg.section("compensators")["post_timing"])
    params = params or _base_params(cfg)
    ls, li = _pair_nm(cfg)
    out = []
    for L in np.asarray(lengths, dtype=float):
        sysm = build_system(cfg, replace(params, post_length_mm=float(L)), with_lens=False)
        out.append(on_axis_taus(sysm, cfg.pump, ls, li, timing)[1])
    return np.array(out)


def solve_post_length(cfg: ScenarioConfig, params: StackParameters | None = None) -> float:
    """Post-compensator length zeroing axial tau_minus (it is linear in the length)."""
    params = params or _base_params(cfg)
    t0, t1 = tau_minus_curve(cfg, [0.0, 1.0], params=params)
    if t1 == t0:
        raise PhysicsError("post-compensator has no effect on tau_minus")
    L = -t0 / (t1 - t0)
    if L < 0:
        raise PhysicsError(f"post-compensator would need a negative length ({L:.6g} mm)")
    return L


def solve_pre_compensator(cfg: ScenarioConfig, params: StackParameters, timing) -> StackParameters:
    """Pre-compensator length and axis plane zeroing the mean axial tau_plus."""
    ls, li = _pair_nm(cfg)

    def tau_plus(p):
        return on_axis_taus(build_system(cfg, p, with_lens=False), cfg.pump, ls, li, timing)[0]

    p0 = replace(params, pre_length_mm=0.0, pre_plane=AxisPlane.HORIZONTAL)
    t0 = tau_plus(p0)
    t1 = tau_plus(replace(p0, pre_length_mm=1.0))
    if t1 == t0:
        raise PhysicsError("pre-compensator has no effect on tau_plus")
    L = -t0 / (t1 - t0)
    plane = AxisPlane.HORIZONTAL
    if L < 0:
        # the other axis plane swaps the pump components' indices
        plane = AxisPlane.VERTICAL
        t1 = tau_plus(replace(p0, pre_length_mm=1.0, pre_plane=plane))
        L = -t0 / (t1 - t0)
    return replace(params, pre_length_mm=L, pre_plane=plane)


def resolve_stack(cfg: ScenarioConfig, post_length_mm: float | None = None, timing=None) -> StackParameters:
    timing = Timing(timing or cfg.timing)
    params = _base_params(cfg)
    comp = cfg.section("compensators")
    if post_length_mm is None:
        post = comp["post_length_mm"]
        post_length_mm = solve_post_length(cfg, params) if post in (AUTO, SWEEP) else float(post)
    params = replace(params, post_length_mm=float(post_length_mm))
    if comp["pre_length_mm"] == AUTO:
        return solve_pre_compensator(cfg, params, timing)
    return replace(params, pre_length_mm=float(comp["pre_length_mm"]))


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepResult:
    lengths_mm: np.ndarray
    tau_minus_fs: np.ndarray
    optimum_mm: float
    band_mm: tuple[float, float]
    threshold_fs: float
    band_clipped: bool
    fidelity: np.ndarray | None = None

    @property
    def band_half_width_mm(self) -> float:
        return 0.5 * (self.band_mm[1] - self.band_mm[0])


def sweep_grid(cfg: ScenarioConfig) -> np.ndarray:
    sw = cfg.section("sweep")
    n = int(round((sw["stop_mm"] - sw["start_mm"]) / sw["step_mm"]))
    grid = sw["start_mm"] + sw["step_mm"] * np.arange(n + 1)
    if grid.size == 0:
        raise ConfigError("empty sweep grid")
    return grid


def pair_coherence_time(cfg: ScenarioConfig) -> float:
    pair = cfg.section("pair")
    return coherence_time(pair["idler_nm"] * 1e-3, pair["linewidth_nm"] * 1e-3)


def band_around(values: np.ndarray, opt: int, threshold: float) -> tuple[int, int]:
    """Contiguous index range around ``opt`` where |values| < threshold."""
    inside = np.abs(values) < threshold
    lo = hi = opt
    if not inside[opt]:
        return opt, opt
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    while hi < len(values) - 1 and inside[hi + 1]:
        hi += 1
    return lo, hi


def run_sweep(cfg: ScenarioConfig, workers: int = 1) -> SweepResult:
    grid = sweep_grid(cfg)
    params = _base_params(cfg)
    taus = tau_minus_curve(cfg, grid, params=params)
    opt = int(np.argmin(np.abs(taus)))
    tau_c = pair_coherence_time(cfg)
    lo, hi = band_around(taus, opt, tau_c)
    clipped = bool(np.abs(taus[opt]) < tau_c and (lo == 0 or hi == len(grid) - 1))
    fid = None
    if cfg.section("sweep")["monte_carlo"]:
        n = cfg.section("sweep")["monte_carlo_rays"]
        small = cfg.with_overrides(**{"sampling.rays": n})
        fid = np.array([run_fidelity(small, workers, post_length_mm=float(L)).estimate.F for L in grid])
    return SweepResult(grid, taus, float(grid[opt]), (float(grid[lo]), float(grid[hi])), tau_c, clipped, fid)


# ---------------------------------------------------------------------------
# emission map


def run_emission_map(cfg: ScenarioConfig) -> EfficiencyMap:
    em = cfg.section("emission_map")
    cr = cfg.section("crystals")
    lam = np.arange(em["lambda_min_nm"], em["lambda_max_nm"] + 0.5 * em["lambda_step_nm"], em["lambda_step_nm"])
    n_a = int(round(em["alpha_max_deg"] / em["alpha_step_deg"]))
    alpha = em["alpha_step_deg"] * np.arange(-n_a, n_a + 1)
    crystal = SpdcCrystal(get_material(cr["material"]), CrystalOrientation(cut_angle(cfg)), float(cr["length_mm"]))
    return emission_map(cfg.pump, crystal, lam, alpha)


def capture_bands(cfg: ScenarioConfig) -> list[tuple[float, float]]:
    ls, li = _pair_nm(cfg)
    w = float(cfg.section("sampling")["half_width_nm"])
    return [(ls - w, ls + w), (li - w, li + w)]


# ---------------------------------------------------------------------------
# fidelity


def _crystals(cfg: ScenarioConfig, params: StackParameters) -> tuple[SpdcCrystal, SpdcCrystal]:
    mat = get_material(cfg.section("crystals")["material"])
    L = params.crystal_length_mm
    return (SpdcCrystal(mat, CrystalOrientation(params.cut_angle_deg, AxisPlane.VERTICAL), L),
            SpdcCrystal(mat, CrystalOrientation(params.cut_angle_deg, AxisPlane.HORIZONTAL), L))


def sampling_window(cfg: ScenarioConfig) -> SamplingWindow:
    sm = cfg.section("sampling")
    ls, _ = _pair_nm(cfg)
    w = float(sm["half_width_nm"])
    alpha = 0.0 if sm["collinear_only"] else float(sm["alpha_max_deg"])
    return SamplingWindow(ls - w, ls + w, alpha, float(sm["collection_angle_deg"]))


def _timing_chunk(job) -> tuple[PairBatch, PairTimings]:
    sample_args, system, pump, timing = job
    pairs = _sample_chunk(sample_args)
    return pairs, pair_timing_batch(pairs, system, pump, timing)


@dataclass
class FidelityRun:
    estimate: FidelityEstimate
    taus: TauStatistics
    timings: PairTimings
    params: StackParameters
    system: OpticalSystem
    model: OverlapModel


def simulate_timings(cfg: ScenarioConfig, system: OpticalSystem, params: StackParameters,
                     n: int, seed: int, workers: int = 1) -> PairTimings:
    pump = cfg.pump
    crystals = _crystals(cfg, params)
    if params.crystal_length_mm == 0:
        # zero-length crystals: sample kinematics as for a unit length (pm_efficiency needs
        # L > 0); birth depth then maps onto the slab's single point
        crystals = tuple(replace(c, length_mm=1.0) for c in crystals)
    window = sampling_window(cfg)
    timing = Timing(cfg.timing)
    jobs = [((seed, k, size, pump, crystals, window), system, pump, timing)
            for k, size in enumerate(_partition(n))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_timing_chunk, jobs))
    else:
        parts = [_timing_chunk(j) for j in jobs]
    return PairTimings.concatenate(p[1] for p in parts)


def overlap_model(cfg: ScenarioConfig) -> OverlapModel:
    pump = cfg.pump
    return OverlapModel(pump.coherence_time_fs, pair_coherence_time(cfg), pump.angular_frequency_rad_fs)


def run_fidelity(cfg: ScenarioConfig, workers: int = 1, post_length_mm: float | None = None) -> FidelityRun:
    params = resolve_stack(cfg, post_length_mm)
    system = build_system(cfg, params, lens_prescription(cfg))
    timings = simulate_timings(cfg, system, params, cfg.rays, cfg.seed, workers)
    if len(timings) < 2:
        raise PhysicsError(f"only {len(timings)} of {timings.n_total} events survived tracing")
    if timings.loss_fraction > LOSS_WARNING:
        warnings.warn(
            f"{100 * timings.loss_fraction:.1f}% of events lost to apertures/TIR; "
            "fidelity statistics are unreliable", RuntimeWarning, stacklevel=2,
        )
    model = overlap_model(cfg)
    est = bootstrap_fidelity(timings, cfg.resamples, cfg.seed, model)
    taus = TauStatistics.from_timings(timings, float(cfg.section("run")["histogram_bin_fs"]))
    return FidelityRun(est, taus, timings, params, system, model)


# ---------------------------------------------------------------------------
# trace dump


@dataclass
class TraceDump:
    lambda_nm: np.ndarray
    pol_h: np.ndarray
    x_mm: np.ndarray
    t_fs: np.ndarray
    status: np.ndarray
    vertices: np.ndarray  # (n, n_surf + 2, 2); NaN where not reached


def run_trace_dump(cfg: ScenarioConfig, n_rays: int | None = None) -> TraceDump:
    n = int(n_rays or cfg.section("run")["trace_dump_rays"])
    if not 1 <= n <= 10_000:
        raise ConfigError("trace dump is limited to 1..10000 rays")
    params = resolve_stack(cfg)
    system = build_system(cfg, params, lens_prescription(cfg))
    pump = cfg.pump
    n_events = (n + 1) // 2
    pairs = PairBatch.concatenate(
        _sample_chunk((cfg.seed, k, size, pump, _crystals(cfg, params), sampling_window(cfg)))
        for k, size in enumerate(_partition(n_events))
    )
    # photon k: signal of event k // 2 when k is even, idler otherwise
    ev = np.arange(n) // 2
    is_signal = np.arange(n) % 2 == 0
    lam = np.where(is_signal, pairs.lambda_s_nm[ev], pairs.lambda_i_nm[ev])
    alpha = np.radians(np.where(is_signal, pairs.alpha_s_deg[ev], pairs.alpha_i_deg[ev]))
    origin_I = pairs.origin_is_I[ev]
    slab_I, slab_II = system.slab(SlabRole.SPDC_I), system.slab(SlabRole.SPDC_II)
    length = np.where(origin_I, slab_I.length, slab_II.length)
    frac = np.divide(pairs.birth_z_mm[ev], length, out=np.full(n, 0.5), where=length > 0)
    z_b = np.where(origin_I, slab_I.entry_z + frac * slab_I.length, slab_II.entry_z + frac * slab_II.length)
    t0 = np.empty(n)
    shift = np.empty(n)
    for mask, pol in ((origin_I, Pol.V), (~origin_I, Pol.H)):
        if mask.any():
            t0[mask], shift[mask] = pump_leg(system, pump, z_b[mask], pol, cfg.timing)
    start = np.where(origin_I, system.slab_exit_surface(slab_I), system.slab_exit_surface(slab_II))
    rays = RayBatch(z=z_b, x=pairs.transverse_x_um[ev] * 1e-3 + shift, dz=np.cos(alpha), dx=np.sin(alpha),
                    lam_um=lam * 1e-3, pol_h=origin_I.copy(), t=t0, start=start)
    rays, verts = trace_batch(rays, system, cfg.timing, record=True)
    return TraceDump(lam, origin_I, rays.x, rays.t, rays.status, verts)


__all__ = [
    "CHUNK_SIZE",
    "FidelityRun",
    "StackParameters",
    "SweepResult",
    "TraceDump",
    "build_system",
    "on_axis_arrival",
    "on_axis_taus",
    "resolve_stack",
    "run_emission_map",
    "run_fidelity",
    "run_sweep",
    "run_trace_dump",
    "solve_post_length",
    "solve_pre_compensator",
]
