import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdcfid.entanglement import (
    DensityMatrix,
    OverlapModel,
    PairTiming,
    PairTimings,
    TauStatistics,
    bootstrap_fidelity,
    bootstrap_from_overlaps,
    density_matrix,
    fidelity,
    jtpa_overlap,
    mean_overlap,
    pair_timing,
    pair_timing_batch,
    tau_histogram,
)
from spdcfid.errors import PhysicsError
from spdcfid.harness import scenario as sc
from spdcfid.raytrace.tracer import Timing
from spdcfid.spdc import Origin, PairBatch, PairEvent

W_P = 2 * math.pi * 299.792458 / 405.0


# --- overlap -------------------------------------------------------------------------

def test_overlap_examples():
    assert jtpa_overlap(0.0, 0.0, math.inf, 236.0, W_P) == 1 + 0j
    d = 50.0
    assert abs(jtpa_overlap(d, -d, math.inf, 236.0, W_P)) == pytest.approx(math.exp(-d * d / (2 * 236.0**2)),
                                                                          rel=1e-14)
    assert abs(jtpa_overlap(5000.0, -5000.0, math.inf, 236.0, W_P)) < 1e-90
    with pytest.raises(ValueError):
        jtpa_overlap(0.0, 0.0, math.inf, 0.0, W_P)


def test_overlap_pump_phase_and_envelope():
    f = jtpa_overlap(0.3, 0.1, 1000.0, 200.0, W_P)
    expect = (np.exp(-0.5j * W_P * 0.4) * math.exp(-0.4**2 / (8 * 1000.0**2))
              * math.exp(-0.2**2 / (8 * 200.0**2)))
    assert f == pytest.approx(expect, rel=1e-14)


def test_overlap_bounded_random():
    rng = np.random.default_rng(0)
    n = 100_000
    dts, dti = rng.normal(0, 300, n), rng.normal(0, 300, n)
    tau_p = np.where(rng.random(n) < 0.5, math.inf, 500.0)
    f = np.array([jtpa_overlap(a, b, tp, 230.0, W_P) for a, b, tp in zip(dts[:2000], dti[:2000], tau_p)])
    f_cw = jtpa_overlap(dts, dti, math.inf, 230.0, W_P)
    assert np.all(np.abs(f) < 1.0) and np.all(np.abs(f_cw) < 1.0)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_overlap_unit_only_at_origin(a, b):
    f = jtpa_overlap(a, b, 800.0, 230.0, W_P)
    assert abs(f) <= 1.0
    if a - b != 0 or a + b != 0:
        assert abs(f) < 1.0 or abs(a) < 1e-3


# --- density matrix and fidelity -------------------------------------------------------

def test_density_matrix_examples():
    rho = density_matrix(1.0)
    ev = np.linalg.eigvalsh(rho.matrix)
    assert np.allclose(sorted(ev), [0, 0, 0, 1], atol=1e-15)
    assert fidelity(rho) == 1.0
    rho0 = density_matrix(0.0)
    assert np.allclose(rho0.matrix, np.diag([0.5, 0, 0, 0.5]))
    assert fidelity(rho0) == 0.5
    assert fidelity(density_matrix(0.78 + 0.1j)) == pytest.approx(0.89, abs=1e-15)


@given(st.floats(0, 1), st.floats(-math.pi, math.pi))
def test_density_matrix_valid(r, phi):
    f = r * complex(math.cos(phi), math.sin(phi))
    rho = density_matrix(f)
    assert rho.is_valid(1e-12)
    assert abs(np.trace(rho.matrix) - 1) < 1e-12
    assert np.linalg.eigvalsh(rho.matrix).min() >= -1e-12
    assert fidelity(rho) == pytest.approx((1 + f.real) / 2, abs=1e-15)
    assert rho.coherence == pytest.approx(f, abs=1e-15)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_fidelity_monotone_in_re_f(a, b):
    lo, hi = sorted((a, b))
    assert fidelity(density_matrix(lo)) <= fidelity(density_matrix(hi))


def test_density_matrix_clipping():
    with pytest.warns(RuntimeWarning):
        rho = density_matrix(1.0 + 5e-10)
    assert abs(rho.coherence) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(PhysicsError):
        density_matrix(1.0 + 1e-6)


# --- bootstrap -------------------------------------------------------------------------

def test_bootstrap_identical_events():
    est = bootstrap_from_overlaps(np.full(50, 0.6 + 0.2j), None, 200, 1)
    assert est.sigma_F == 0.0
    assert est.F == pytest.approx(0.8, abs=1e-15)


def test_bootstrap_two_point_scaling():
    n = 400
    f = np.array([1.0, 0.0] * (n // 2), dtype=complex)
    est = bootstrap_from_overlaps(f, None, 4000, 3)
    # F = (1 + mean)/2 with mean of n fair coin flips: sd = 0.5 / sqrt(n) / 2
    assert est.sigma_F == pytest.approx(0.25 / math.sqrt(n), rel=0.05)


def test_bootstrap_deterministic_and_validated():
    rng = np.random.default_rng(9)
    f = np.exp(1j * rng.normal(0, 0.5, 300))
    a = bootstrap_from_overlaps(f, None, 150, 42)
    b = bootstrap_from_overlaps(f, None, 150, 42)
    assert (a.F, a.sigma_F) == (b.F, b.sigma_F)
    with pytest.raises(PhysicsError):
        bootstrap_from_overlaps(f[:1], None, 150, 1)
    with pytest.raises(ValueError):
        bootstrap_from_overlaps(f, None, 50, 1)


def test_bootstrap_fidelity_from_timings():
    timings = [PairTiming(0.0, 0.0), PairTiming(0.2, -0.2), PairTiming(0.1, 0.1)]
    model = OverlapModel(math.inf, 236.0, W_P)
    est = bootstrap_fidelity(timings, 100, 0, model)
    f = model(np.array([0.0, 0.2, 0.1]), np.array([0.0, -0.2, 0.1]))
    assert est.F == pytest.approx((1 + f.mean().real) / 2, rel=1e-14)
    assert est.loss_fraction == 0.0


def test_mean_overlap_order_stable():
    rng = np.random.default_rng(4)
    f = np.exp(1j * rng.uniform(0, 6, 10_000))
    assert abs(mean_overlap(f) - mean_overlap(f[::-1])) < 1e-15


def test_pair_timing_validation():
    with pytest.raises(ValueError):
        PairTiming(float("nan"), 0.0)
    with pytest.raises(ValueError):
        PairTiming(0.0, 0.0, weight=0.0)
    assert PairTiming(1.0, 3.0).tau_plus == 2.0 and PairTiming(1.0, 3.0).tau_minus == -2.0


# --- histograms ----------------------------------------------------------------------

def test_histogram_examples():
    h = tau_histogram([], 0.1)
    assert h.total == 0 and h.counts.size == 0
    h = tau_histogram(np.zeros(17), 0.1)
    assert list(h.counts) == [17] and h.edges[0] == 0.0
    with pytest.raises(ValueError):
        tau_histogram([1.0], 0.0)


def test_histogram_gaussian_fraction_and_alignment():
    n = 20_000
    x = np.random.default_rng(5).normal(0, 1.0, n)
    h = tau_histogram(x, 0.01)
    assert h.total == n
    assert np.allclose(h.edges / 0.01, np.round(h.edges / 0.01), atol=1e-9)
    centers = 0.5 * (h.edges[:-1] + h.edges[1:])
    frac = h.counts[np.abs(centers) <= 1.0].sum() / n
    assert abs(frac - math.erf(1 / math.sqrt(2))) < 3 / math.sqrt(n)


def test_tau_statistics_counts_match():
    t = PairTimings(np.array([0.1, 0.2, -0.3]), np.array([0.0, 0.1, 0.1]), np.ones(3), 4)
    s = TauStatistics.from_timings(t, 0.05)
    assert s.hist_plus.total == 3 and s.hist_minus.total == 3
    assert t.loss_fraction == pytest.approx(0.25)


# --- end to end -----------------------------------------------------------------------

def _axial(lam_s, lam_i, origin=Origin.CRYSTAL_I, u=0.5, length=6.0):
    return PairEvent(origin, u * length, 0.0, lam_s, lam_i, 0.0, 0.0)


def test_compensated_degenerate_axial_event(default_cfg):
    cfg = default_cfg.with_overrides(**{"pair.signal_nm": 810.0, "pair.idler_nm": 810.0,
                                        "compensators.post_length_mm": 0.0, "lens.prescription": "none"})
    params = sc.resolve_stack(cfg)
    system = sc.build_system(cfg, params, None)
    pt = pair_timing(_axial(810.0, 810.0), system, cfg.pump)
    assert abs(pt.dt_s) < 1e-6 and abs(pt.dt_i) < 1e-6


def test_uncompensated_tau_plus_linear_in_offset(default_cfg):
    taus = []
    for L in (1.0, 2.0, 4.0):
        cfg = default_cfg.with_overrides(**{"crystals.length_mm": L, "compensators.pre_length_mm": 0.0,
                                            "compensators.post_length_mm": 0.0})
        params = sc.resolve_stack(cfg)
        system = sc.build_system(cfg, params, with_lens=False)
        pt = pair_timing(_axial(780.0, 842.4, length=L), system, cfg.pump)
        oracle = sc.on_axis_taus(system, cfg.pump, 780.0, 842.4, Timing.PHASE)[0]
        assert pt.tau_plus == pytest.approx(oracle, abs=1e-6)
        taus.append(pt.tau_plus)
    assert taus[1] / taus[0] == pytest.approx(2.0, rel=1e-9)
    assert taus[2] / taus[0] == pytest.approx(4.0, rel=1e-9)


@pytest.mark.parametrize("timing", ["phase", "group"])
def test_tau_minus_tracer_matches_delay_sums(default_cfg, timing):
    cfg = default_cfg.with_overrides(**{"compensators.post_timing": timing})
    params = sc.resolve_stack(cfg)
    opt = sc.solve_post_length(cfg)
    lengths = opt + np.array([-0.3, -0.05, 0.0, 0.05, 0.3])
    analytic = sc.tau_minus_curve(cfg, lengths, timing, params)
    traced = []
    for L in lengths:
        system = sc.build_system(cfg, sc.replace(params, post_length_mm=float(L)), with_lens=False)
        batch = PairBatch.from_events([_axial(780.0, 842.4)])
        traced.append(float(pair_timing_batch(batch, system, cfg.pump, timing).tau_minus[0]))
    assert np.allclose(traced, analytic, atol=1e-6, rtol=0)
    assert abs(traced[2]) < 1e-6
    assert np.sign(traced[0]) != np.sign(traced[-1])


def test_null_stack_gives_unit_fidelity(default_cfg):
    cfg = default_cfg.with_overrides(**{"crystals.length_mm": 0.0, "lens.prescription": "none",
                                        "sampling.rays": 3000})
    run = sc.run_fidelity(cfg)
    assert run.params.post_length_mm == 0.0 and run.params.pre_length_mm == 0.0
    assert np.all(run.timings.dt_s == 0.0) and np.all(run.timings.dt_i == 0.0)
    assert run.estimate.mean_f == 1.0
    assert run.estimate.F == 1.0


def test_decoherence_ladder(default_cfg):
    # the retained pump phase makes F oscillate about 0.5 as the mean tau_plus winds;
    # the coherence |f| bounds |F - 0.5| and must decay monotonically
    base = default_cfg.with_overrides(**{"compensators.pre_length_mm": 0.0,
                                         "compensators.post_length_mm": 0.0,
                                         "lens.prescription": "none", "sampling.rays": 2000})
    coh, fid = [], []
    for k in (1, 2, 4, 8, 32):
        est = sc.run_fidelity(base.with_overrides(**{"crystals.length_mm": 6.0 * k})).estimate
        coh.append(abs(est.mean_f))
        fid.append(est.F)
    assert all(b < a for a, b in zip(coh, coh[1:]))
    assert all(abs(F - 0.5) <= c / 2 + 1e-15 for F, c in zip(fid, coh))
    assert abs(fid[-1] - 0.5) < 0.02
