import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sellmeier_oracle
from test_dispersion import RAW
from spdcfid.dispersion import CrystalOrientation, get_material
from spdcfid.errors import ConfigError, NoPhaseMatching, PhysicsError
from spdcfid.spdc import (
    CHUNK_SIZE,
    Origin,
    PairBatch,
    PumpConfig,
    SamplingWindow,
    SpdcCrystal,
    emission_map,
    external_angle,
    idler_angle,
    idler_wavelength,
    phase_matching_angle,
    phase_mismatch,
    pm_efficiency,
    sample_pair_batch,
    sample_pairs,
)

PUMP = PumpConfig()


def _k_oracle(key, lam_nm, theta_rad=None):
    """Wavenumber in rad/mm from the raw Sellmeier entries of BBO."""
    lam = lam_nm * 1e-3
    n_o = sellmeier_oracle(RAW["BBO"]["ordinary"], lam)
    if key == "o":
        return 2 * math.pi * n_o / lam * 1e3
    n_e = sellmeier_oracle(RAW["BBO"]["extraordinary"], lam)
    n = 1 / math.sqrt(math.cos(theta_rad) ** 2 / n_o**2 + math.sin(theta_rad) ** 2 / n_e**2)
    return 2 * math.pi * n / lam * 1e3


def _dk_oracle(theta_deg, lam_s, alpha_s_deg):
    """k_p - sqrt(k_s^2 - q^2) - sqrt(k_i^2 - q^2) with q the shared transverse momentum."""
    lam_i = 1 / (1 / 405 - 1 / lam_s)
    k_p = _k_oracle("e", 405.0, math.radians(theta_deg))
    k_s, k_i = _k_oracle("o", lam_s), _k_oracle("o", lam_i)
    q = k_s * math.sin(math.radians(alpha_s_deg))
    return k_p - math.sqrt(k_s**2 - q**2) - math.sqrt(k_i**2 - q**2)


@pytest.fixture(scope="module")
def theta(bbo):
    return phase_matching_angle(405.0, 780.0, 842.4, bbo)


@pytest.fixture(scope="module")
def crystal(bbo, theta):
    return SpdcCrystal(bbo, CrystalOrientation(theta), 6.0)


# --- phase matching angle ---------------------------------------------------

def test_pm_angle_near_reported_value(theta, bbo):
    assert theta == pytest.approx(28.82, abs=0.3)
    assert phase_matching_angle(405.0, 842.4, 780.0, bbo) == theta


def test_pm_angle_degenerate_matches_dense_scan(bbo):
    grid = np.arange(20.0, 40.0, 0.001)
    resid = [abs(_k_oracle("e", 405.0, math.radians(t)) - 2 * _k_oracle("o", 810.0)) for t in grid]
    oracle = grid[int(np.argmin(resid))]
    assert phase_matching_angle(405.0, 810.0, 810.0, bbo) == pytest.approx(oracle, abs=0.002)


def test_pm_angle_errors(bbo):
    with pytest.raises(PhysicsError):
        phase_matching_angle(405.0, 400.0, 810.0, bbo)
    with pytest.raises(NoPhaseMatching):
        # positive uniaxial: the extraordinary pump index never drops below n_o
        phase_matching_angle(405.0, 780.0, 842.4, get_material("YVO4"))


# --- phase mismatch ------------------------------------------------------------

def test_mismatch_zero_at_collinear_solution(crystal):
    assert abs(phase_mismatch(PUMP, crystal, 780.0, 842.4, 0.0, 0.0)) < 1e-9


def test_mismatch_detuned_sign(crystal, theta):
    li = idler_wavelength(405.0, 781.0)
    dk = phase_mismatch(PUMP, crystal, 781.0, li, 0.0, 0.0)
    assert dk == pytest.approx(_dk_oracle(theta, 781.0, 0.0), abs=1e-7)
    assert dk == pytest.approx(0.03985, abs=1e-4)


def test_mismatch_swap_symmetry(crystal):
    a = phase_mismatch(PUMP, crystal, 775.0, 847.9, 0.2, -0.18)
    b = phase_mismatch(PUMP, crystal, 847.9, 775.0, -0.18, 0.2)
    assert a == b


@pytest.mark.parametrize("lam_s,alpha", [(770.0, 0.3), (780.0, 0.0), (790.0, -0.5), (845.0, 0.9)])
def test_mismatch_against_transverse_momentum_oracle(crystal, theta, lam_s, alpha):
    li = idler_wavelength(405.0, lam_s)
    ai = idler_angle(crystal, lam_s, li, alpha)
    assert phase_mismatch(PUMP, crystal, lam_s, li, alpha, ai) == pytest.approx(
        _dk_oracle(theta, lam_s, alpha), abs=1e-7)


# --- efficiency -----------------------------------------------------------------

def test_efficiency_examples():
    assert pm_efficiency(0.0, 6.0) == 1.0
    assert pm_efficiency(2 * math.pi / 6.0, 6.0) == pytest.approx(0.0, abs=1e-30)
    assert pm_efficiency(math.pi / 6.0, 6.0) == pytest.approx((2 / math.pi) ** 2, rel=1e-14)
    with pytest.raises(ValueError):
        pm_efficiency(0.1, 0.0)


@settings(max_examples=1000)
@given(st.floats(-50.0, 50.0), st.floats(0.1, 20.0))
def test_efficiency_even_and_bounded(dk, L):
    v = pm_efficiency(dk, L)
    assert v == pm_efficiency(-dk, L)
    assert 0.0 <= v <= 1.0


def _fwhm(L):
    from scipy.optimize import brentq
    half = brentq(lambda d: pm_efficiency(d, L) - 0.5, 1e-9, 2 * math.pi / L)
    return 2 * half


def test_fwhm_scales_inversely_with_length():
    w = {L: _fwhm(L) for L in (3.0, 6.0, 12.0)}
    assert w[3.0] * 3.0 == pytest.approx(w[6.0] * 6.0, rel=0.01)
    assert w[12.0] * 12.0 == pytest.approx(w[6.0] * 6.0, rel=0.01)
    # half maximum of sinc^2 sits at x = 1.39156 (solution of sin x / x = 1/sqrt 2)
    assert w[6.0] == pytest.approx(4 * 1.3915573 / 6.0, rel=1e-6)


# --- emission map -----------------------------------------------------------------

@pytest.fixture(scope="module")
def emap(crystal):
    lam = np.arange(740.0, 900.0 + 0.25, 0.5)
    alpha = 0.005 * np.arange(-200, 201)
    return emission_map(PUMP, crystal, lam, alpha)


def test_map_collinear_cell_and_range(emap):
    i = int(np.flatnonzero(emap.lambda_nm == 780.0)[0])
    j = int(np.flatnonzero(emap.alpha_deg == 0.0)[0])
    assert emap.values[i, j] == pytest.approx(1.0, abs=1e-12)
    assert emap.values.min() >= 0.0 and emap.values.max() <= 1.0


def test_map_has_signal_and_idler_branches(emap, crystal):
    lo = emap.lambda_nm < 811.0
    hi = ~lo
    assert emap.values[lo].max() > 0.99 and emap.values[hi].max() > 0.99
    # each phase-matched signal cell has its partner on the idler branch
    for lam in (772.0, 776.0):
        i = int(np.flatnonzero(emap.lambda_nm == lam)[0])
        a = emap.alpha_deg[int(np.argmax(emap.values[i]))]
        li = idler_wavelength(405.0, lam)
        ai = float(idler_angle(crystal, lam, li, a))
        dk = phase_mismatch(PUMP, crystal, li, lam, ai, a)
        assert pm_efficiency(dk, 6.0) == pytest.approx(emap.values[i].max(), rel=1e-9)
        assert li > 811.0


def test_band_capture_matches_direct_sum(emap, theta):
    frac = emap.band_capture_fraction([(770.0, 790.0), (832.4, 852.4)], 0.36)
    num = den = 0.0
    for lam in emap.lambda_nm:
        if not (770.0 <= lam <= 790.0 or 832.4 <= lam <= 852.4):
            continue
        n = sellmeier_oracle(RAW["BBO"]["ordinary"], lam * 1e-3)
        for a in emap.alpha_deg:
            x = _dk_oracle(theta, lam, a) * 3.0
            eff = 1.0 if x == 0 else (math.sin(x) / x) ** 2
            den += eff
            if abs(math.degrees(math.asin(n * math.sin(math.radians(a))))) <= 0.36:
                num += eff
    assert frac == pytest.approx(num / den, abs=1e-6)


def test_map_grid_validation(crystal):
    with pytest.raises(ConfigError):
        emission_map(PUMP, crystal, [], [0.0])
    with pytest.raises(ConfigError):
        emission_map(PUMP, crystal, [800.0, 790.0], [0.0])


# --- sampling ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def crystals(bbo, theta):
    return (SpdcCrystal(bbo, CrystalOrientation(theta, "vertical"), 6.0),
            SpdcCrystal(bbo, CrystalOrientation(theta, "horizontal"), 6.0))


WINDOW = SamplingWindow(770.0, 790.0, 1.0)


def test_single_event_invariants(crystals):
    (ev,) = sample_pairs(1, PUMP, crystals, seed=1, window=WINDOW)
    assert 0.0 <= ev.birth_z_mm <= 6.0
    assert 1 / ev.lambda_s_nm + 1 / ev.lambda_i_nm == pytest.approx(1 / 405.0, rel=1e-15)
    assert ev.polarization == ("H" if ev.origin is Origin.CRYSTAL_I else "V")
    with pytest.raises(ConfigError):
        sample_pairs(0, PUMP, crystals, seed=1, window=WINDOW)


@pytest.fixture(scope="module")
def big_batch(crystals):
    return sample_pair_batch(100_000, PUMP, crystals, seed=7, window=WINDOW)


def test_sample_statistics(big_batch):
    n = len(big_batch)
    sigma = PUMP.waist_um / 2
    assert abs(big_batch.transverse_x_um.mean()) < 3 * sigma / math.sqrt(n)
    assert big_batch.transverse_x_um.std() == pytest.approx(sigma, rel=0.02)
    assert abs(big_batch.origin_is_I.mean() - 0.5) < 3 * math.sqrt(0.25 / n)
    assert big_batch.birth_z_mm.min() >= 0 and big_batch.birth_z_mm.max() <= 6.0
    assert abs(big_batch.birth_z_mm.mean() - 3.0) < 3 * (6 / math.sqrt(12)) / math.sqrt(n)


def test_sample_energy_conservation_exact(big_batch):
    lam_i = idler_wavelength(405.0, big_batch.lambda_s_nm)
    assert np.array_equal(lam_i, big_batch.lambda_i_nm)


def test_sample_reproducible_across_workers(crystals):
    n = 2 * CHUNK_SIZE + 11
    a = sample_pair_batch(n, PUMP, crystals, 3, WINDOW, workers=1)
    b = sample_pair_batch(n, PUMP, crystals, 3, WINDOW, workers=2)
    c = sample_pair_batch(n, PUMP, crystals, 3, WINDOW, workers=1)
    for name in ("origin_is_I", "birth_z_mm", "transverse_x_um", "lambda_s_nm", "alpha_s_deg"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
        assert np.array_equal(getattr(a, name), getattr(c, name))
    d = sample_pair_batch(n, PUMP, crystals, 4, WINDOW)
    assert not np.array_equal(a.lambda_s_nm, d.lambda_s_nm)


def test_collection_cone_restricts_both_photons(crystals, bbo):
    win = SamplingWindow(770.0, 790.0, 1.0, max_external_deg=0.36)
    b = sample_pair_batch(5000, PUMP, crystals, 11, win)
    ext = np.maximum(np.abs(external_angle(bbo, b.lambda_s_nm, b.alpha_s_deg)),
                     np.abs(external_angle(bbo, b.lambda_i_nm, b.alpha_i_deg)))
    assert ext.max() <= 0.36


def test_accepted_events_follow_efficiency(big_batch, crystals):
    # rejection sampling: accepted candidates have density proportional to efficiency,
    # so the mean efficiency of accepted events is E[eff^2] / E[eff] over the window
    eff = pm_efficiency(phase_mismatch(PUMP, crystals[0], big_batch.lambda_s_nm, big_batch.lambda_i_nm,
                                       big_batch.alpha_s_deg, big_batch.alpha_i_deg), 6.0)
    rng = np.random.default_rng(0)
    ls = rng.uniform(770, 790, 400_000)
    a = rng.uniform(-1, 1, 400_000)
    li = idler_wavelength(405.0, ls)
    e = pm_efficiency(phase_mismatch(PUMP, crystals[0], ls, li, a, idler_angle(crystals[0], ls, li, a)), 6.0)
    assert eff.mean() == pytest.approx((e**2).mean() / e.mean(), rel=0.02)


def test_sampling_window_validation():
    with pytest.raises(ConfigError):
        SamplingWindow(790.0, 770.0, 1.0)
    with pytest.raises(ConfigError):
        PumpConfig(waist_um=0.0)


def test_batch_event_round_trip(big_batch):
    head = PairBatch.concatenate([big_batch]).to_events()[:5]
    again = PairBatch.from_events(head)
    assert np.array_equal(again.lambda_s_nm, big_batch.lambda_s_nm[:5])
