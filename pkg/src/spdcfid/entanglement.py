"""H/V arrival-time differences, two-photon overlap, density matrix and fidelity."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PhysicsError
from .raytrace.system import OpticalSystem
from .raytrace.tracer import Timing, reference_time, trace_pair_batch
from .spdc import Origin, PairBatch, PairEvent, PumpConfig

#: |f| may exceed 1 by this much from rounding before it is an error.
OVERLAP_CLIP_TOL = 1e-9


@dataclass(frozen=True)
class PairTiming:
    dt_s: float  # t_s,H - t_s,V in fs
    dt_i: float
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.dt_s) and math.isfinite(self.dt_i)):
            raise ValueError("time differences must be finite")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError("weight must lie in (0, 1]")

    @property
    def tau_plus(self) -> float:
        return 0.5 * (self.dt_s + self.dt_i)

    @property
    def tau_minus(self) -> float:
        return self.dt_s - self.dt_i


@dataclass
class PairTimings:
    """Columns of accepted events plus the loss bookkeeping."""

    dt_s: np.ndarray
    dt_i: np.ndarray
    weight: np.ndarray
    n_total: int

    @classmethod
    def from_list(cls, timings) -> "PairTimings":
        timings = list(timings)
        return cls(
            dt_s=np.array([p.dt_s for p in timings], dtype=float),
            dt_i=np.array([p.dt_i for p in timings], dtype=float),
            weight=np.array([p.weight for p in timings], dtype=float),
            n_total=len(timings),
        )

    @classmethod
    def concatenate(cls, parts) -> "PairTimings":
        parts = list(parts)
        return cls(
            dt_s=np.concatenate([p.dt_s for p in parts]),
            dt_i=np.concatenate([p.dt_i for p in parts]),
            weight=np.concatenate([p.weight for p in parts]),
            n_total=sum(p.n_total for p in parts),
        )

    def __len__(self) -> int:
        return len(self.dt_s)

    @property
    def loss_fraction(self) -> float:
        return 0.0 if self.n_total == 0 else 1.0 - len(self) / self.n_total

    @property
    def tau_plus(self) -> np.ndarray:
        return 0.5 * (self.dt_s + self.dt_i)

    @property
    def tau_minus(self) -> np.ndarray:
        return self.dt_s - self.dt_i

    def to_list(self) -> list[PairTiming]:
        return [PairTiming(float(a), float(b), float(w)) for a, b, w in zip(self.dt_s, self.dt_i, self.weight)]


def pair_timing_batch(pairs: PairBatch, system: OpticalSystem, pump: PumpConfig,
                      timing=Timing.PHASE, backend_name: str | None = None) -> PairTimings:
    """Replay each event in crystal I and crystal II and difference the arrivals.

    Events with a dead ray under either hypothesis are dropped and counted.
    """
    t_ref = reference_time(system, pump, timing, backend_name)
    h = trace_pair_batch(pairs, system, pump, Origin.CRYSTAL_I, timing, t_ref, backend_name)
    v = trace_pair_batch(pairs, system, pump, Origin.CRYSTAL_II, timing, t_ref, backend_name)
    ok = h.alive & v.alive
    return PairTimings(
        dt_s=(h.t_s - v.t_s)[ok],
        dt_i=(h.t_i - v.t_i)[ok],
        weight=pairs.weight[ok],
        n_total=len(pairs),
    )


def pair_timing(event: PairEvent, system: OpticalSystem, pump: PumpConfig,
                timing=Timing.PHASE) -> PairTiming:
    res = pair_timing_batch(PairBatch.from_events([event]), system, pump, timing)
    if len(res) == 0:
        raise PhysicsError("event is not traceable under both origin hypotheses")
    return PairTiming(float(res.dt_s[0]), float(res.dt_i[0]), float(res.weight[0]))


# ---------------------------------------------------------------------------
# overlap


def jtpa_overlap(dt_s, dt_i, tau_p: float, tau_c: float, omega_p: float):
    """Gaussian-envelope overlap of the H- and V-born two-photon amplitudes.

    ``tau_p`` may be ``math.inf`` for a CW pump. Times in fs, ``omega_p`` in rad/fs.
    """
    if not tau_c > 0:
        raise ValueError("coherence time must be positive")
    dt_s = np.asarray(dt_s, dtype=float)
    dt_i = np.asarray(dt_i, dtype=float)
    plus = dt_s + dt_i
    minus = dt_s - dt_i
    env = -(minus**2) / (8.0 * tau_c**2)
    if math.isfinite(tau_p):
        env = env - plus**2 / (8.0 * tau_p**2)
    f = np.exp(env) * np.exp(-0.5j * omega_p * plus)
    return complex(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class OverlapModel:
    tau_p_fs: float
    tau_c_fs: float
    omega_p_rad_fs: float

    def __call__(self, dt_s, dt_i):
        return jtpa_overlap(dt_s, dt_i, self.tau_p_fs, self.tau_c_fs, self.omega_p_rad_fs)


def mean_overlap(f, weight=None) -> complex:
    """Weighted mean of f; numpy's pairwise summation keeps it order-stable."""
    f = np.asarray(f, dtype=complex)
    if f.size == 0:
        raise PhysicsError("no accepted events")
    if weight is None:
        return complex(np.sum(f) / f.size)
    w = np.asarray(weight, dtype=float)
    return complex(np.sum(w * f) / np.sum(w))


# ---------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class DensityMatrix:
    """Basis order HH, HV, VH, VV."""

    matrix: np.ndarray

    @property
    def coherence(self) -> complex:
        return complex(2.0 * self.matrix[0, 3])

    def is_valid(self, tol: float = 1e-12) -> bool:
        m = self.matrix
        return (
            np.allclose(m, m.conj().T, atol=tol)
            and abs(np.trace(m) - 1.0) <= tol
            and np.linalg.eigvalsh(m).min() >= -tol
        )


def density_matrix(f_bar: complex) -> DensityMatrix:
    f_bar = complex(f_bar)
    mag = abs(f_bar)
    if mag > 1.0:
        if mag > 1.0 + OVERLAP_CLIP_TOL:
            raise PhysicsError(f"|f| = {mag!r} exceeds 1")
        warnings.warn(f"|f| = {mag!r} clipped to 1", RuntimeWarning, stacklevel=2)
        f_bar /= mag
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[3, 3] = 0.5
    rho[0, 3] = 0.5 * f_bar
    rho[3, 0] = 0.5 * f_bar.conjugate()
    return DensityMatrix(rho)


def fidelity(rho: DensityMatrix) -> float:
    """<Phi+|rho|Phi+> with Phi+ = (|HH> + |VV>)/sqrt 2, i.e. (1 + Re f)/2 for this state.

    Summed element-wise so that rho(f = 1) gives exactly 1.
    """
    m = rho.matrix
    val = 0.5 * float(np.real(m[0, 0] + m[3, 3] + m[0, 3] + m[3, 0]))
    return min(1.0, max(0.0, val))


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class FidelityEstimate:
    F: float
    sigma_F: float
    n_accepted: int
    loss_fraction: float
    mean_f: complex

    def __post_init__(self):
        if not (0.0 <= self.F <= 1.0 and self.sigma_F >= 0.0):
            raise ValueError(f"invalid fidelity estimate {self}")


def bootstrap_from_overlaps(f, weight, resamples: int, seed: int,
                            loss_fraction: float = 0.0) -> FidelityEstimate:
    f = np.asarray(f, dtype=complex)
    w = np.ones(f.shape) if weight is None else np.asarray(weight, dtype=float)
    n = f.size
    if n < 2:
        raise PhysicsError("bootstrap needs at least two accepted events")
    if resamples < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    f_bar = mean_overlap(f, w)
    F = fidelity(density_matrix(f_bar))
    rng = np.random.default_rng(seed)
    wf = w * f.real
    reps = np.empty(resamples)
    for r in range(resamples):
        idx = rng.integers(0, n, n)
        reps[r] = 0.5 * (1.0 + np.sum(wf[idx]) / np.sum(w[idx]))
    return FidelityEstimate(F, float(np.std(reps, ddof=1)), n, loss_fraction, f_bar)


def bootstrap_fidelity(timings, resamples: int, seed: int, model: OverlapModel) -> FidelityEstimate:
    """F from the mean overlap and its bootstrap standard deviation over events."""
    if not isinstance(timings, PairTimings):
        timings = PairTimings.from_list(timings)
    f = model(timings.dt_s, timings.dt_i)
    return bootstrap_from_overlaps(f, timings.weight, resamples, seed, timings.loss_fraction)


# ---------------------------------------------------------------------------
# histograms


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray  # len(counts) + 1, or empty
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left_fs", "bin_right_fs", "count"])
            for k, c in enumerate(self.counts):
                w.writerow([repr(float(self.edges[k])), repr(float(self.edges[k + 1])), int(c)])


def tau_histogram(samples, bin_width: float) -> Histogram:
    """Histogram with edges on integer multiples of ``bin_width``."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return Histogram(np.empty(0), np.empty(0, dtype=np.int64))
    k = np.floor(x / bin_width).astype(np.int64)
    lo = int(k.min())
    counts = np.bincount(k - lo)
    edges = (lo + np.arange(counts.size + 1)) * bin_width
    return Histogram(edges, counts)


@dataclass(frozen=True)
class TauStatistics:
    tau_plus: np.ndarray
    tau_minus: np.ndarray
    hist_plus: Histogram
    hist_minus: Histogram

    @classmethod
    def from_timings(cls, timings: PairTimings, bin_width_fs: float) -> "TauStatistics":
        tp, tm = timings.tau_plus, timings.tau_minus
        return cls(tp, tm, tau_histogram(tp, bin_width_fs), tau_histogram(tm, bin_width_fs))
