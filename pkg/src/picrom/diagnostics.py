"""Error metrics, rank studies, energy-rate fits, and phase timing.

Conventions:

* state errors are Frobenius-norm relative errors over the full (N, p)
  snapshot, one scalar per component and recorded time;
* target errors project the same snapshot onto its own time-local
  complex-SVD ortho-symplectic basis of the running reduced dimension;
* rate fits are least-squares slopes of log energy-peak values against peak
  times, first peak dropped. Literature damping/growth numbers for these
  benchmarks quote the electric-field amplitude, whose rate is half the raw
  log slope of the quadratic energy; ``amplitude_rate`` applies that
  convention.
"""

from __future__ import annotations

import time as _time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import ConfigurationError, FitFailureError
from .reduction import complex_svd_basis, reconstruct

__all__ = [
    "relative_errors",
    "total_relative_error",
    "target_projection_errors",
    "numerical_rank",
    "hamiltonian_relative_error",
    "RateFit",
    "fit_energy_rate",
    "amplitude_rate",
    "split_two_phase_windows",
    "PhaseTimers",
    "RunReport",
]


def _rel(ref, approx):
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise ConfigurationError("relative error undefined for a zero reference")
    return float(np.linalg.norm(ref - approx) / denom)


def relative_errors(sx, sv, xr, vr):
    """Componentwise Frobenius relative errors of a reduced snapshot."""
    if np.shape(sx) != np.shape(xr) or np.shape(sv) != np.shape(vr):
        raise ConfigurationError("snapshot shapes do not match")
    return _rel(sx, xr), _rel(sv, vr)


def total_relative_error(sx, sv, xr, vr):
    """Relative error of the stacked phase-space snapshot."""
    ref = np.concatenate([np.atleast_2d(sx), np.atleast_2d(sv)], axis=0)
    app = np.concatenate([np.atleast_2d(xr), np.atleast_2d(vr)], axis=0)
    return _rel(ref, app)


def target_projection_errors(sx, sv, n):
    """Best-in-class reference: errors after projecting onto the local cSVD basis."""
    u, z = complex_svd_basis(sx, sv, n)
    xr, vr = reconstruct(u, z)
    sx = np.atleast_2d(np.asarray(sx, dtype=float).T).T
    sv = np.atleast_2d(np.asarray(sv, dtype=float).T).T
    return _rel(sx, xr), _rel(sv, vr)


def numerical_rank(a, tol):
    """Number of singular values within the relative threshold of the largest."""
    if not 0.0 < tol < 1.0:
        raise ConfigurationError(f"rank tolerance must be in (0, 1), got {tol}")
    a = np.asarray(a)
    if not np.any(a):
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int((s >= tol * s[0]).sum())


def hamiltonian_relative_error(h_ref, h_approx):
    """2-norm relative error over the per-parameter Hamiltonian vector."""
    return _rel(np.atleast_1d(h_ref), np.atleast_1d(h_approx))


@dataclass
class RateFit:
    rate: float
    intercept: float
    peak_times: np.ndarray
    peak_values: np.ndarray
    num_detected: int


def fit_energy_rate(times, energy, window=None, prominence_rel=1e-3, min_peaks=3,
                    drop_first=True, max_peaks=None):
    """Least-squares slope of ln(peak energy) against peak time.

    Peaks are strict local maxima with prominence at least prominence_rel
    times the windowed series maximum; the first detected peak is dropped
    (transient). max_peaks keeps only the earliest peaks after that drop,
    fencing the fit off from the late noise floor of damped runs. Raises a
    fit failure naming the peak count when fewer than min_peaks maxima are
    found.
    """
    times = np.asarray(times, dtype=float)
    energy = np.asarray(energy, dtype=float)
    if times.shape != energy.shape:
        raise ConfigurationError("time and energy series must have equal lengths")
    if window is not None:
        mask = (times >= window[0]) & (times <= window[1])
        times, energy = times[mask], energy[mask]
    if energy.size < 3:
        raise FitFailureError(f"series has only {energy.size} samples in the window")
    if np.ptp(energy) == 0.0:
        # a constant has no strict maxima but an unambiguous slope
        return RateFit(rate=0.0, intercept=float(np.log(energy[0])) if energy[0] > 0 else 0.0,
                       peak_times=times, peak_values=energy, num_detected=0)
    idx, _ = find_peaks(energy, prominence=prominence_rel * energy.max())
    detected = int(idx.size)
    if idx.size < min_peaks:
        raise FitFailureError(f"found only {idx.size} energy peaks (need {min_peaks})")
    if drop_first:
        idx = idx[1:]
    if max_peaks is not None:
        idx = idx[:max_peaks]
    if idx.size < 2:
        raise FitFailureError(f"only {idx.size} peaks left to fit after windowing")
    tp, ep = times[idx], energy[idx]
    slope, intercept = np.polyfit(tp, np.log(ep), 1)
    return RateFit(rate=float(slope), intercept=float(intercept), peak_times=tp,
                   peak_values=ep, num_detected=detected)


def amplitude_rate(times, energy, **kwargs):
    """Field-amplitude rate: half the log slope of the quadratic energy."""
    fit = fit_energy_rate(times, energy, **kwargs)
    fit.rate *= 0.5
    return fit


def split_two_phase_windows(times, energy, prominence_rel=1e-3):
    """Damping and growth windows for a decay-then-grow energy trace.

    The split sits at the lowest oscillation peak, i.e. the trough of the
    peak envelope; an oscillation-free series falls back to its raw
    minimum. Growth runs from the split to the largest later value.
    """
    times = np.asarray(times, dtype=float)
    energy = np.asarray(energy, dtype=float)
    if energy.size and np.ptp(energy) > 0.0:
        idx, _ = find_peaks(energy, prominence=prominence_rel * energy.max())
    else:
        idx = np.array([], dtype=int)
    if idx.size >= 3:
        k_min = int(idx[np.argmin(energy[idx])])
    else:
        k_min = int(np.argmin(energy)) if energy.size else 0
    if k_min == 0 or k_min >= energy.size - 1:
        raise FitFailureError("series has no interior trough separating the phases")
    k_top = k_min + int(np.argmax(energy[k_min:]))
    return (times[0], times[k_min]), (times[k_min], times[k_top])


class PhaseTimers:
    """Wall-time accumulators per labeled phase, with per-step series."""

    def __init__(self, names=("fom_step", "rom_basis", "rom_coeff", "dmd_fit", "deim_fit")):
        self.names = tuple(names)
        self.totals = {name: 0.0 for name in self.names}
        self._step = defaultdict(float)
        self.series = {name: [] for name in self.names}

    @contextmanager
    def phase(self, name):
        tic = _time.perf_counter()
        try:
            yield
        finally:
            dt = _time.perf_counter() - tic
            self.totals[name] = self.totals.get(name, 0.0) + dt
            self._step[name] += dt

    def flush_step(self):
        """Close the current step: append each phase's in-step total to its series."""
        for name in self.names:
            self.series[name].append(self._step.get(name, 0.0))
        self._step.clear()

    def series_arrays(self):
        return {name: np.asarray(vals) for name, vals in self.series.items()}


@dataclass
class RunReport:
    """Everything a run hands to serialization and the figures."""

    config: dict
    mode: str
    params: np.ndarray
    times: np.ndarray = None                  # energy-series time axis
    energy_fom: np.ndarray = None             # (T_e, p)
    energy_rom: np.ndarray = None
    hamiltonian_fom: np.ndarray = None
    hamiltonian_rom: np.ndarray = None
    error_times: np.ndarray = None
    eps_x: np.ndarray = None
    eps_v: np.ndarray = None
    target_x: np.ndarray = None
    target_v: np.ndarray = None
    eps_total: np.ndarray = None
    target_total: np.ndarray = None
    ham_error_times: np.ndarray = None
    ham_rel_error: np.ndarray = None
    dh_total: np.ndarray = None
    dh_coeff: np.ndarray = None
    dh_coeff_dd: np.ndarray = None
    rank_times: np.ndarray = None
    rank_potential: np.ndarray = None
    rank_x: np.ndarray = None
    rank_v: np.ndarray = None
    ortho_residuals: np.ndarray = None        # per step
    sympl_residuals: np.ndarray = None
    fp_iterations: np.ndarray = None
    dmd_ranks: np.ndarray = None
    s_conds: np.ndarray = None
    dmd_imag_defect: float = 0.0
    phase_totals: dict = field(default_factory=dict)
    phase_series: dict = field(default_factory=dict)
    fom_step_seconds: np.ndarray = None
    rates: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
