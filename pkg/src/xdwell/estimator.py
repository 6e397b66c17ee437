"""Post-selection estimator: binning, template fits, noise correction.

Shots are split into click / no-click bins; the per-sample difference
trace isolates the effect of a single transmitted photon.  Amplitudes are
extracted by weighted linear least squares against a cubic background
plus the cross-phase-shift template, mirroring the fit used on the
measured traces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InsufficientBinError,
    RankDeficiencyError,
)
from .shots import XpsTemplate

__all__ = [
    "RunningMoments",
    "BinnedTraces",
    "FitResult",
    "CombinedEstimate",
    "NoiseCalibration",
    "ClickCheckReport",
    "bin_and_average",
    "fit_phi0",
    "fit_transmitted",
    "calibrate_proportional_noise",
    "correct_phi_T",
    "combine_detunings",
    "click_inference_check",
]

MIN_BIN_POPULATION = 100


class RunningMoments:
    """Streaming per-sample mean/variance with mergeable partial moments."""

    def __init__(self, width: int):
        self.count = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def add_batch(self, x: np.ndarray):
        m = x.shape[0]
        if m == 0:
            return
        batch_mean = x.mean(axis=0)
        batch_m2 = ((x - batch_mean) ** 2).sum(axis=0)
        self._merge(m, batch_mean, batch_m2)

    def merge(self, other: "RunningMoments"):
        self._merge(other.count, other.mean, other.m2)

    def _merge(self, n2, mean2, m2_2):
        if n2 == 0:
            return
        n1 = self.count
        if n1 == 0:
            self.count, self.mean, self.m2 = n2, mean2.copy(), m2_2.copy()
            return
        total = n1 + n2
        delta = mean2 - self.mean
        self.mean = self.mean + delta * (n2 / total)
        self.m2 = self.m2 + m2_2 + delta**2 * (n1 * n2 / total)
        self.count = total

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.count - 1)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self.count)


@dataclass(frozen=True)
class BinnedTraces:
    """Per-sample means and errors in the click / no-click bins."""

    phi_click: np.ndarray
    phi_noclick: np.ndarray
    delta_phi: np.ndarray
    se_click: np.ndarray
    se_noclick: np.ndarray
    se_delta: np.ndarray
    n_click: int
    n_noclick: int


@dataclass(frozen=True)
class FitResult:
    """Fitted template amplitude with its error and background coefficients."""

    amplitude: float
    amplitude_se: float
    cubic_coeffs: tuple
    chi2_per_dof: float


@dataclass(frozen=True)
class CombinedEstimate:
    ratio: float
    se: float
    inputs: tuple  # of (detuning, phi_T, phi_0, ratio, ratio_se)


@dataclass(frozen=True)
class NoiseCalibration:
    s2: float
    s2_se: float
    upper_bound: bool  # fitted s2 was negative; value is consistent with 0


@dataclass(frozen=True)
class ClickCheckReport:
    excess_transmitted: float
    excess_transmitted_se: float
    excess_lost: float
    excess_lost_se: float
    expected_transmitted: float
    expected_lost: float
    n_click: int
    n_noclick: int


def _as_batches(shots):
    """Accept an iterable of (phases, clicks[, truth]) batches or one tuple."""
    if isinstance(shots, tuple) and len(shots) in (2, 3) \
            and isinstance(shots[0], np.ndarray):
        return [shots]
    return shots


def bin_and_average(shots) -> BinnedTraces:
    """Single-pass streaming means/variances per sample for each bin."""
    click_stats = None
    noclick_stats = None
    for batch in _as_batches(shots):
        phases, clicks = batch[0], np.asarray(batch[1], dtype=bool)
        if click_stats is None:
            width = phases.shape[1]
            click_stats = RunningMoments(width)
            noclick_stats = RunningMoments(width)
        click_stats.add_batch(phases[clicks])
        noclick_stats.add_batch(phases[~clicks])
    if click_stats is None:
        raise InsufficientBinError("click", 0, MIN_BIN_POPULATION)
    for name, stats in (("click", click_stats), ("no-click", noclick_stats)):
        if stats.count < MIN_BIN_POPULATION:
            raise InsufficientBinError(name, stats.count, MIN_BIN_POPULATION)
    se_c = click_stats.standard_error
    se_n = noclick_stats.standard_error
    return BinnedTraces(
        phi_click=click_stats.mean,
        phi_noclick=noclick_stats.mean,
        delta_phi=click_stats.mean - noclick_stats.mean,
        se_click=se_c,
        se_noclick=se_n,
        se_delta=np.sqrt(se_c**2 + se_n**2),
        n_click=click_stats.count,
        n_noclick=noclick_stats.count,
    )


_CONDITION_LIMIT = 1e10


def _design_matrix(n_samples: int, template: XpsTemplate) -> np.ndarray:
    x = np.linspace(-1.0, 1.0, n_samples)
    return np.column_stack([np.ones_like(x), x, x**2, x**3, template.samples])


def _weighted_fit(y: np.ndarray, sigma, template: XpsTemplate):
    n = y.size
    design = _design_matrix(n, template)
    if sigma is None:
        w = np.ones(n)
    else:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ConfigError("per-sample errors must be positive and finite")
        w = 1.0 / sigma
    aw = design * w[:, None]
    yw = y * w
    q, r = np.linalg.qr(aw)
    diag = np.abs(np.diag(r))
    condition = diag.max() / diag.min() if diag.min() > 0 else np.inf
    if condition > _CONDITION_LIMIT:
        raise RankDeficiencyError(
            f"fit design matrix ill conditioned (estimate {condition:.2e}); "
            "template may be collinear with the cubic background", condition)
    coeffs = np.linalg.solve(r, q.T @ yw)
    r_inv = np.linalg.solve(r, np.eye(r.shape[0]))
    cov = r_inv @ r_inv.T
    resid = yw - aw @ coeffs
    dof = n - design.shape[1]
    chi2_per_dof = float(resid @ resid / dof)
    if sigma is None:
        # unweighted fit: scale errors by the residual variance estimate
        cov = cov * chi2_per_dof
    return coeffs, cov, chi2_per_dof


def fit_phi0(mean_trace: np.ndarray, mean_photons: float,
             template: XpsTemplate, sigma=None) -> FitResult:
    """Per-photon peak phase: template amplitude over cubic background,
    divided by the mean photon number."""
    if mean_photons <= 0:
        raise ConfigError("mean_photons must be > 0 for a phi_0 fit")
    coeffs, cov, chi2 = _weighted_fit(np.asarray(mean_trace, float),
                                      sigma, template)
    return FitResult(
        amplitude=float(coeffs[4] / mean_photons),
        amplitude_se=float(np.sqrt(cov[4, 4]) / mean_photons),
        cubic_coeffs=tuple(float(c) for c in coeffs[:4]),
        chi2_per_dof=chi2,
    )


def fit_transmitted(delta: BinnedTraces, template: XpsTemplate) -> FitResult:
    """Single-transmitted-photon amplitude phi_T from the difference trace,
    inverse-variance weighted per sample."""
    coeffs, cov, chi2 = _weighted_fit(delta.delta_phi, delta.se_delta, template)
    return FitResult(
        amplitude=float(coeffs[4]),
        amplitude_se=float(np.sqrt(cov[4, 4])),
        cubic_coeffs=tuple(float(c) for c in coeffs[:4]),
        chi2_per_dof=chi2,
    )


def calibrate_proportional_noise(points) -> NoiseCalibration:
    """Fit the click-excess model e(mu) = 1 + s^2 mu over bright campaigns.

    `points` is a sequence of (mean_photons, excess, excess_se).  A negative
    fitted slope is reported as an upper bound consistent with zero.
    """
    points = list(points)
    if len(points) < 4:
        raise ConfigError("need at least 4 photon-number points")
    mu = np.array([p[0] for p in points], dtype=float)
    e = np.array([p[1] for p in points], dtype=float)
    se = np.array([p[2] for p in points], dtype=float)
    if np.any(se <= 0):
        raise ConfigError("excess errors must be > 0")
    w = 1.0 / se**2
    denom = float(np.sum(w * mu * mu))
    s2 = float(np.sum(w * mu * (e - 1.0)) / denom)
    s2_se = float(1.0 / np.sqrt(denom))
    return NoiseCalibration(s2=max(s2, 0.0) if s2 < 0 else s2,
                            s2_se=s2_se, upper_bound=s2 < 0)


def correct_phi_T(raw: FitResult, s2: float, mean_photons: float,
                  phi0: FitResult, s2_se: float = 0.0) -> FitResult:
    """Remove the proportional-noise contribution phi_0 * s^2 * mu from the
    fitted single-photon amplitude; errors combined in quadrature."""
    shift = phi0.amplitude * s2 * mean_photons
    se = np.sqrt(raw.amplitude_se**2
                 + (phi0.amplitude * mean_photons * s2_se) ** 2
                 + (s2 * mean_photons * phi0.amplitude_se) ** 2)
    return FitResult(
        amplitude=raw.amplitude - shift,
        amplitude_se=float(se),
        cubic_coeffs=raw.cubic_coeffs,
        chi2_per_dof=raw.chi2_per_dof,
    )


_PHI0_SIGNIFICANCE = 5.0


def combine_detunings(entries) -> CombinedEstimate:
    """Inverse-variance weighted mean of per-detuning phi_T/phi_0 ratios.

    `entries` is a sequence of (detuning, phi_T FitResult, phi_0 FitResult).
    """
    entries = list(entries)
    if not entries:
        raise ConfigError("need at least one (phi_T, phi_0) entry")
    inputs = []
    ratios = []
    variances = []
    for detuning, phi_t, phi_0 in entries:
        if abs(phi_0.amplitude) < _PHI0_SIGNIFICANCE * phi_0.amplitude_se:
            raise ConfigError(
                f"phi_0 at detuning {detuning:g} is not significant at "
                f"{_PHI0_SIGNIFICANCE:g} sigma; cannot form the ratio")
        r = phi_t.amplitude / phi_0.amplitude
        var = (phi_t.amplitude_se / phi_0.amplitude) ** 2 \
            + (phi_t.amplitude * phi_0.amplitude_se / phi_0.amplitude**2) ** 2
        ratios.append(r)
        variances.append(var)
        inputs.append((detuning, phi_t.amplitude, phi_0.amplitude,
                       r, float(np.sqrt(var))))
    w = 1.0 / np.asarray(variances)
    ratio = float(np.sum(w * np.asarray(ratios)) / np.sum(w))
    se = float(1.0 / np.sqrt(np.sum(w)))
    return CombinedEstimate(ratio=ratio, se=se, inputs=tuple(inputs))


def click_inference_check(shots_with_truth) -> ClickCheckReport:
    """Conditional photon-number excesses from truth metadata.

    Computes E[n_T | click] - E[n_T | no click] and the lost-photon
    analogue, with Monte Carlo errors; the small-efficiency analytic
    expectations are 1 and 0 respectively.
    """
    stats = {True: RunningMoments(2), False: RunningMoments(2)}
    for batch in _as_batches(shots_with_truth):
        if len(batch) < 3 or batch[2] is None:
            raise ConfigError("click_inference_check requires truth metadata")
        phases, clicks, truth = batch
        clicks = np.asarray(clicks, dtype=bool)
        n = truth[:, 0]
        n_t = truth[:, 1]
        pair = np.column_stack([n_t, n - n_t])
        stats[True].add_batch(pair[clicks])
        stats[False].add_batch(pair[~clicks])
    for name, key in (("click", True), ("no-click", False)):
        if stats[key].count < 2:
            raise InsufficientBinError(name, stats[key].count, 2)
    diff = stats[True].mean - stats[False].mean
    diff_se = np.sqrt(stats[True].standard_error ** 2
                      + stats[False].standard_error ** 2)
    return ClickCheckReport(
        excess_transmitted=float(diff[0]),
        excess_transmitted_se=float(diff_se[0]),
        excess_lost=float(diff[1]),
        excess_lost_se=float(diff_se[1]),
        expected_transmitted=1.0,
        expected_lost=0.0,
        n_click=stats[True].count,
        n_noclick=stats[False].count,
    )
