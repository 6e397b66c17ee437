"""Two-level absorbing medium and linear spectral-domain pulse propagation.

The medium is a homogeneous Lorentzian line of peak (intensity) optical
depth a0 and decay rate Gamma.  Envelope samples use the convention that a
spectral component exp(+i*w*t) of the envelope sits at detuning
carrier_detuning + w from line centre; the causal field transfer for that
component over a depth fraction d is exp(-d*(a/2 + i*phi)).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError, ConvergenceError, WindowLeakageError

__all__ = [
    "MediumSpec",
    "PulseSpec",
    "SampledEnvelope",
    "TransferSample",
    "gaussian_envelope",
    "lorentzian_od",
    "dispersion_phase",
    "field_transfer",
    "transfer_curve",
    "propagate_spectral",
    "transmission_probability",
    "pulse_spectrum",
    "spectral_rms_hz",
]


@dataclass(frozen=True)
class MediumSpec:
    """Absorbing line: peak resonant OD, decay rate, optional partial length."""

    peak_od: float
    gamma: float  # rad/s
    length_fraction: float = 1.0

    def __post_init__(self):
        if self.peak_od < 0:
            raise ConfigError(f"peak_od must be >= 0, got {self.peak_od}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not 0.0 <= self.length_fraction <= 1.0:
            raise ConfigError(
                f"length_fraction must be in [0, 1], got {self.length_fraction}"
            )

    @property
    def tau_sp(self) -> float:
        """Spontaneous lifetime in seconds (exactly 1/gamma)."""
        return 1.0 / self.gamma

    @classmethod
    def from_lifetime(cls, peak_od, tau_sp, length_fraction=1.0):
        return cls(peak_od=peak_od, gamma=1.0 / tau_sp, length_fraction=length_fraction)

    def with_od(self, peak_od) -> "MediumSpec":
        return dataclasses.replace(self, peak_od=peak_od)


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian signal pulse; intensity_rms is the rms of the intensity profile."""

    intensity_rms: float  # seconds
    carrier_detuning: float = 0.0  # rad/s from line centre
    mean_photons: float = 1.0
    shape: str = "gaussian"

    def __post_init__(self):
        if self.shape != "gaussian":
            raise ConfigError(f"unsupported pulse shape {self.shape!r}")
        if self.intensity_rms <= 0:
            raise ConfigError("intensity_rms must be > 0")
        if self.mean_photons < 0:
            raise ConfigError("mean_photons must be >= 0")


@dataclass(frozen=True)
class SampledEnvelope:
    """Complex field envelope on a uniform time grid.

    Samples carry square-root photon-flux units, so
    dt * sum(|samples|^2) is the pulse mean photon number.
    """

    t0: float
    dt: float
    samples: np.ndarray
    carrier_detuning: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 1 or samples.size < 2:
            raise ConfigError("samples must be a 1-d array with >= 2 entries")
        if not np.all(np.isfinite(samples)):
            raise ConfigError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def photon_number(self) -> float:
        return float(self.dt * np.sum(np.abs(self.samples) ** 2))

    def edge_energy_fraction(self, edge=0.05) -> float:
        """Fraction of |samples|^2 energy in the outermost `edge` of the grid."""
        p = np.abs(self.samples) ** 2
        total = p.sum()
        if total == 0:
            return 0.0
        k = max(1, int(round(edge * p.size / 2.0)))
        return float((p[:k].sum() + p[-k:].sum()) / total)


@dataclass(frozen=True)
class TransferSample:
    """One point of the medium transfer: amplitude OD a/2 and phase."""

    detuning: float
    amplitude_od: float
    phase: float

    def __post_init__(self):
        if self.amplitude_od < 0:
            raise ConfigError("amplitude_od must be >= 0")


def gaussian_envelope(
    pulse: PulseSpec,
    n_samples: int = 2048,
    span_sigmas: float = 16.0,
    tail: float = 0.0,
) -> SampledEnvelope:
    """Sample the Gaussian field envelope exp(-t^2/(4 sigma_t^2)).

    The grid spans [-span_sigmas*sigma_t, +span_sigmas*sigma_t + tail];
    `tail` buys extra room after the pulse, e.g. for lifetime decay.
    """
    s = pulse.intensity_rms
    lo, hi = -span_sigmas * s, span_sigmas * s + tail
    dt = (hi - lo) / n_samples
    t = lo + dt * np.arange(n_samples)
    amp = np.sqrt(pulse.mean_photons / (s * np.sqrt(2.0 * np.pi)))
    samples = amp * np.exp(-(t**2) / (4.0 * s**2)) + 0.0j
    return SampledEnvelope(t0=lo, dt=dt, samples=samples,
                           carrier_detuning=pulse.carrier_detuning)


def lorentzian_od(delta, medium: MediumSpec):
    """Intensity optical depth a(delta) = a0 / (1 + (2 delta/Gamma)^2)."""
    x = 2.0 * np.asarray(delta, dtype=float) / medium.gamma
    return medium.peak_od / (1.0 + x * x)


def dispersion_phase(delta, medium: MediumSpec):
    """Kramers-Kronig phase -(a0/2)(2 delta/Gamma)/(1 + (2 delta/Gamma)^2)."""
    x = 2.0 * np.asarray(delta, dtype=float) / medium.gamma
    return -(medium.peak_od / 2.0) * x / (1.0 + x * x)


def field_transfer(delta, medium: MediumSpec, depth_fraction: float = 1.0):
    """Complex field amplitude transfer over `depth_fraction` of the medium."""
    a = lorentzian_od(delta, medium)
    phi = dispersion_phase(delta, medium)
    return np.exp(-depth_fraction * (0.5 * a + 1.0j * phi))


def transfer_curve(deltas, medium: MediumSpec):
    """Medium transfer sampled on a detuning grid, as TransferSample records."""
    deltas = np.asarray(deltas, dtype=float)
    a = lorentzian_od(deltas, medium)
    phi = dispersion_phase(deltas, medium)
    return [TransferSample(float(d), float(ai / 2.0), float(pi))
            for d, ai, pi in zip(deltas, a, phi)]


_INPUT_LEAK_TOL = 1e-6
_OUTPUT_LEAK_TOL = 1e-4


def _propagate_samples(env: SampledEnvelope, medium: MediumSpec, depths) -> np.ndarray:
    """Envelope samples after each depth fraction in `depths`; shape (len, N)."""
    n = env.samples.size
    w = 2.0 * np.pi * np.fft.fftfreq(n, env.dt)
    delta = env.carrier_detuning + w
    a = lorentzian_od(delta, medium)
    phi = dispersion_phase(delta, medium)
    spec = np.fft.fft(env.samples)
    depths = np.asarray(depths, dtype=float)
    h = np.exp(np.outer(depths, -(0.5 * a + 1.0j * phi)))
    return np.fft.ifft(h * spec[None, :], axis=1)


def propagate_spectral(env: SampledEnvelope, medium: MediumSpec,
                       depth_fraction: float | None = None) -> SampledEnvelope:
    """Propagate an envelope through `depth_fraction` of the medium.

    FFT to the spectral domain, apply the causal Lorentzian transfer
    (absorption and dispersion both scaled by depth), and transform back.
    """
    if depth_fraction is None:
        depth_fraction = medium.length_fraction
    if not 0.0 <= depth_fraction <= 1.0:
        raise ConfigError(f"depth_fraction must be in [0, 1], got {depth_fraction}")
    leak_in = env.edge_energy_fraction()
    if leak_in > _INPUT_LEAK_TOL:
        raise WindowLeakageError(
            f"input envelope carries {leak_in:.2e} of its energy in the outermost "
            f"5% of the grid (limit {_INPUT_LEAK_TOL:g}); widen the window",
            achieved=leak_in,
        )
    out = _propagate_samples(env, medium, [depth_fraction])[0]
    result = SampledEnvelope(t0=env.t0, dt=env.dt, samples=out,
                             carrier_detuning=env.carrier_detuning)
    leak_out = result.edge_energy_fraction()
    if leak_out > _OUTPUT_LEAK_TOL:
        raise WindowLeakageError(
            f"propagated envelope carries {leak_out:.2e} of its energy in the "
            f"outermost 5% of the grid (limit {_OUTPUT_LEAK_TOL:g})",
            achieved=leak_out,
        )
    return result


def spectral_rms_hz(pulse: PulseSpec) -> float:
    """Rms width in Hz of the Gaussian spectral intensity density, 1/(4 pi sigma_t)."""
    return 1.0 / (4.0 * np.pi * pulse.intensity_rms)


def _spectral_sigma(pulse: PulseSpec) -> float:
    # rms of the spectral intensity density, in rad/s
    return 1.0 / (2.0 * pulse.intensity_rms)


def pulse_spectrum(pulse: PulseSpec, n_points: int = 2001, span_sigmas: float = 8.0):
    """Normalized spectral intensity density of the pulse.

    Returns (detunings, density): detunings in rad/s from line centre,
    density in s/rad, integrating to 1.
    """
    sw = _spectral_sigma(pulse)
    delta = pulse.carrier_detuning + np.linspace(-span_sigmas, span_sigmas, n_points) * sw
    x = (delta - pulse.carrier_detuning) / sw
    density = np.exp(-0.5 * x * x) / (sw * np.sqrt(2.0 * np.pi))
    return delta, density


_QUAD_TOL = 1e-6


def transmission_probability(pulse: PulseSpec, medium: MediumSpec) -> float:
    """Spectrally averaged transmission: integral of rho(delta) exp(-a(delta)).

    Evaluated by adaptive quadrature over the pulse's Gaussian spectral
    intensity density, independently of the time-domain propagation path.
    """
    if medium.peak_od == 0:
        return 1.0
    sw = _spectral_sigma(pulse)

    def integrand(x):
        d = pulse.carrier_detuning + sw * x
        return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi) * np.exp(-lorentzian_od(d, medium))

    value, abserr = quad(integrand, -np.inf, np.inf, limit=200)
    if abserr > _QUAD_TOL:
        raise ConvergenceError(
            f"transmission quadrature reached abs error {abserr:.2e} "
            f"(target {_QUAD_TOL:g})",
            achieved=abserr,
        )
    return float(value)
