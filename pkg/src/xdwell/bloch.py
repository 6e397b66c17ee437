"""Weak-excitation two-level dynamics driven by a sampled envelope.

Integrates the amplitude equation dc/dt = (i*Delta - Gamma/2) c + i*Omega(t)/2
with fixed-step RK4, derives excitation/de-excitation flows from P_e = |c|^2,
and attributes the eventual fate (coherent forward return vs spontaneous
scattering) of excitation present at each instant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, WeakExcitationError
from .medium import SampledEnvelope

__all__ = [
    "BlochConfig",
    "ExcitationRecord",
    "FateProfile",
    "TruncatedDecayWarning",
    "integrate_weak_bloch",
    "pulse_area",
    "detect_phase_flip",
    "excitation_time",
    "fate_fractions",
]

_WEAK_PE_LIMIT = 1e-2
_STEP_DIVISOR = 50.0


class TruncatedDecayWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BlochConfig:
    """Integration setup: decay rate, atom-vs-carrier detuning, drive scale, step."""

    gamma: float  # rad/s
    rabi_per_amplitude: float  # rad/s per unit envelope amplitude
    integrator_dt: float  # seconds
    detuning: float = 0.0  # rad/s

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.rabi_per_amplitude <= 0:
            raise ConfigError("rabi_per_amplitude must be > 0")
        if self.integrator_dt <= 0:
            raise ConfigError("integrator_dt must be > 0")
        if self.integrator_dt > (1.0 / self.gamma) / _STEP_DIVISOR:
            raise ConfigError(
                f"integrator_dt={self.integrator_dt:g} exceeds lifetime/"
                f"{_STEP_DIVISOR:g} = {(1.0 / self.gamma) / _STEP_DIVISOR:g}"
            )


@dataclass(frozen=True)
class ExcitationRecord:
    """P_e(t) with rectified excitation/de-excitation flows on a uniform grid."""

    t0: float
    dt: float
    gamma: float
    pe: np.ndarray
    up_flow: np.ndarray
    coh_down_flow: np.ndarray
    spont_flow: np.ndarray

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.pe.size)


@dataclass(frozen=True)
class FateProfile:
    """f_coh(t): probability that excitation present at t returns coherently."""

    t0: float
    dt: float
    f_coh: np.ndarray

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.f_coh.size)


def _envelope_rms_width(env: SampledEnvelope) -> float:
    p = np.abs(env.samples) ** 2
    total = p.sum()
    if total == 0:
        return np.inf
    t = env.times()
    mean = (p * t).sum() / total
    var = (p * (t - mean) ** 2).sum() / total
    return float(np.sqrt(max(var, 0.0)))


def _integration_grid(env: SampledEnvelope, cfg: BlochConfig):
    t = env.times()
    span = t[-1] - t[0]
    n_steps = int(np.ceil(span / cfg.integrator_dt))
    h = span / n_steps
    grid = t[0] + h * np.arange(n_steps + 1)
    return grid, h


def _resample(samples: np.ndarray, t_src: np.ndarray, t_dst: np.ndarray) -> np.ndarray:
    return (np.interp(t_dst, t_src, samples.real)
            + 1j * np.interp(t_dst, t_src, samples.imag))


def _integrate_pe_many(omega_rows: np.ndarray, t_src: np.ndarray, cfg: BlochConfig):
    """RK4 for a stack of drive histories sharing one time grid.

    omega_rows: (m, n) complex Rabi frequencies on t_src.
    Returns (t_grid, step, pe) with pe of shape (m, n_steps + 1).
    """
    span = t_src[-1] - t_src[0]
    n_steps = int(np.ceil(span / cfg.integrator_dt))
    h = span / n_steps
    grid = t_src[0] + h * np.arange(n_steps + 1)
    mids = grid[:-1] + 0.5 * h

    m = omega_rows.shape[0]
    om_g = np.empty((m, n_steps + 1), dtype=complex)
    om_m = np.empty((m, n_steps), dtype=complex)
    for i in range(m):
        om_g[i] = _resample(omega_rows[i], t_src, grid)
        om_m[i] = _resample(omega_rows[i], t_src, mids)

    lam = 1j * cfg.detuning - 0.5 * cfg.gamma
    c = np.zeros(m, dtype=complex)
    pe = np.empty((m, n_steps + 1))
    pe[:, 0] = 0.0
    for n in range(n_steps):
        o0, om, o1 = om_g[:, n], om_m[:, n], om_g[:, n + 1]
        k1 = lam * c + 0.5j * o0
        k2 = lam * (c + 0.5 * h * k1) + 0.5j * om
        k3 = lam * (c + 0.5 * h * k2) + 0.5j * om
        k4 = lam * (c + h * k3) + 0.5j * o1
        c = c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pe[:, n + 1] = np.abs(c) ** 2
    return grid, h, pe


def _flows(pe: np.ndarray, h: float, gamma: float):
    """Rectified flows from P_e: centered differences, one-sided at the ends."""
    dpe = np.gradient(pe, h, axis=-1)
    net = dpe + gamma * pe
    up = np.clip(net, 0.0, None)
    coh_down = np.clip(-net, 0.0, None)
    spont = gamma * pe
    return up, coh_down, spont


def integrate_weak_bloch(env: SampledEnvelope, cfg: BlochConfig) -> ExcitationRecord:
    """Integrate the weak-drive amplitude equation for one envelope."""
    width = _envelope_rms_width(env)
    limit = min(1.0 / cfg.gamma, width) / _STEP_DIVISOR
    if cfg.integrator_dt > limit * (1.0 + 1e-12):
        raise ConfigError(
            f"integrator_dt={cfg.integrator_dt:g} exceeds "
            f"min(lifetime, pulse rms)/{_STEP_DIVISOR:g} = {limit:g}"
        )
    omega = cfg.rabi_per_amplitude * env.samples
    grid, h, pe = _integrate_pe_many(omega[None, :], env.times(), cfg)
    peak = float(pe.max())
    if peak >= _WEAK_PE_LIMIT:
        raise WeakExcitationError(
            f"peak excitation probability {peak:.3e} >= {_WEAK_PE_LIMIT:g}; "
            "reduce rabi_per_amplitude", peak)
    up, coh_down, spont = _flows(pe[0], h, cfg.gamma)
    return ExcitationRecord(t0=grid[0], dt=h, gamma=cfg.gamma, pe=pe[0],
                            up_flow=up, coh_down_flow=coh_down, spont_flow=spont)


def pulse_area(env: SampledEnvelope, cfg: BlochConfig) -> float:
    """Pulse area along the initial phase axis; flipped portions count negative."""
    samples = env.samples
    ref = samples[np.argmax(np.abs(samples))]
    if ref == 0:
        return 0.0
    phase = ref / abs(ref)
    proj = (samples * np.conj(phase)).real
    return float(cfg.rabi_per_amplitude * np.trapezoid(proj, dx=env.dt))


def detect_phase_flip(env: SampledEnvelope, min_run: int = 3):
    """Earliest time where the envelope's initial-phase projection goes and
    stays negative for at least `min_run` samples; None if it never does."""
    samples = env.samples
    peak_idx = int(np.argmax(np.abs(samples)))
    ref = samples[peak_idx]
    if ref == 0:
        return None
    proj = (samples * np.conj(ref / abs(ref))).real
    # a thin medium's trailing scattered wave is negative but negligible; a
    # flip only counts when the flipped field is a meaningful pulse fraction
    floor = -5e-3 * np.abs(proj).max()
    # only the trailing side counts; leading-edge ringing is grid artifact
    neg = proj < floor
    neg[:peak_idx] = False
    run = 0
    for i in range(neg.size):
        run = run + 1 if neg[i] else 0
        if run >= min_run:
            start = i - min_run + 1
            return float(env.t0 + env.dt * start)
    return None


def excitation_time(rec: ExcitationRecord) -> float:
    """Trapezoidal integral of P_e over the record's grid, in seconds."""
    peak = rec.pe.max()
    if peak > 0 and rec.pe[-1] > 1e-6 * peak:
        warnings.warn(
            f"P_e at the final sample is {rec.pe[-1] / peak:.2e} of its peak; "
            "the decay tail is truncated", TruncatedDecayWarning)
    return float(np.trapezoid(rec.pe, dx=rec.dt))


_CLAMP_REPORT = 1e-6


def _fate_fractions_many(pe: np.ndarray, coh_down: np.ndarray, h: float,
                         gamma: float) -> np.ndarray:
    """Backward integration of the coherent-fate fraction for stacked records.

    With hazard hz = coh_down/pe the fraction obeys
    f' = -hz + (gamma + hz) f, integrated backward with f(end) = 0 using a
    piecewise-constant-hazard exponential step.
    """
    peak = pe.max()
    floor = peak * 1e-12 if peak > 0 else 0.0
    # where P_e touches zero under active coherent removal (a 0-pi flip
    # emptying the state) the hazard diverges; flooring P_e saturates the
    # fate fraction at 1 there, and pe * f keeps those points weightless
    with np.errstate(divide="ignore", invalid="ignore"):
        hz = np.where(coh_down > 0, coh_down / np.maximum(pe, floor), 0.0)
    f = np.zeros_like(pe)
    n_steps = pe.shape[-1] - 1
    for n in range(n_steps - 1, -1, -1):
        hm = 0.5 * (hz[..., n] + hz[..., n + 1])
        lam = gamma + hm
        decay = np.exp(-lam * h)
        f[..., n] = (hm / lam) * (1.0 - decay) + decay * f[..., n + 1]
    over = max(f.max() - 1.0, -f.min(), 0.0)
    if over > _CLAMP_REPORT:
        warnings.warn(f"f_coh clamped by {over:.2e} (> {_CLAMP_REPORT:g})")
    np.clip(f, 0.0, 1.0, out=f)
    # excitation alive after the last coherent removal can only decay spontaneously
    any_coh = coh_down > 0
    for i in range(f.shape[0]):
        idx = np.flatnonzero(any_coh[i])
        if idx.size:
            f[i, idx[-1] + 1:] = 0.0
        else:
            f[i, :] = 0.0
    return f


def fate_fractions(rec: ExcitationRecord) -> FateProfile:
    """Probability that excitation present at each time ends in coherent return."""
    f = _fate_fractions_many(rec.pe[None, :], rec.coh_down_flow[None, :],
                             rec.dt, rec.gamma)
    return FateProfile(t0=rec.t0, dt=rec.dt, f_coh=f[0])
