"""Synthetic shot generator: phase traces with click flags and truth metadata.

Each 576-ns shot holds 36 probe-phase samples.  The generator embeds the
true per-photon dwell contributions (via the cross-phase-shift template),
Poisson photon statistics with binomial transmission/detection thinning,
dark counts, cubic background drift, a damped-oscillation spurious
correlation, shared proportional noise, and white phase noise.

Campaigns are deterministic and order independent: shots are produced in
fixed-size batches, each drawn from a counter-based Philox substream keyed
by (seed, batch index), so any parallelism width yields identical output.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError

__all__ = [
    "OscillationSpec",
    "ExperimentConfig",
    "XpsTemplate",
    "ShotRecord",
    "CampaignSummary",
    "xps_template",
    "xps_template_curve",
    "generate_shot",
    "iter_batches",
    "run_campaign",
    "anchored_phi_atom",
    "tau0_per_photon",
    "expected_click_rate",
    "BATCH_SIZE",
]

BATCH_SIZE = 1 << 16

# phi_0 anchor: -20.0 urad per photon at a probe detuning of -2*pi*5.6 MHz
_ANCHOR_PHI0 = -20.0e-6
_ANCHOR_DETUNING = -2.0 * np.pi * 5.6e6


@dataclass(frozen=True)
class OscillationSpec:
    """Damped-cosine spurious background correlated with the shared noise."""

    amplitude: float = 0.0  # rad
    period: float = 500e-9  # s
    damping: float = 400e-9  # s (1/e time)
    eps_coupling: float = 1.0  # weight of the shared fluctuation in the amplitude

    def __post_init__(self):
        if self.period <= 0 or self.damping <= 0:
            raise ConfigError("oscillation period and damping must be > 0")


@dataclass
class ExperimentConfig:
    """Everything needed to synthesize one campaign of shots."""

    mean_photons: float = 34.0
    p_transmit: float = 0.4019
    eta_detect: float = 0.0212
    dark_prob: float = 0.01
    phi_atom: float | None = None  # rad per excited atom; anchored if None
    probe_detuning: float = _ANCHOR_DETUNING  # rad/s
    tau_sp: float = 26.5e-9
    sigma_t: float = 10e-9  # signal pulse intensity rms
    shot_len: float = 576e-9
    n_samples: int = 36
    sample_dt: float = 16e-9
    arrival_index: int = 11  # pulse enters at ~175 ns
    meas_bandwidth: float = 25e6  # Hz, single pole
    phase_noise_rms: float = 0.15  # rad per sample
    drift: tuple = (3e-3, 3e-3, 2e-3, 2e-3)  # cubic coefficient RMS, rad
    osc: OscillationSpec = field(default_factory=OscillationSpec)
    prop_noise_s: float = 0.0
    od_coupling: float = 0.0  # exponent coupling of the shared noise into P_T
    tauT_frac: float = 0.77  # injected tau_T / tau_0
    tauL_frac: float = 0.9  # injected tau_L / tau_sp

    def __post_init__(self):
        self.validate()
        if self.phi_atom is None:
            self.phi_atom = anchored_phi_atom(self)

    def validate(self):
        for name in ("p_transmit", "eta_detect", "dark_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.mean_photons < 0:
            raise ConfigError("mean_photons must be >= 0")
        if self.tau_sp <= 0 or self.sigma_t <= 0:
            raise ConfigError("tau_sp and sigma_t must be > 0")
        if self.n_samples * self.sample_dt > self.shot_len * (1.0 + 1e-12):
            raise ConfigError("n_samples * sample_dt must not exceed shot_len")
        if not 0 <= self.arrival_index < self.n_samples:
            raise ConfigError("arrival_index out of range")
        if not 0.05 <= self.phase_noise_rms <= 0.5:
            raise ConfigError(
                f"phase_noise_rms must be in [0.05, 0.5] rad, got "
                f"{self.phase_noise_rms}")
        if len(self.drift) != 4:
            raise ConfigError("drift must hold 4 coefficient scales")
        if self.prop_noise_s < 0:
            raise ConfigError("prop_noise_s must be >= 0")
        if not 0.0 <= self.tauT_frac * self.p_transmit < 1.0:
            raise ConfigError("tauT_frac * p_transmit must be in [0, 1)")
        if self.tauL_frac < 0:
            raise ConfigError("tauL_frac must be >= 0")
        if self.mean_photons > 0:
            rate = expected_click_rate(self)
            if not 0.05 <= rate <= 0.6:
                warnings.warn(
                    f"expected click rate {rate:.3f} is far from the "
                    "documented 0.1-0.5 operating range")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class XpsTemplate:
    """Peak-normalized cross-phase-shift shape on the 36 sample points."""

    samples: np.ndarray
    area: float  # seconds; sum(samples) * sample_dt, the dwell normalization
    arrival_index: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if abs(s.max() - 1.0) > 1e-12:
            raise ConfigError("template must be peak-normalized to 1")
        if np.any(s[: self.arrival_index] != 0.0):
            raise ConfigError("template must be zero before pulse arrival")
        if s[-1] > 0.05:
            raise ConfigError("template must decay below 0.05 by the last sample")


@dataclass(frozen=True)
class ShotRecord:
    """One shot: 36 phase samples, click flag, optional truth metadata."""

    phases: np.ndarray
    click: bool
    truth: tuple | None = None  # (n_incident, n_transmitted, n_detected, dwell_s)

    def __post_init__(self):
        if not np.all(np.isfinite(self.phases)):
            raise ConfigError("phases must be finite")
        if self.truth is not None:
            n, n_t, n_d, _ = self.truth
            if not (n_d <= n_t <= n):
                raise ConfigError("truth must satisfy n_det <= n_T <= n")


@dataclass(frozen=True)
class CampaignSummary:
    n_shots: int
    click_rate: float
    mean_phases: np.ndarray
    mean_dwell: float | None
    mean_transmitted: float | None
    digest: str
    path: str | None


def expected_click_rate(cfg: ExperimentConfig) -> float:
    """Thinned-Poisson click probability including dark counts."""
    p_signal = -np.expm1(-cfg.eta_detect * cfg.p_transmit * cfg.mean_photons)
    return float(1.0 - (1.0 - p_signal) * (1.0 - cfg.dark_prob))


def tau0_per_photon(cfg: ExperimentConfig) -> float:
    """Mean dwell (seconds) caused by one incident photon, from the injected
    per-photon fractions; solves the self-consistent decomposition
    tau0 = P_L * tauL_frac * tau_sp + P_T * tauT_frac * tau0."""
    p_l = 1.0 - cfg.p_transmit
    return p_l * cfg.tauL_frac * cfg.tau_sp / (1.0 - cfg.p_transmit * cfg.tauT_frac)


def xps_template_curve(cfg: ExperimentConfig, dt_fine: float = 0.25e-9):
    """Un-normalized fine-grid template: unit-area Gaussian pulse intensity
    convolved with the lifetime decay (DC gain tau_sp), then low-passed at
    the measurement bandwidth (DC gain 1)."""
    n = int(round(cfg.shot_len / dt_fine))
    t = dt_fine * np.arange(n)
    center = cfg.arrival_index * cfg.sample_dt + 1.5 * cfg.sigma_t
    intensity = np.exp(-0.5 * ((t - center) / cfg.sigma_t) ** 2)
    intensity /= intensity.sum() * dt_fine
    b_life = np.exp(-dt_fine / cfg.tau_sp)
    curve = lfilter([cfg.tau_sp * (1.0 - b_life)], [1.0, -b_life], intensity)
    b_lp = np.exp(-2.0 * np.pi * cfg.meas_bandwidth * dt_fine)
    curve = lfilter([1.0 - b_lp], [1.0, -b_lp], curve)
    return t, curve


def xps_template(cfg: ExperimentConfig) -> XpsTemplate:
    """Template sampled at the 36 shot sample points, peak-normalized, gated
    to zero before the pulse-arrival sample."""
    t_fine, curve = xps_template_curve(cfg)
    t_samp = cfg.sample_dt * np.arange(cfg.n_samples)
    values = np.interp(t_samp, t_fine, curve)
    values[: cfg.arrival_index] = 0.0
    values /= values.max()
    area = float(values.sum() * cfg.sample_dt)
    return XpsTemplate(samples=values, area=area, arrival_index=cfg.arrival_index)


def _drift_basis(cfg: ExperimentConfig) -> np.ndarray:
    t = cfg.sample_dt * np.arange(cfg.n_samples)
    x = 2.0 * t / t[-1] - 1.0
    return np.stack([np.ones_like(x), x, x**2, x**3])


def _osc_shape(cfg: ExperimentConfig) -> np.ndarray:
    t = cfg.sample_dt * np.arange(cfg.n_samples)
    return np.cos(2.0 * np.pi * t / cfg.osc.period) * np.exp(-t / cfg.osc.damping)


def anchored_phi_atom(cfg: ExperimentConfig) -> float:
    """Default probe phase per excited atom.

    Anchored so that the per-photon peak phase equals -20.0 urad at a probe
    detuning of -5.6 MHz, with the odd dispersive dependence x/(1+x^2) on
    the probe detuning.
    """
    template = xps_template(cfg.replace(phi_atom=1.0))
    tau0 = tau0_per_photon(cfg)
    gamma = 1.0 / cfg.tau_sp

    def shape(detuning):
        x = 2.0 * detuning / gamma
        return x / (1.0 + x * x)

    scale = _ANCHOR_PHI0 / shape(_ANCHOR_DETUNING)
    phi0_target = scale * shape(cfg.probe_detuning)
    if tau0 == 0.0:
        # null campaign: keep the anchor-detuning conversion constant
        tau0 = tau0_per_photon(cfg.replace(tauT_frac=0.77, tauL_frac=0.9))
    return float(phi0_target * template.area / tau0)


def _generate_batch(cfg: ExperimentConfig, template: XpsTemplate,
                    rng: np.random.Generator, m: int):
    """Vectorized generation of m shots; returns (phases, clicks, truth)."""
    eps = cfg.prop_noise_s * rng.standard_normal(m)
    lam = np.clip(cfg.mean_photons * (1.0 + eps), 0.0, None)
    n = rng.poisson(lam)
    p_t = np.clip(cfg.p_transmit ** (1.0 + cfg.od_coupling * eps), 0.0, 1.0)
    n_t = rng.binomial(n, p_t)
    n_det = rng.binomial(n_t, cfg.eta_detect)
    dark = rng.random(m) < cfg.dark_prob
    clicks = (n_det > 0) | dark

    tau0 = tau0_per_photon(cfg)
    dwell = (n - n_t) * (cfg.tauL_frac * cfg.tau_sp) + n_t * (cfg.tauT_frac * tau0)

    coeffs = rng.standard_normal((m, 4)) * np.asarray(cfg.drift)
    phases = coeffs @ _drift_basis(cfg)
    if cfg.osc.amplitude != 0.0:
        g = rng.standard_normal(m)
        amp = cfg.osc.amplitude * (g + cfg.osc.eps_coupling * eps)
        phases += amp[:, None] * _osc_shape(cfg)[None, :]
    phases += (cfg.phi_atom * dwell / template.area)[:, None] * template.samples[None, :]
    phases += cfg.phase_noise_rms * rng.standard_normal((m, cfg.n_samples))

    truth = np.column_stack([n, n_t, n_det, dwell]).astype(np.float64)
    return phases, clicks, truth


def generate_shot(cfg: ExperimentConfig, rng: np.random.Generator,
                  with_truth: bool = True) -> ShotRecord:
    """Draw a single shot from an already positioned random stream."""
    template = xps_template(cfg)
    phases, clicks, truth = _generate_batch(cfg, template, rng, 1)
    t = tuple(truth[0]) if with_truth else None
    return ShotRecord(phases=phases[0], click=bool(clicks[0]), truth=t)


def _batch_rng(seed: int, batch_index: int) -> np.random.Generator:
    key = np.array([seed, batch_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def iter_batches(cfg: ExperimentConfig, n_shots: int, seed: int,
                 batch_size: int = BATCH_SIZE):
    """Yield (phases, clicks, truth) batches for a deterministic campaign."""
    if n_shots < 1:
        raise ConfigError("n_shots must be >= 1")
    template = xps_template(cfg)
    produced = 0
    batch_index = 0
    while produced < n_shots:
        m = min(batch_size, n_shots - produced)
        rng = _batch_rng(seed, batch_index)
        yield _generate_batch(cfg, template, rng, m)
        produced += m
        batch_index += 1


def run_campaign(cfg: ExperimentConfig, n_shots: int, seed: int,
                 out_path=None, with_truth: bool = True,
                 workers: int = 1) -> CampaignSummary:
    """Generate a campaign, optionally persisting it to the shot-record file.

    Deterministic for fixed (cfg, seed): identical inputs yield byte-identical
    files at any worker count, because every batch has its own keyed substream.
    """
    from . import shotfile  # deferred to keep the module graph acyclic

    digest = shotfile.config_digest(shotfile.canonical_config_text(
        shotfile.experiment_sections(cfg)))
    writer = None
    if out_path is not None:
        writer = shotfile.ShotFileWriter(out_path, n_samples=cfg.n_samples,
                                         digest=digest, with_truth=with_truth)
    n_click = 0
    phase_sum = np.zeros(cfg.n_samples)
    dwell_sum = 0.0
    transmitted_sum = 0.0
    try:
        for phases, clicks, truth in _campaign_batches(cfg, n_shots, seed, workers):
            n_click += int(clicks.sum())
            phase_sum += phases.sum(axis=0)
            dwell_sum += float(truth[:, 3].sum())
            transmitted_sum += float(truth[:, 1].sum())
            if writer is not None:
                writer.append(phases, clicks, truth if with_truth else None)
    finally:
        if writer is not None:
            writer.close()
    return CampaignSummary(
        n_shots=n_shots,
        click_rate=n_click / n_shots,
        mean_phases=phase_sum / n_shots,
        mean_dwell=(dwell_sum / n_shots) if with_truth else None,
        mean_transmitted=(transmitted_sum / n_shots) if with_truth else None,
        digest=digest.hex(),
        path=None if out_path is None else str(out_path),
    )


def _campaign_batches(cfg: ExperimentConfig, n_shots: int, seed: int,
                      workers: int):
    if workers <= 1:
        yield from iter_batches(cfg, n_shots, seed)
        return
    from concurrent.futures import ProcessPoolExecutor

    sizes = []
    produced = 0
    while produced < n_shots:
        m = min(BATCH_SIZE, n_shots - produced)
        sizes.append(m)
        produced += m
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_worker_batch, cfg, n_shots, seed, i, m)
                   for i, m in enumerate(sizes)]
        for fut in futures:  # submission order == batch order
            yield fut.result()


def _worker_batch(cfg, n_shots, seed, batch_index, m):
    template = xps_template(cfg)
    rng = _batch_rng(seed, batch_index)
    return _generate_batch(cfg, template, rng, m)
