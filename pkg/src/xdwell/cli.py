"""Command-line entry points tying propagation, models, simulation and
analysis together.

Subcommands: propagate, models, simulate, analyze, calibrate.  All state
comes from an INI-style config file plus a few flags; exit codes are
0 success, 2 config error, 3 data-format error, 4 convergence error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import dwell, estimator, shotfile, shots
from .bloch import detect_phase_flip, pulse_area
from .dwell import (
    MODEL_EGALITARIAN,
    MODEL_MIN_COHERENT,
    default_bloch_config,
    egalitarian_broadband,
    min_coherent_model,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataFormatError,
    ModelPointError,
)
from .medium import (
    MediumSpec,
    PulseSpec,
    gaussian_envelope,
    propagate_spectral,
    transmission_probability,
)

__all__ = ["main"]

_FLOAT_FMT = ".17g"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


def _fmt(x) -> str:
    return format(float(x), _FLOAT_FMT)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                cell if isinstance(cell, str) else _fmt(cell)
                for cell in row) + "\n")


def _load_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parser


def _section(parser: configparser.ConfigParser, name: str,
             required: bool = True) -> dict:
    if not parser.has_section(name):
        if required:
            raise ConfigError(f"config is missing the [{name}] section")
        return {}
    return dict(parser.items(name))


def _pop_float(section: dict, key: str, default=None) -> float:
    if key not in section:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return float(default)
    raw = section.pop(key)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _pop_int(section: dict, key: str, default=None) -> int:
    value = _pop_float(section, key, default)
    if value != int(value):
        raise ConfigError(f"{key!r} must be an integer, got {value!r}")
    return int(value)


def _pop_list(section: dict, key: str, default: str) -> list:
    raw = section.pop(key, default)
    try:
        return [float(p) for p in str(raw).split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _reject_unknown(section: dict, name: str):
    if section:
        raise ConfigError(
            f"unknown keys in [{name}]: {', '.join(sorted(section))}")


def _pulse_from_config(parser) -> PulseSpec:
    body = _section(parser, "pulse")
    pulse = PulseSpec(
        intensity_rms=_pop_float(body, "sigma_t"),
        carrier_detuning=_pop_float(body, "carrier_detuning", 0.0),
        mean_photons=_pop_float(body, "mean_photons", 1.0),
    )
    _reject_unknown(body, "pulse")
    return pulse


def _medium_from_config(parser) -> MediumSpec:
    body = _section(parser, "medium")
    medium = MediumSpec.from_lifetime(
        peak_od=_pop_float(body, "peak_od"),
        tau_sp=_pop_float(body, "tau_sp", 26.5e-9),
    )
    _reject_unknown(body, "medium")
    return medium


def _experiment_from_config(parser) -> shots.ExperimentConfig:
    return shotfile.config_from_sections(_section(parser, "experiment"))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- propagate ---------------------------------------------------------------


def _envelope_rows(env):
    t = env.times()
    return [(ti, si.real, si.imag)
            for ti, si in zip(t, env.samples)]


def cmd_propagate(args) -> int:
    parser = _load_config(args.config)
    pulse = _pulse_from_config(parser)
    medium = _medium_from_config(parser)
    body = _section(parser, "propagate", required=False)
    depth_steps = _pop_int(body, "depth_steps", 4)
    _reject_unknown(body, "propagate")
    if depth_steps < 1:
        raise ConfigError("depth_steps must be >= 1")

    out = _out_dir(args)
    tail = 10.0 * medium.tau_sp
    env_in = gaussian_envelope(pulse, n_samples=4096, tail=tail)
    env_out = propagate_spectral(env_in, medium, 1.0)
    header = ("t", "re", "im")
    _write_csv(out / "envelope_in.csv", header, _envelope_rows(env_in))
    _write_csv(out / "envelope_out.csv", header, _envelope_rows(env_out))

    bloch = default_bloch_config(pulse, medium)
    depths = [k / depth_steps for k in range(depth_steps + 1)]
    area_rows = []
    for d in depths:
        env_d = env_in if d == 0 else propagate_spectral(env_in, medium, d)
        area_rows.append((d, pulse_area(env_d, bloch)))
    _write_csv(out / "area_vs_depth.csv", ("depth_fraction", "area"), area_rows)

    flip = detect_phase_flip(env_out)
    diagnostics = {
        "p_transmit": transmission_probability(pulse, medium),
        "energy_ratio": env_out.photon_number / env_in.photon_number
        if env_in.photon_number > 0 else 1.0,
        "phase_flip_time": flip,
        "peak_od": medium.peak_od,
        "sigma_t": pulse.intensity_rms,
    }
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(diagnostics, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


# --- models ------------------------------------------------------------------


_MODELS_HEADER = ("model", "sigma_t_ns", "peak_od", "p_loss", "tau0",
                  "tauL", "tauT", "tauT_over_tau0")
_DEFAULT_OD_GRID = "0.01,0.25,0.5,1,1.5,2,3,4"


def _model_point(model: str, pulse: PulseSpec, medium: MediumSpec,
                 slices: int):
    if model == MODEL_EGALITARIAN:
        return egalitarian_broadband(pulse, medium)
    return min_coherent_model(pulse, medium, slices=slices)


def cmd_models(args) -> int:
    parser = _load_config(args.config)
    body = _section(parser, "models", required=False)
    od_grid = _pop_list(body, "od_grid", _DEFAULT_OD_GRID)
    sigma_broad = _pop_float(body, "sigma_t_broad", 10e-9)
    sigma_narrow = _pop_float(body, "sigma_t_narrow", 50e-9)
    tau_sp = _pop_float(body, "tau_sp", 26.5e-9)
    carrier = _pop_float(body, "carrier_detuning", 0.0)
    slices = _pop_int(body, "slices", 128)
    _reject_unknown(body, "models")
    if any(od < 0 for od in od_grid):
        raise ConfigError("od_grid values must be >= 0")
    if sorted(od_grid) != od_grid or len(set(od_grid)) != len(od_grid):
        raise ConfigError("od_grid must be strictly increasing")

    curves = [(model, sigma)
              for model in (MODEL_EGALITARIAN, MODEL_MIN_COHERENT)
              for sigma in (sigma_broad, sigma_narrow)]
    out = _out_dir(args)
    path = out / "model_curves.csv"
    with open(path, "w") as fh:
        fh.write(",".join(_MODELS_HEADER) + "\n")
        for model, sigma in curves:
            pulse = PulseSpec(intensity_rms=sigma, carrier_detuning=carrier)
            medium_base = MediumSpec.from_lifetime(peak_od=1.0, tau_sp=tau_sp)
            for od in od_grid:
                medium = medium_base.with_od(od)
                try:
                    b = _model_point(model, pulse, medium, slices)
                except (ConvergenceError, ConfigError) as exc:
                    fh.write(f"# {model},sigma_t={sigma:g},peak_od={od:g} "
                             f"failed: {exc}\n")
                    continue
                b.check_identities()
                ratio = b.tauT / b.tau0 if b.tau0 > 0 else 0.0
                fh.write(",".join([
                    model, _fmt(sigma * 1e9), _fmt(od), _fmt(b.p_loss),
                    _fmt(b.tau0), _fmt(b.tauL), _fmt(b.tauT), _fmt(ratio),
                ]) + "\n")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    parser = _load_config(args.config)
    cfg = _experiment_from_config(parser)
    body = _section(parser, "campaign", required=False)
    n_shots = _pop_int(body, "n_shots", 100000)
    with_truth = bool(_pop_int(body, "with_truth", 1))
    _reject_unknown(body, "campaign")
    if n_shots < 1:
        raise ConfigError("n_shots must be >= 1")

    out = _out_dir(args)
    summary = shots.run_campaign(cfg, n_shots=n_shots, seed=args.seed,
                                 out_path=out / "shots.bin",
                                 with_truth=with_truth, workers=args.workers)
    report = {
        "n_shots": summary.n_shots,
        "click_rate": summary.click_rate,
        "expected_click_rate": shots.expected_click_rate(cfg),
        "mean_dwell": summary.mean_dwell,
        "mean_transmitted": summary.mean_transmitted,
        "digest": summary.digest,
        "path": summary.path,
        "seed": args.seed,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


# --- analyze -----------------------------------------------------------------


def analyze_file(path, cfg: shots.ExperimentConfig, s2: float = 0.0,
                 s2_se: float = 0.0, force_digest: bool = False) -> dict:
    """Full estimator chain over one shot file.

    Returns (report dict, BinnedTraces)."""
    header = shotfile.read_header(path)
    expected = shotfile.config_digest(shotfile.canonical_config_text(
        shotfile.experiment_sections(cfg)))
    if header.digest != expected and not force_digest:
        raise DataFormatError(
            f"{path}: config digest {header.digest.hex()[:16]}... does not "
            f"match the analysis config ({expected.hex()[:16]}...); rerun "
            "with --force-digest to analyze anyway")
    if header.n_samples != cfg.n_samples:
        raise DataFormatError(
            f"{path}: file has {header.n_samples} samples per shot, config "
            f"says {cfg.n_samples}")

    template = shots.xps_template(cfg)
    all_stats = estimator.RunningMoments(cfg.n_samples)
    click_stats = estimator.RunningMoments(cfg.n_samples)
    noclick_stats = estimator.RunningMoments(cfg.n_samples)
    for phases, clicks, _ in shotfile.iter_shot_batches(path):
        all_stats.add_batch(phases)
        click_stats.add_batch(phases[clicks])
        noclick_stats.add_batch(phases[~clicks])
    for name, stats in (("click", click_stats), ("no-click", noclick_stats)):
        if stats.count < estimator.MIN_BIN_POPULATION:
            raise estimator.InsufficientBinError(
                name, stats.count, estimator.MIN_BIN_POPULATION)
    se_c = click_stats.standard_error
    se_n = noclick_stats.standard_error
    binned = estimator.BinnedTraces(
        phi_click=click_stats.mean,
        phi_noclick=noclick_stats.mean,
        delta_phi=click_stats.mean - noclick_stats.mean,
        se_click=se_c, se_noclick=se_n,
        se_delta=np.sqrt(se_c**2 + se_n**2),
        n_click=click_stats.count, n_noclick=noclick_stats.count)

    phi0 = estimator.fit_phi0(all_stats.mean, cfg.mean_photons, template,
                              sigma=all_stats.standard_error)
    phi_t = estimator.fit_transmitted(binned, template)
    if s2 != 0.0:
        phi_t = estimator.correct_phi_T(phi_t, s2, cfg.mean_photons, phi0,
                                        s2_se=s2_se)
    combined = estimator.combine_detunings(
        [(cfg.probe_detuning, phi_t, phi0)])

    report = {
        "phi0": phi0.amplitude,
        "phi0_se": phi0.amplitude_se,
        "phiT": phi_t.amplitude,
        "phiT_se": phi_t.amplitude_se,
        "ratio": combined.ratio,
        "ratio_se": combined.se,
        "s2": s2,
        "chi2_per_dof": phi_t.chi2_per_dof,
        "n_shots": header.n_shots,
        "click_rate": binned.n_click / header.n_shots,
    }
    return report, binned


def cmd_analyze(args) -> int:
    parser = _load_config(args.config)
    cfg = _experiment_from_config(parser)
    body = _section(parser, "analysis", required=False)
    input_path = body.pop("input", None)
    s2 = _pop_float(body, "s2", 0.0)
    s2_se = _pop_float(body, "s2_se", 0.0)
    _reject_unknown(body, "analysis")
    if input_path is None:
        input_path = str(Path(args.out) / "shots.bin")

    report, binned = analyze_file(input_path, cfg, s2=s2, s2_se=s2_se,
                                  force_digest=args.force_digest)
    out = _out_dir(args)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    t = cfg.sample_dt * np.arange(cfg.n_samples)
    rows = zip(t, binned.delta_phi, binned.se_delta)
    _write_csv(out / "delta_phi.csv", ("t", "delta_phi", "se"), rows)
    return EXIT_OK


# --- calibrate ---------------------------------------------------------------


_DEFAULT_CAL_PHOTONS = "588,898,1527,3040"


def _calibration_eta(cfg: shots.ExperimentConfig, mu: float,
                     target_click: float) -> float:
    """Detection efficiency giving the target click rate at mu photons."""
    p_signal = (target_click - cfg.dark_prob) / (1.0 - cfg.dark_prob)
    if not 0.0 < p_signal < 1.0:
        raise ConfigError(
            f"target_click_rate {target_click:g} unreachable with "
            f"dark_prob {cfg.dark_prob:g}")
    return float(-np.log1p(-p_signal) / (cfg.p_transmit * mu))


def run_calibration(cfg: shots.ExperimentConfig, photon_numbers, n_shots: int,
                    seed: int, target_click: float = 0.10,
                    workers: int = 1) -> dict:
    """Bright campaigns at each photon number; fits e(mu) = 1 + s^2 mu."""
    points = []
    for i, mu in enumerate(photon_numbers):
        cal_cfg = cfg.replace(mean_photons=mu, phi_atom=cfg.phi_atom,
                              eta_detect=_calibration_eta(cfg, mu, target_click))
        template = shots.xps_template(cal_cfg)
        all_stats = estimator.RunningMoments(cal_cfg.n_samples)
        click_stats = estimator.RunningMoments(cal_cfg.n_samples)
        noclick_stats = estimator.RunningMoments(cal_cfg.n_samples)
        for phases, clicks, _ in shots._campaign_batches(
                cal_cfg, n_shots, seed + i, workers):
            all_stats.add_batch(phases)
            click_stats.add_batch(phases[clicks])
            noclick_stats.add_batch(phases[~clicks])
        se_c = click_stats.standard_error
        se_n = noclick_stats.standard_error
        binned = estimator.BinnedTraces(
            phi_click=click_stats.mean, phi_noclick=noclick_stats.mean,
            delta_phi=click_stats.mean - noclick_stats.mean,
            se_click=se_c, se_noclick=se_n,
            se_delta=np.sqrt(se_c**2 + se_n**2),
            n_click=click_stats.count, n_noclick=noclick_stats.count)
        phi0 = estimator.fit_phi0(all_stats.mean, mu, template,
                                  sigma=all_stats.standard_error)
        phi_t = estimator.fit_transmitted(binned, template)
        excess = phi_t.amplitude / phi0.amplitude
        excess_se = abs(excess) * np.sqrt(
            (phi_t.amplitude_se / phi_t.amplitude) ** 2
            + (phi0.amplitude_se / phi0.amplitude) ** 2)
        points.append((mu, excess, float(excess_se)))
    cal = estimator.calibrate_proportional_noise(points)
    return {
        "s2": cal.s2,
        "s2_se": cal.s2_se,
        "upper_bound": cal.upper_bound,
        "points": [{"mean_photons": mu, "excess": e, "excess_se": se}
                   for mu, e, se in points],
    }


def cmd_calibrate(args) -> int:
    parser = _load_config(args.config)
    cfg = _experiment_from_config(parser)
    body = _section(parser, "calibrate", required=False)
    photon_numbers = _pop_list(body, "photon_numbers", _DEFAULT_CAL_PHOTONS)
    n_shots = _pop_int(body, "n_shots", 1000000)
    target_click = _pop_float(body, "target_click_rate", 0.10)
    _reject_unknown(body, "calibrate")
    if len(photon_numbers) < 4:
        raise ConfigError("photon_numbers needs at least 4 entries")

    result = run_calibration(cfg, photon_numbers, n_shots, args.seed,
                             target_click=target_click, workers=args.workers)
    out = _out_dir(args)
    with open(out / "calibration.json", "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xdwell",
        description="Simulate and analyze single-photon dwell-time campaigns")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "propagate": cmd_propagate,
        "models": cmd_models,
        "simulate": cmd_simulate,
        "analyze": cmd_analyze,
        "calibrate": cmd_calibrate,
    }
    for name, handler in handlers.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--seed", type=int, default=0, help="campaign seed")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel batch workers")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--force-digest", action="store_true",
                       help="analyze despite a config-digest mismatch")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.seed < 0 or args.seed > 2**64 - 1:
        print("error: --seed must fit in an unsigned 64-bit value",
              file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
