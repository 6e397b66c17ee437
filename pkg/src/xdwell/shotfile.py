"""Shot-record binary format, config canonicalization and digesting.

File layout (little endian):
  header: magic "XDWL" | version u32 | flags u32 | n_samples u32 |
          n_shots u64 | config digest (32 bytes, SHA-256)
  record: n_samples * float64 phases | click u8 | 3 bytes padding |
          [4 * float64 truth when flags bit 0 is set]

The digest is the SHA-256 of the canonicalized experiment-config text
(sorted keys, normalized whitespace), so an analysis run can refuse data
generated under a different configuration.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .shots import ExperimentConfig, OscillationSpec

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "FLAG_TRUTH",
    "Header",
    "ShotFileWriter",
    "read_header",
    "iter_shot_batches",
    "canonical_config_text",
    "config_digest",
    "experiment_sections",
    "config_from_sections",
]

MAGIC = b"XDWL"
FORMAT_VERSION = 1
FLAG_TRUTH = 0x1

_HEADER = struct.Struct("<4sIIIQ32s")


@dataclass(frozen=True)
class Header:
    version: int
    flags: int
    n_samples: int
    n_shots: int
    digest: bytes

    @property
    def with_truth(self) -> bool:
        return bool(self.flags & FLAG_TRUTH)


def _record_dtype(n_samples: int, with_truth: bool) -> np.dtype:
    fields = [("phases", "<f8", (n_samples,)), ("click", "u1"), ("pad", "V3")]
    if with_truth:
        fields.append(("truth", "<f8", (4,)))
    return np.dtype(fields)


class ShotFileWriter:
    """Append-only writer; patches the shot count into the header on close."""

    def __init__(self, path, n_samples: int, digest: bytes, with_truth: bool):
        if len(digest) != 32:
            raise DataFormatError("config digest must be 32 bytes")
        self.path = str(path)
        self.n_samples = n_samples
        self.with_truth = with_truth
        self._dtype = _record_dtype(n_samples, with_truth)
        self._n_shots = 0
        self._digest = digest
        self._fh = open(self.path, "wb")
        self._write_header()

    def _write_header(self):
        flags = FLAG_TRUTH if self.with_truth else 0
        self._fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, flags,
                                    self.n_samples, self._n_shots, self._digest))

    def append(self, phases: np.ndarray, clicks: np.ndarray, truth=None):
        phases = np.asarray(phases, dtype=np.float64)
        m = phases.shape[0]
        if phases.shape != (m, self.n_samples):
            raise DataFormatError(
                f"phases must have shape (m, {self.n_samples})")
        if self.with_truth and truth is None:
            raise DataFormatError("file expects truth blocks")
        records = np.zeros(m, dtype=self._dtype)
        records["phases"] = phases
        records["click"] = np.asarray(clicks, dtype=bool).astype(np.uint8)
        if self.with_truth:
            records["truth"] = np.asarray(truth, dtype=np.float64)
        records.tofile(self._fh)
        self._n_shots += m

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._write_header()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_header(path) -> Header:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, flags, n_samples, n_shots, digest = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: format version {version} != supported {FORMAT_VERSION}")
    return Header(version=version, flags=flags, n_samples=n_samples,
                  n_shots=n_shots, digest=digest)


def iter_shot_batches(path, batch_size: int = 1 << 16):
    """Yield (phases, clicks, truth-or-None) batches from a shot file."""
    header = read_header(path)
    dtype = _record_dtype(header.n_samples, header.with_truth)
    remaining = header.n_shots
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        while remaining > 0:
            m = min(batch_size, remaining)
            records = np.fromfile(fh, dtype=dtype, count=m)
            if records.size != m:
                raise DataFormatError(
                    f"{path}: expected {m} more records, got {records.size}")
            truth = records["truth"] if header.with_truth else None
            yield records["phases"], records["click"].astype(bool), truth
            remaining -= m


# --- config canonicalization -------------------------------------------------


def _canonical_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (list, tuple)):
        return ",".join(_canonical_value(v) for v in value)
    return str(value)


def canonical_config_text(sections: dict) -> str:
    """Byte-stable text form: sorted sections and keys, one key=value a line."""
    lines = []
    for section in sorted(sections):
        lines.append(f"[{section}]")
        body = sections[section]
        for key in sorted(body):
            lines.append(f"{key.strip().lower()}={_canonical_value(body[key])}")
    return "\n".join(lines) + "\n"


def config_digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


_EXPERIMENT_FIELDS = (
    "mean_photons", "p_transmit", "eta_detect", "dark_prob", "phi_atom",
    "probe_detuning", "tau_sp", "sigma_t", "shot_len", "n_samples",
    "sample_dt", "arrival_index", "meas_bandwidth", "phase_noise_rms",
    "drift", "prop_noise_s", "od_coupling", "tauT_frac", "tauL_frac",
)
_OSC_FIELDS = ("amplitude", "period", "damping", "eps_coupling")


def experiment_sections(cfg: ExperimentConfig) -> dict:
    body = {name: getattr(cfg, name) for name in _EXPERIMENT_FIELDS}
    for name in _OSC_FIELDS:
        body[f"osc_{name}"] = getattr(cfg.osc, name)
    return {"experiment": body}


def config_from_sections(section: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from string key/value pairs; unknown keys
    and malformed values raise ConfigError."""
    from .errors import ConfigError

    kwargs = {}
    osc_kwargs = {}
    for raw_key, raw in section.items():
        key = raw_key.strip().lower()
        try:
            if key.startswith("osc_"):
                name = key[4:]
                if name not in _OSC_FIELDS:
                    raise ConfigError(f"unknown experiment key {raw_key!r}")
                osc_kwargs[name] = float(raw)
            elif key == "drift":
                parts = str(raw).split(",")
                kwargs["drift"] = tuple(float(p) for p in parts)
            elif key in ("n_samples", "arrival_index"):
                kwargs[key] = int(raw)
            elif key in ("tautfrac", "taut_frac"):
                kwargs["tauT_frac"] = float(raw)
            elif key in ("taulfrac", "taul_frac"):
                kwargs["tauL_frac"] = float(raw)
            elif key in (f.lower() for f in _EXPERIMENT_FIELDS):
                field = next(f for f in _EXPERIMENT_FIELDS if f.lower() == key)
                kwargs[field] = float(raw)
            else:
                raise ConfigError(f"unknown experiment key {raw_key!r}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {raw_key!r}: {raw!r}") from exc
    if osc_kwargs:
        kwargs["osc"] = OscillationSpec(**osc_kwargs)
    return ExperimentConfig(**kwargs)
