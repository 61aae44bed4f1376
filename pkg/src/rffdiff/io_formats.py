"""Bit-exact persistence: dataset files, checkpoints, sweep tables, configs.

Binary layouts use fixed little-endian fields so files are portable across
platforms. Signals are stored as 32-bit floats, model parameters as 64-bit
floats. The experiment config is strict JSON: unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import struct

import numpy as np
import torch

from .diffusion import ScheduleConfig
from .errors import ChecksumError, ConfigError, DataFormatError
from .models import Classifier, ClassifierConfig, NoisePredictor, NoisePredictorConfig
from .signals import ComplexSignal, DeviceProfile, LabeledObservation, SynthesisConfig
from .training import AugmentationPolicy, TrainConfig

DATASET_MAGIC = b"RFFDSET1"
DATASET_VERSION = 1
_HEADER = struct.Struct("<8sIQIdI")

CHECKPOINT_MAGIC = b"RFFCKPT1"
CHECKPOINT_VERSION = 1

_MODEL_KINDS = {
    "noise_predictor": (NoisePredictor, NoisePredictorConfig),
    "classifier": (Classifier, ClassifierConfig),
}


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

def write_dataset(records: list[LabeledObservation], path) -> None:
    """Write records as header + fixed-layout little-endian binary rows."""
    if records:
        lengths = {len(r.signal) for r in records}
        if len(lengths) != 1:
            raise ConfigError(f"records must share one signal length, got {sorted(lengths)}")
        signal_len = lengths.pop()
        sample_rate = records[0].signal.sample_rate_hz
        num_classes = int(max(r.device_id for r in records)) + 1
    else:
        signal_len, sample_rate, num_classes = 1, 1.0, 0

    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            DATASET_MAGIC, DATASET_VERSION, len(records), signal_len, sample_rate, num_classes
        )
    )
    for rec in records:
        buf.write(struct.pack("<If", rec.device_id, rec.snr_db))
        buf.write(_iq_bytes(rec.signal.samples))
        if rec.clean_ref is not None:
            if len(rec.clean_ref) != signal_len:
                raise ConfigError("clean reference length must match the signal length")
            buf.write(b"\x01")
            buf.write(_iq_bytes(rec.clean_ref.samples))
        else:
            buf.write(b"\x00")
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _iq_bytes(samples: np.ndarray) -> bytes:
    iq = np.empty(2 * len(samples), dtype="<f4")
    iq[0::2] = samples.real
    iq[1::2] = samples.imag
    return iq.tobytes()


class _Cursor:
    """Byte reader that reports the offset of whatever fails to parse."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(f"truncated file while reading {what}", offset=self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))


def read_dataset(path) -> list[LabeledObservation]:
    """Read and validate a dataset file; any violation is a located error."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    magic, version, num_records, signal_len, sample_rate, num_classes = cur.unpack(
        _HEADER, "header"
    )
    if magic != DATASET_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0)
    if version != DATASET_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=8)
    if num_records > 0 and signal_len < 1:
        raise DataFormatError("signal_len must be positive", offset=20)

    rec_struct = struct.Struct("<If")
    records = []
    for _ in range(num_records):
        at = cur.pos
        label, snr_db = cur.unpack(rec_struct, "record header")
        if num_classes and label >= num_classes:
            raise DataFormatError(f"label {label} outside [0, {num_classes})", offset=at)
        if not np.isfinite(snr_db):
            raise DataFormatError("non-finite snr_db", offset=at + 4)
        signal = _read_iq(cur, signal_len, sample_rate)
        (flag,) = struct.unpack("<B", cur.take(1, "clean-reference flag"))
        if flag not in (0, 1):
            raise DataFormatError(f"invalid clean-reference flag {flag}", offset=cur.pos - 1)
        clean = _read_iq(cur, signal_len, sample_rate) if flag else None
        records.append(
            LabeledObservation(signal=signal, device_id=label, snr_db=snr_db, clean_ref=clean)
        )
    if cur.pos != len(data):
        raise DataFormatError("trailing bytes after final record", offset=cur.pos)
    return records


def _read_iq(cur: _Cursor, signal_len: int, sample_rate: float) -> ComplexSignal:
    at = cur.pos
    raw = np.frombuffer(cur.take(8 * signal_len, "IQ samples"), dtype="<f4")
    if not np.all(np.isfinite(raw)):
        raise DataFormatError("non-finite sample component", offset=at)
    return ComplexSignal(raw[0::2] + 1j * raw[1::2], sample_rate)


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(model, path) -> None:
    """Serialize a model as named float64 arrays plus its config and checksum."""
    for kind, (cls, _) in _MODEL_KINDS.items():
        if isinstance(model, cls):
            break
    else:
        raise ConfigError(f"cannot checkpoint a {type(model).__name__}")

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(_pack_str(kind))
    buf.write(_pack_str(json.dumps(dataclasses.asdict(model.config), sort_keys=True)))

    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f8")
        buf.write(_pack_str(name))
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())

    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def load_checkpoint(path, expected_kind: str | None = None):
    """Rebuild a model from a checkpoint, verifying checksum and shapes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 32:
        raise DataFormatError("file too short for a checkpoint", offset=0)
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("checkpoint content checksum mismatch", offset=len(payload))

    cur = _Cursor(payload)
    if cur.take(8, "magic") != CHECKPOINT_MAGIC:
        raise DataFormatError("bad checkpoint magic", offset=0)
    (version,) = struct.unpack("<I", cur.take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", offset=8)
    kind = _take_str(cur, "model kind")
    if kind not in _MODEL_KINDS:
        raise DataFormatError(f"unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ConfigError(f"expected a {expected_kind} checkpoint, found {kind}")

    cls, config_cls = _MODEL_KINDS[kind]
    config_dict = json.loads(_take_str(cur, "config"))
    try:
        config = config_cls(**config_dict)
    except TypeError as exc:
        raise ConfigError(f"config does not match {config_cls.__name__}: {exc}") from exc

    (num_arrays,) = struct.unpack("<I", cur.take(4, "array count"))
    state = {}
    for _ in range(num_arrays):
        name = _take_str(cur, "array name")
        (ndim,) = struct.unpack("<I", cur.take(4, "array rank"))
        shape = struct.unpack(f"<{ndim}Q", cur.take(8 * ndim, "array shape"))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(cur.take(8 * count, f"array {name}"), dtype="<f8").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    if cur.pos != len(payload):
        raise DataFormatError("trailing bytes in checkpoint", offset=cur.pos)

    model = cls(config)
    expected = model.state_dict()
    if set(expected) != set(state):
        missing = sorted(set(expected) ^ set(state))
        raise ConfigError(f"checkpoint arrays do not match the model: {missing}")
    for name, tensor in expected.items():
        if tuple(state[name].shape) != tuple(tensor.shape):
            raise ConfigError(
                f"shape mismatch for {name}: "
                f"{tuple(state[name].shape)} vs {tuple(tensor.shape)}"
            )
        state[name] = state[name].to(tensor.dtype)
    model.load_state_dict(state)
    model.eval()
    return model


def _take_str(cur: _Cursor, what: str) -> str:
    (n,) = struct.unpack("<I", cur.take(4, f"{what} length"))
    return cur.take(n, what).decode("utf-8")


# ---------------------------------------------------------------------------
# Sweep tables
# ---------------------------------------------------------------------------

def write_sweep_csv(result, path) -> None:
    """One row per grid point: snr_db, metric, value_a, value_b, trials, seed."""
    lines = ["snr_db,metric,value_a,value_b,trials,seed"]
    for snr, a, b in zip(
        result.snr_points_db, result.values_denoised, result.values_noisy_or_baseline
    ):
        lines.append(
            f"{snr:.6g},{result.metric_name},{a:.6g},{b:.6g},"
            f"{result.num_trials},{result.seed}"
        )
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))


def read_sweep_csv(path):
    """Parse a sweep table back into plain columns."""
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != "snr_db,metric,value_a,value_b,trials,seed":
        raise DataFormatError("missing sweep CSV header", offset=0)
    rows = []
    for ln in lines[1:]:
        snr, metric, a, b, trials, seed = ln.split(",")
        rows.append((float(snr), metric, float(a), float(b), int(trials), int(seed)))
    return rows


# ---------------------------------------------------------------------------
# Experiment config
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """All experiment knobs in one serializable object."""

    schedule: ScheduleConfig
    predictor: NoisePredictorConfig
    classifier: ClassifierConfig
    training: TrainConfig
    augmentation: AugmentationPolicy
    synthesis: SynthesisConfig


def default_experiment_config() -> ExperimentConfig:
    synthesis = SynthesisConfig()
    # Pin the drawn population into the config so it travels with the file.
    synthesis = dataclasses.replace(
        synthesis, profiles=tuple(synthesis.resolve_profiles())
    )
    return ExperimentConfig(
        schedule=ScheduleConfig(),
        predictor=NoisePredictorConfig(),
        classifier=ClassifierConfig(num_classes=synthesis.num_devices),
        training=TrainConfig(),
        augmentation=AugmentationPolicy(),
        synthesis=synthesis,
    )


def _complex_to_json(z: complex) -> list:
    return [z.real, z.imag]


def _profile_to_json(p: DeviceProfile) -> dict:
    return {
        "device_id": p.device_id,
        "cfo_hz": p.cfo_hz,
        "iq_gain_mismatch": p.iq_gain_mismatch,
        "iq_phase_mismatch_rad": p.iq_phase_mismatch_rad,
        "dc_offset": _complex_to_json(p.dc_offset),
        "pa_coeffs": list(p.pa_coeffs),
    }


def experiment_config_to_dict(config: ExperimentConfig) -> dict:
    syn = config.synthesis
    return {
        "schedule": dataclasses.asdict(config.schedule),
        "predictor": dataclasses.asdict(config.predictor),
        "classifier": dataclasses.asdict(config.classifier),
        "training": dataclasses.asdict(config.training),
        "augmentation": dataclasses.asdict(config.augmentation),
        "synthesis": {
            "num_devices": syn.num_devices,
            "sample_rate_hz": syn.sample_rate_hz,
            "snr_db": syn.snr_db,
            "channel_taps": [_complex_to_json(t) for t in syn.channel_taps],
            "profile_seed": syn.profile_seed,
            "profiles": None
            if syn.profiles is None
            else [_profile_to_json(p) for p in syn.profiles],
        },
    }


def save_experiment_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(experiment_config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


_SECTION_TYPES = {
    "schedule": ScheduleConfig,
    "predictor": NoisePredictorConfig,
    "classifier": ClassifierConfig,
    "training": TrainConfig,
    "augmentation": AugmentationPolicy,
}

_JSON_SCALARS = {int: "integer", float: "number", str: "string", bool: "boolean"}


def _check_scalar(section: str, key: str, value, want: type):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, want) or (want is int and isinstance(value, bool)):
        raise ConfigError(
            f"{section}.{key} must be a {_JSON_SCALARS[want]}, got {value!r}"
        )
    return value


def _build_section(section: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    missing = set(fields) - set(raw)
    if missing:
        raise ConfigError(f"missing key(s) in {section}: {sorted(missing)}")
    kwargs = {}
    for key, value in raw.items():
        want = fields[key].type
        if want in ("int", int):
            kwargs[key] = _check_scalar(section, key, value, int)
        elif want in ("float", float):
            kwargs[key] = _check_scalar(section, key, value, float)
        elif want in ("bool", bool):
            kwargs[key] = _check_scalar(section, key, value, bool)
        elif want in ("str", str):
            kwargs[key] = _check_scalar(section, key, value, str)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _parse_complex(section: str, key: str, value) -> complex:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ConfigError(f"{section}.{key} entries must be [re, im] pairs, got {value!r}")
    return complex(value[0], value[1])


def _parse_profile(raw: dict, index: int) -> DeviceProfile:
    allowed = {
        "device_id", "cfo_hz", "iq_gain_mismatch",
        "iq_phase_mismatch_rad", "dc_offset", "pa_coeffs",
    }
    if not isinstance(raw, dict):
        raise ConfigError(f"synthesis.profiles[{index}] must be an object")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in synthesis.profiles[{index}]: {sorted(unknown)}")
    missing = allowed - set(raw)
    if missing:
        raise ConfigError(f"missing key(s) in synthesis.profiles[{index}]: {sorted(missing)}")
    pa = raw["pa_coeffs"]
    if not isinstance(pa, list) or len(pa) != 3:
        raise ConfigError(f"synthesis.profiles[{index}].pa_coeffs must have 3 entries")
    return DeviceProfile(
        device_id=_check_scalar("profiles", "device_id", raw["device_id"], int),
        cfo_hz=_check_scalar("profiles", "cfo_hz", raw["cfo_hz"], float),
        iq_gain_mismatch=_check_scalar(
            "profiles", "iq_gain_mismatch", raw["iq_gain_mismatch"], float
        ),
        iq_phase_mismatch_rad=_check_scalar(
            "profiles", "iq_phase_mismatch_rad", raw["iq_phase_mismatch_rad"], float
        ),
        dc_offset=_parse_complex("profiles", "dc_offset", raw["dc_offset"]),
        pa_coeffs=tuple(
            _check_scalar("profiles", f"pa_coeffs[{i}]", v, float) for i, v in enumerate(pa)
        ),
    )


def _parse_synthesis(raw: dict) -> SynthesisConfig:
    allowed = {
        "num_devices", "sample_rate_hz", "snr_db",
        "channel_taps", "profile_seed", "profiles",
    }
    if not isinstance(raw, dict):
        raise ConfigError("section 'synthesis' must be an object")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in synthesis: {sorted(unknown)}")
    missing = allowed - set(raw)
    if missing:
        raise ConfigError(f"missing key(s) in synthesis: {sorted(missing)}")
    taps_raw = raw["channel_taps"]
    if not isinstance(taps_raw, list) or not taps_raw:
        raise ConfigError("synthesis.channel_taps must be a non-empty list")
    taps = tuple(
        _parse_complex("synthesis", f"channel_taps[{i}]", t) for i, t in enumerate(taps_raw)
    )
    profiles = None
    if raw["profiles"] is not None:
        if not isinstance(raw["profiles"], list):
            raise ConfigError("synthesis.profiles must be a list or null")
        profiles = tuple(_parse_profile(p, i) for i, p in enumerate(raw["profiles"]))
    return SynthesisConfig(
        num_devices=_check_scalar("synthesis", "num_devices", raw["num_devices"], int),
        sample_rate_hz=_check_scalar(
            "synthesis", "sample_rate_hz", raw["sample_rate_hz"], float
        ),
        snr_db=_check_scalar("synthesis", "snr_db", raw["snr_db"], float),
        channel_taps=taps,
        profile_seed=_check_scalar("synthesis", "profile_seed", raw["profile_seed"], int),
        profiles=profiles,
    )


def load_experiment_config(path) -> ExperimentConfig:
    """Load and strictly validate an experiment config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    expected = set(_SECTION_TYPES) | {"synthesis"}
    unknown = set(raw) - expected
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {sorted(unknown)}")
    missing = expected - set(raw)
    if missing:
        raise ConfigError(f"missing section(s): {sorted(missing)}")

    sections = {
        name: _build_section(name, cls, raw[name]) for name, cls in _SECTION_TYPES.items()
    }
    return ExperimentConfig(synthesis=_parse_synthesis(raw["synthesis"]), **sections)
