"""Synthetic 802.11 legacy-preamble generation and device impairment modeling.

Builds the dataset side of the experiment: clean preambles, per-device
hardware fingerprints (PA nonlinearity, IQ imbalance, CFO, DC offset), a
fixed multipath channel, and calibrated additive Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SignalStructureError

SUPPORTED_SAMPLE_RATE_HZ = 20e6
PREAMBLE_LEN = 320

# Short training sequence, frequency domain (occupied subcarriers -24..24,
# every 4th), scaled so 12 active bins carry unit average symbol energy.
_STS_CARRIERS = {
    4: -1 - 1j, 8: -1 - 1j, 12: 1 + 1j, 16: 1 + 1j, 20: 1 + 1j, 24: 1 + 1j,
    -4: 1 + 1j, -8: -1 - 1j, -12: -1 - 1j, -16: 1 + 1j, -20: -1 - 1j, -24: 1 + 1j,
}

# Long training sequence, frequency domain, subcarriers 1..26 and -26..-1.
_LTS_POSITIVE = [1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1,
                 -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1]
_LTS_NEGATIVE = [1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1,
                 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1]


@dataclass(frozen=True)
class ComplexSignal:
    """A finite complex baseband sample sequence with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or len(samples) < 1:
            raise SignalStructureError("signal must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(samples.view(np.float64))):
            raise SignalStructureError("signal contains non-finite samples")
        if not (self.sample_rate_hz > 0):
            raise ConfigError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples: np.ndarray) -> "ComplexSignal":
        return ComplexSignal(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class DeviceProfile:
    """Hardware impairment parameters identifying one virtual device."""

    device_id: int
    cfo_hz: float = 0.0
    iq_gain_mismatch: float = 1.0
    iq_phase_mismatch_rad: float = 0.0
    dc_offset: complex = 0j
    pa_coeffs: tuple = (1.0, 0.0, 0.0)  # (a1, a3, a5)

    def __post_init__(self):
        a = tuple(self.pa_coeffs)
        object.__setattr__(self, "pa_coeffs", a)
        if len(a) != 3:
            raise ConfigError("pa_coeffs must be (a1, a3, a5)")
        if a[0] == 0:
            raise ConfigError("PA linear gain a1 must be nonzero")
        if abs(self.iq_gain_mismatch - 1.0) >= 0.2:
            raise ConfigError("|iq_gain_mismatch - 1| must stay below 0.2")
        if abs(self.iq_phase_mismatch_rad) >= 0.2:
            raise ConfigError("|iq_phase_mismatch_rad| must stay below 0.2")
        if abs(self.dc_offset) >= 0.1:
            raise ConfigError("|dc_offset| must stay below 0.1")
        if self.device_id < 0:
            raise ConfigError("device_id must be non-negative")


@dataclass(frozen=True)
class ChannelConfig:
    """Fixed FIR multipath channel applied to every synthesized frame."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 1 or len(taps) < 1:
            raise ConfigError("channel needs at least one tap")
        if not np.sum(np.abs(taps) ** 2) > 0:
            raise ConfigError("channel tap energy must be positive")


@dataclass
class LabeledObservation:
    """One dataset record: a (possibly noisy) frame with its ground truth."""

    signal: ComplexSignal
    device_id: int
    snr_db: float
    clean_ref: ComplexSignal | None = None

    def __post_init__(self):
        if self.device_id < 0:
            raise ConfigError("device_id must be non-negative")
        if not np.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")


def generate_legacy_preamble(sample_rate_hz: float) -> ComplexSignal:
    """Generate the 320-sample 802.11 legacy preamble (STS + LTS) at 20 Msps.

    The 160-sample STS is ten repetitions of the 16-sample short symbol;
    the 160-sample LTS is a 32-sample guard followed by two identical
    64-sample long symbols. Output is normalized to unit average power.
    """
    if sample_rate_hz != SUPPORTED_SAMPLE_RATE_HZ:
        raise ConfigError(
            f"only {SUPPORTED_SAMPLE_RATE_HZ:.0f} Hz sampling is supported, "
            f"got {sample_rate_hz}"
        )

    sts_freq = np.zeros(64, dtype=np.complex128)
    for k, v in _STS_CARRIERS.items():
        sts_freq[k % 64] = v
    sts_freq *= np.sqrt(13.0 / 6.0)
    short_symbol = np.fft.ifft(sts_freq)[:16]
    sts = np.tile(short_symbol, 10)

    lts_freq = np.zeros(64, dtype=np.complex128)
    lts_freq[1:27] = _LTS_POSITIVE
    lts_freq[-26:] = _LTS_NEGATIVE
    long_symbol = np.fft.ifft(lts_freq)
    lts = np.concatenate([long_symbol[-32:], long_symbol, long_symbol])

    preamble = np.concatenate([sts, lts])
    preamble /= np.sqrt(np.mean(np.abs(preamble) ** 2))
    return ComplexSignal(preamble, sample_rate_hz)


def apply_device_impairments(sig: ComplexSignal, profile: DeviceProfile) -> ComplexSignal:
    """Imprint one device's hardware fingerprint onto a clean frame.

    Applies, in order: memoryless PA polynomial, two-branch IQ imbalance,
    CFO rotation, DC offset. Deterministic.
    """
    x = sig.samples
    a1, a3, a5 = profile.pa_coeffs
    mag2 = np.abs(x) ** 2
    y = a1 * x + a3 * x * mag2 + a5 * x * mag2**2

    # Gain g and phase phi on the Q branch: y = I + j*g*e^{j*phi}*Q,
    # equivalently k1*y + k2*conj(y).
    g = profile.iq_gain_mismatch
    rot = g * np.exp(1j * profile.iq_phase_mismatch_rad)
    k1 = (1.0 + rot) / 2.0
    k2 = (1.0 - rot) / 2.0
    y = k1 * y + k2 * np.conj(y)

    n = np.arange(len(y))
    y = y * np.exp(2j * np.pi * profile.cfo_hz * n / sig.sample_rate_hz)
    y = y + profile.dc_offset
    return sig.with_samples(y)


def apply_channel(sig: ComplexSignal, ch: ChannelConfig) -> ComplexSignal:
    """Convolve with the channel taps, truncated to the input length."""
    y = np.convolve(sig.samples, ch.taps)[: len(sig)]
    return sig.with_samples(y)


def add_awgn(sig: ComplexSignal, target_snr_db: float, seed: int):
    """Add circular complex Gaussian noise calibrated to a target SNR.

    Noise variance per complex sample is the measured mean signal power
    scaled by 10^(-target_snr_db/10); +inf adds no noise. Returns the noisy
    signal and the realized noise sequence.
    """
    if np.isnan(target_snr_db):
        raise ConfigError("target_snr_db must be a number or +inf")
    if np.isposinf(target_snr_db):
        noise = np.zeros(len(sig), dtype=np.complex128)
        return sig.with_samples(sig.samples.copy()), noise

    sigma2 = sig.mean_power * 10.0 ** (-target_snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(len(sig)) + 1j * rng.standard_normal(len(sig))
    )
    return sig.with_samples(sig.samples + noise), noise


def normalize_power(sig: ComplexSignal) -> ComplexSignal:
    """Scale to unit mean power (receiver AGC). Zero signals pass through."""
    p = sig.mean_power
    if p == 0.0:
        return sig
    return sig.with_samples(sig.samples / np.sqrt(p))


def normalize_power_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise unit-mean-power normalization for a [B, M] sample array."""
    power = np.mean(np.abs(x) ** 2, axis=1, keepdims=True)
    return x / np.sqrt(np.where(power > 0, power, 1.0))


def estimate_snr_samples(samples: np.ndarray) -> float:
    """SNR estimate in dB for a raw preamble sample array (see estimate_snr)."""
    if len(samples) < PREAMBLE_LEN:
        raise SignalStructureError(
            f"SNR estimation needs the {PREAMBLE_LEN}-sample preamble, got {len(samples)}"
        )
    r1 = samples[192:256]
    r2 = samples[256:320]
    cross = np.abs(np.vdot(r2, r1))
    energy = np.sqrt(np.sum(np.abs(r1) ** 2) * np.sum(np.abs(r2) ** 2))
    if energy == 0.0:
        return -10.0
    rho = cross / energy
    if rho >= 1.0:
        return 60.0
    snr_db = 10.0 * np.log10(rho / (1.0 - rho))
    return float(np.clip(snr_db, -10.0, 60.0))


def estimate_snr(sig: ComplexSignal) -> float:
    """Estimate the SNR in dB from the repetition of the two long symbols.

    The normalized cross-correlation of the two 64-sample long symbols
    separates signal power from noise power; the estimate is clamped to
    [-10, +60] dB. Requires the full 320-sample preamble layout.
    """
    return estimate_snr_samples(sig.samples)


DEFAULT_CHANNEL_TAPS = (1.0 + 0.0j, 0.25 + 0.10j, 0.08 - 0.05j)


def make_device_population(
    num_devices: int = 6,
    seed: int = 7,
    cfo_spread_hz: float = 400.0,
    cfo_min_gap_hz: float = 80.0,
    min_separation: float = 2.0,
    num_draws: int = 300,
) -> list[DeviceProfile]:
    """Draw a reproducible population of subtly different device profiles.

    Oscillator offsets are small residuals (the capture front end is assumed
    to coarse-correct CFO), so the discriminating fingerprints are the IQ,
    PA, and DC imperfections. ``num_draws`` candidate populations are drawn
    from the seed and the one with the largest minimum pairwise L2 distance
    between impaired preambles wins; it must clear ``min_separation``.
    That keeps the population separable in principle while each fingerprint
    stays subtle against the frame energy (L2 norm ~ 18 at unit power).
    """
    if num_devices < 1:
        raise ConfigError("need at least one device")
    rng = np.random.default_rng(seed)
    clean = generate_legacy_preamble(SUPPORTED_SAMPLE_RATE_HZ)

    def draw() -> list[DeviceProfile]:
        cfos = rng.uniform(-cfo_spread_hz, cfo_spread_hz, size=num_devices)
        if num_devices > 1:
            if (num_devices - 1) * cfo_min_gap_hz >= 2 * cfo_spread_hz:
                raise ConfigError("cfo_min_gap_hz is too large for the spread")
            while np.diff(np.sort(cfos)).min() < cfo_min_gap_hz:
                cfos = rng.uniform(-cfo_spread_hz, cfo_spread_hz, size=num_devices)
        return [
            DeviceProfile(
                device_id=dev,
                cfo_hz=float(cfos[dev]),
                iq_gain_mismatch=float(1.0 + rng.uniform(-0.18, 0.18)),
                iq_phase_mismatch_rad=float(rng.uniform(-0.18, 0.18)),
                dc_offset=complex(rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06)),
                pa_coeffs=(1.0, float(rng.uniform(-0.15, -0.02)), float(rng.uniform(-0.04, 0.04))),
            )
            for dev in range(num_devices)
        ]

    def min_pair_distance(profiles: list[DeviceProfile]) -> float:
        marks = []
        for p in profiles:
            m = apply_device_impairments(clean, p).samples
            marks.append(m / np.sqrt(np.mean(np.abs(m) ** 2)))
        return min(
            np.linalg.norm(marks[i] - marks[j])
            for i in range(num_devices)
            for j in range(i + 1, num_devices)
        )

    if num_devices == 1:
        return draw()
    best, best_sep = None, -1.0
    for _ in range(num_draws):
        candidate = draw()
        sep = min_pair_distance(candidate)
        if sep > best_sep:
            best, best_sep = candidate, sep
    if best_sep < min_separation:
        raise ConfigError(
            f"best candidate separation {best_sep:.2f} below {min_separation}; "
            "widen the spreads or lower the floor"
        )
    return best


@dataclass(frozen=True)
class SynthesisConfig:
    """Serializable description of the virtual testbed."""

    num_devices: int = 6
    sample_rate_hz: float = SUPPORTED_SAMPLE_RATE_HZ
    snr_db: float = 40.0
    channel_taps: tuple = DEFAULT_CHANNEL_TAPS
    profile_seed: int = 7
    profiles: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "channel_taps", tuple(complex(t) for t in self.channel_taps))
        if self.num_devices < 1:
            raise ConfigError("num_devices must be >= 1")
        if not np.isfinite(self.snr_db):
            raise ConfigError("synthesis snr_db must be finite")
        if self.profiles is not None:
            profiles = tuple(self.profiles)
            object.__setattr__(self, "profiles", profiles)
            if len(profiles) != self.num_devices:
                raise ConfigError("profiles list must match num_devices")
            ids = sorted(p.device_id for p in profiles)
            if ids != list(range(self.num_devices)):
                raise ConfigError("profile device_ids must cover [0, num_devices)")

    def resolve_profiles(self) -> list[DeviceProfile]:
        if self.profiles is not None:
            return list(self.profiles)
        return make_device_population(self.num_devices, self.profile_seed)

    def channel(self) -> ChannelConfig:
        return ChannelConfig(np.array(self.channel_taps))


def synthesize_observation(
    profile: DeviceProfile,
    channel: ChannelConfig,
    snr_db: float,
    seed: int,
    sample_rate_hz: float = SUPPORTED_SAMPLE_RATE_HZ,
) -> LabeledObservation:
    """Run the full synthesis pipeline for one frame.

    Order is fixed: preamble -> PA/IQ/CFO/DC -> channel -> random carrier
    phase -> unit-power normalization -> AWGN at ``snr_db``. The receiver
    never phase-locks to the transmitter, so every capture carries an
    arbitrary carrier phase; it is drawn per record, like the noise. The
    pre-noise frame is kept as the clean reference.
    """
    phase_seed, noise_seed = np.random.SeedSequence(seed).generate_state(2)
    clean = generate_legacy_preamble(sample_rate_hz)
    impaired = apply_device_impairments(clean, profile)
    faded = apply_channel(impaired, channel)
    phase = np.random.default_rng(phase_seed).uniform(0.0, 2.0 * np.pi)
    received = faded.with_samples(faded.samples * np.exp(1j * phase))
    reference = normalize_power(received)
    noisy, _ = add_awgn(reference, snr_db, int(noise_seed))
    return LabeledObservation(
        signal=noisy,
        device_id=profile.device_id,
        snr_db=float(snr_db),
        clean_ref=reference,
    )


def synthesize_dataset(
    profiles: list[DeviceProfile],
    channel: ChannelConfig,
    packets_per_device: int,
    snr_db: float,
    seed: int,
) -> list[LabeledObservation]:
    """Synthesize ``packets_per_device`` frames per device.

    Per-record seeds are spawned from one root seed, so the dataset is
    reproducible record by record regardless of generation order.
    """
    if packets_per_device < 1:
        raise ConfigError("packets_per_device must be >= 1")
    root = np.random.SeedSequence(seed)
    record_seeds = root.generate_state(len(profiles) * packets_per_device)
    records = []
    k = 0
    for profile in profiles:
        for _ in range(packets_per_device):
            records.append(
                synthesize_observation(profile, channel, snr_db, int(record_seeds[k]))
            )
            k += 1
    return records
