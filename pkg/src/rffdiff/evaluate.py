"""Evaluation: correlation and accuracy sweeps over SNR, plus figure exports.

The correlation metric is the magnitude of the zero-lag normalized complex
cross-correlation, which is invariant to scale and global phase; synthetic
frames are aligned by construction so no lag search is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule, denoise_batch
from .errors import ConfigError
from .models import Classifier, NoisePredictor, as_denoise_fn
from .signals import LabeledObservation, normalize_power_rows
from .training import observations_to_arrays

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

DEFAULT_SNR_GRID_DB = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)


@dataclass(frozen=True)
class SweepResult:
    """Two metric curves over an SNR grid."""

    snr_points_db: tuple
    metric_name: str
    values_denoised: tuple
    values_noisy_or_baseline: tuple
    num_trials: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "snr_points_db", tuple(float(v) for v in self.snr_points_db))
        object.__setattr__(self, "values_denoised", tuple(float(v) for v in self.values_denoised))
        object.__setattr__(
            self, "values_noisy_or_baseline",
            tuple(float(v) for v in self.values_noisy_or_baseline),
        )
        n = len(self.snr_points_db)
        if len(self.values_denoised) != n or len(self.values_noisy_or_baseline) != n:
            raise ConfigError("value lists must match the SNR grid length")


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """|<a, b>| / (||a|| * ||b||) with the complex inner product."""
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ConfigError("correlation needs equal-length inputs")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ConfigError("correlation is undefined for a zero-norm input")
    return float(np.abs(np.vdot(a, b)) / (na * nb))


def _correlation_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = np.abs(np.sum(np.conj(a) * b, axis=1))
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return num / den


def _corrupt(clean: np.ndarray, snr_db: float, unit_noise: np.ndarray) -> np.ndarray:
    power = np.mean(np.abs(clean) ** 2, axis=1, keepdims=True)
    sigma = np.sqrt(power * 10.0 ** (-snr_db / 10.0))
    return clean + sigma * unit_noise


def correlation_sweep(
    dataset: list[LabeledObservation],
    predictor: NoisePredictor,
    sched: NoiseSchedule,
    snr_points_db=DEFAULT_SNR_GRID_DB,
    trials: int = 500,
    t_prime: int = 10,
    seed: int = 0,
) -> SweepResult:
    """Mean correlation to the clean frame, noisy vs denoised, per SNR point.

    The same unit-power noise realizations are reused at every SNR point
    (only rescaled), so the noisy-correlation curve is monotone in SNR by
    construction rather than by sampling luck.
    """
    if any(obs.clean_ref is None for obs in dataset):
        raise ConfigError("correlation sweep needs clean references")
    clean_all, _, _ = observations_to_arrays(dataset, use_clean=True)
    clean_all = normalize_power_rows(clean_all)
    reps = int(np.ceil(trials / len(clean_all)))
    clean = np.tile(clean_all, (reps, 1))[:trials]

    rng = np.random.default_rng(seed)
    unit_noise = (
        rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    ) / np.sqrt(2.0)

    fn = as_denoise_fn(predictor)
    noisy_means, denoised_means = [], []
    for snr_db in snr_points_db:
        noisy = _corrupt(clean, snr_db, unit_noise)
        noisy_n = normalize_power_rows(noisy)
        denoised = denoise_batch(noisy_n, np.full(trials, snr_db), t_prime, fn, sched)
        noisy_means.append(float(np.mean(_correlation_rows(noisy, clean))))
        denoised_means.append(float(np.mean(_correlation_rows(denoised, clean))))

    return SweepResult(
        snr_points_db=tuple(snr_points_db),
        metric_name="correlation",
        values_denoised=tuple(denoised_means),
        values_noisy_or_baseline=tuple(noisy_means),
        num_trials=trials,
        seed=seed,
    )


def _batched_logits(model: Classifier, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    import torch

    model.eval()
    outs = []
    with torch.no_grad():
        for lo in range(0, len(x), chunk):
            xt = torch.from_numpy(x[lo : lo + chunk].astype(np.complex64))
            outs.append(model(xt).numpy())
    return np.concatenate(outs)


def accuracy_sweep(
    test_set: list[LabeledObservation],
    classifier: Classifier,
    baseline_classifier: Classifier,
    predictor: NoisePredictor,
    sched: NoiseSchedule,
    snr_points_db=DEFAULT_SNR_GRID_DB,
    t_prime: int = 10,
    seed: int = 0,
) -> SweepResult:
    """Identification accuracy per SNR point: denoised pipeline vs baseline."""
    for name, model in (
        ("classifier", classifier),
        ("baseline_classifier", baseline_classifier),
        ("predictor", predictor),
    ):
        if model is None:
            raise ConfigError(f"accuracy sweep needs a trained {name}")
    clean, labels, _ = observations_to_arrays(test_set, use_clean=True)
    clean = normalize_power_rows(clean)
    rng = np.random.default_rng(seed)
    unit_noise = (
        rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    ) / np.sqrt(2.0)

    fn = as_denoise_fn(predictor)
    acc_denoised, acc_baseline = [], []
    for snr_db in snr_points_db:
        noisy = normalize_power_rows(_corrupt(clean, snr_db, unit_noise))
        denoised = denoise_batch(noisy, np.full(len(noisy), snr_db), t_prime, fn, sched)
        pred_d = _batched_logits(classifier, denoised).argmax(1)
        pred_b = _batched_logits(baseline_classifier, noisy).argmax(1)
        acc_denoised.append(float(np.mean(pred_d == labels)))
        acc_baseline.append(float(np.mean(pred_b == labels)))

    return SweepResult(
        snr_points_db=tuple(snr_points_db),
        metric_name="accuracy",
        values_denoised=tuple(acc_denoised),
        values_noisy_or_baseline=tuple(acc_baseline),
        num_trials=len(test_set),
        seed=seed,
    )


def _deterministic_savefig(fig, path):
    plt.rcParams["svg.hashsalt"] = "rffdiff"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_series_csv(path, columns: dict):
    keys = list(columns)
    rows = zip(*(columns[k] for k in keys))
    lines = [",".join(keys)]
    lines += [",".join(f"{v:.9g}" for v in row) for row in rows]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))


def export_waveform_figures(
    example: LabeledObservation,
    predictor: NoisePredictor,
    sched: NoiseSchedule,
    out_dir,
    noisy_snr_db: float = 5.0,
    t_prime: int = 10,
    seed: int = 0,
) -> list:
    """Emit original / noised / denoised waveform plots plus the raw series.

    The original is the clean reference; the noised variant is corrupted to
    ``noisy_snr_db``; the denoised variant is recovered from it.
    """
    if example.clean_ref is None:
        raise ConfigError("waveform export needs a clean reference")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    clean = normalize_power_rows(example.clean_ref.samples[None, :])
    rng = np.random.default_rng(seed)
    unit = (
        rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    ) / np.sqrt(2.0)
    noisy = normalize_power_rows(_corrupt(clean, noisy_snr_db, unit))
    denoised = denoise_batch(
        noisy, np.array([noisy_snr_db]), t_prime, as_denoise_fn(predictor), sched
    )

    series = {
        "original": clean[0],
        "noised": noisy[0],
        "denoised": denoised[0],
    }
    ylim = 1.1 * max(np.max(np.abs(s.real)) for s in series.values())
    artifacts = []
    for name, samples in series.items():
        fig, ax = plt.subplots(figsize=(6.0, 2.4))
        ax.plot(samples.real, linewidth=0.7)
        ax.set_ylim(-ylim, ylim)
        ax.set_xlabel("sample")
        ax.set_ylabel("amplitude (I)")
        ax.set_title(name)
        fig.tight_layout()
        svg = out_dir / f"waveform_{name}.svg"
        _deterministic_savefig(fig, svg)
        csv = out_dir / f"waveform_{name}.csv"
        _write_series_csv(csv, {"i": samples.real, "q": samples.imag})
        artifacts += [svg, csv]
    return artifacts


def export_schedule_figure(sched: NoiseSchedule, out_dir) -> list:
    """Plot the per-step SNR schedule and dump its table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = np.arange(sched.num_steps + 1)

    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    ax.plot(t, sched.gamma_map, linewidth=1.0)
    ax.set_xlabel("timestep t")
    ax.set_ylabel("scheduled SNR (dB)")
    fig.tight_layout()
    svg = out_dir / "snr_schedule.svg"
    _deterministic_savefig(fig, svg)

    csv = out_dir / "snr_schedule.csv"
    _write_series_csv(csv, {"t": t.astype(float), "snr_db": sched.gamma_map})
    return [svg, csv]


def plot_sweep(result: SweepResult, out_path, label_a: str, label_b: str) -> None:
    """Line plot of the two sweep curves."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(result.snr_points_db, result.values_denoised, marker="o", label=label_a)
    ax.plot(result.snr_points_db, result.values_noisy_or_baseline, marker="s", label=label_b)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel(result.metric_name)
    ax.legend()
    ax.grid(True, alpha=0.4)
    fig.tight_layout()
    _deterministic_savefig(fig, out_path)


__all__ = [
    "SweepResult",
    "correlation",
    "correlation_sweep",
    "accuracy_sweep",
    "export_waveform_figures",
    "export_schedule_figure",
    "plot_sweep",
    "DEFAULT_SNR_GRID_DB",
]
