"""Training loops: diffusion noise predictor, classifier, and the
augmentation-only baseline classifier.

Both loops share the same optimization schedule: adaptive-moment optimizer,
validation-loss patience that first halves the learning rate and later stops
training, and restoration of the best-validation parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .diffusion import NoiseSchedule, denoise_batch
from .errors import ConfigError
from .models import (
    Classifier,
    ClassifierConfig,
    NoisePredictor,
    NoisePredictorConfig,
    as_denoise_fn,
)
from .signals import LabeledObservation, estimate_snr_samples, normalize_power_rows

_OPTIMIZERS = {
    "adamax": torch.optim.Adamax,
    "adam": torch.optim.Adam,
    "adamw": torch.optim.AdamW,
    "sgd": torch.optim.SGD,
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    lr_halving_patience: int = 20
    early_stop_patience: int = 30
    max_epochs: int = 300
    optimizer_id: str = "adamax"
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.validation_fraction < 1.0):
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.lr_halving_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.optimizer_id not in _OPTIMIZERS:
            raise ConfigError(
                f"unknown optimizer {self.optimizer_id!r}; "
                f"choose from {sorted(_OPTIMIZERS)}"
            )


@dataclass(frozen=True)
class AugmentationPolicy:
    snr_low_db: float = 0.0
    snr_high_db: float = 40.0
    per_batch: bool = True

    def __post_init__(self):
        if not self.snr_low_db < self.snr_high_db:
            raise ConfigError("need snr_low_db < snr_high_db")


def observations_to_arrays(dataset: list[LabeledObservation], use_clean: bool = False):
    """Stack a dataset into (signals [R, M], labels [R], snr_db [R])."""
    if not dataset:
        raise ConfigError("dataset is empty")
    lengths = {len(obs.signal) for obs in dataset}
    if len(lengths) != 1:
        raise ConfigError(f"signals must share one length, got {sorted(lengths)}")
    if use_clean:
        if any(obs.clean_ref is None for obs in dataset):
            raise ConfigError("dataset records lack clean references")
        x = np.stack([obs.clean_ref.samples for obs in dataset])
    else:
        x = np.stack([obs.signal.samples for obs in dataset])
    labels = np.array([obs.device_id for obs in dataset], dtype=np.int64)
    snr = np.array([obs.snr_db for obs in dataset], dtype=np.float64)
    return x, labels, snr


def _augment_arrays(x: np.ndarray, snr_db: np.ndarray, policy: AugmentationPolicy, rng):
    """Add the noise increment that lowers each record's SNR to the drawn target."""
    if policy.per_batch:
        gamma_tgt = np.full(len(x), rng.uniform(policy.snr_low_db, policy.snr_high_db))
    else:
        gamma_tgt = rng.uniform(policy.snr_low_db, policy.snr_high_db, size=len(x))
    new_snr = np.minimum(gamma_tgt, snr_db)

    g0 = 10.0 ** (-snr_db / 10.0)
    g1 = 10.0 ** (-new_snr / 10.0)
    p_total = np.mean(np.abs(x) ** 2, axis=1)
    p_signal = p_total / (1.0 + g0)
    increment = np.clip(p_signal * (g1 - g0), 0.0, None)

    noise = (
        rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    ) * np.sqrt(increment / 2.0)[:, None]
    return x + noise, new_snr


def noise_augment_batch(
    batch: list[LabeledObservation], policy: AugmentationPolicy, seed: int
) -> list[LabeledObservation]:
    """Lower a batch's SNR to one uniformly drawn target below each record's SNR.

    Pure: returns new observations; clean references are carried through.
    """
    if not batch:
        raise ConfigError("batch is empty")
    rng = np.random.default_rng(seed)
    x = np.stack([obs.signal.samples for obs in batch])
    snr = np.array([obs.snr_db for obs in batch])
    x_aug, new_snr = _augment_arrays(x, snr, policy, rng)
    return [
        LabeledObservation(
            signal=obs.signal.with_samples(x_aug[i]),
            device_id=obs.device_id,
            snr_db=float(new_snr[i]),
            clean_ref=obs.clean_ref,
        )
        for i, obs in enumerate(batch)
    ]


def make_optimizer(optimizer_id: str, params, lr: float):
    if optimizer_id not in _OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {optimizer_id!r}")
    return _OPTIMIZERS[optimizer_id](params, lr=lr)


class _PatienceTracker:
    """Best-value tracking with LR-halving and early-stop patience."""

    def __init__(self, optimizer, halve_every: int, stop_after: int):
        self.optimizer = optimizer
        self.halve_every = halve_every
        self.stop_after = stop_after
        self.best = np.inf
        self.since_best = 0
        self.improved = False

    def update(self, value: float) -> bool:
        """Record one epoch's validation value; True means stop now."""
        self.improved = value < self.best
        if self.improved:
            self.best = value
            self.since_best = 0
            return False
        self.since_best += 1
        if self.since_best >= self.stop_after:
            return True
        if self.since_best % self.halve_every == 0:
            for group in self.optimizer.param_groups:
                group["lr"] /= 2.0
        return False


def _split_indices(num_records: int, validation_fraction: float, rng):
    order = rng.permutation(num_records)
    n_val = max(1, int(round(num_records * validation_fraction)))
    if n_val >= num_records:
        raise ConfigError("dataset too small for the validation split")
    return order[n_val:], order[:n_val]


def _complex_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    diff = torch.view_as_real(pred - target)
    return diff.pow(2).sum(-1).mean()


def train_noise_predictor(
    dataset: list[LabeledObservation],
    sched: NoiseSchedule,
    cfg: TrainConfig,
    model_config: NoisePredictorConfig | None = None,
):
    """Train the noise predictor on clean frames via the diffusion objective.

    Each step draws a uniform timestep and a fresh noise realization per
    example, corrupts the clean frame with the closed form, and minimizes
    the mean squared error between drawn and predicted noise. Returns the
    best-validation model and the loss history.
    """
    x0, _, _ = observations_to_arrays(dataset, use_clean=True)
    x0 = normalize_power_rows(x0)
    num_records, m = x0.shape
    if model_config is None:
        model_config = NoisePredictorConfig(signal_len=m)
    if model_config.signal_len != m:
        raise ConfigError(f"model expects length {model_config.signal_len}, data has {m}")

    torch.manual_seed(cfg.seed)
    model = NoisePredictor(model_config)
    optimizer = make_optimizer(cfg.optimizer_id, model.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split_indices(num_records, cfg.validation_fraction, rng)

    T = sched.num_steps
    # Fixed validation corruption so the early-stop signal is noiseless.
    t_val = rng.integers(1, T + 1, size=len(val_idx))
    eps_val = (
        rng.standard_normal((len(val_idx), m)) + 1j * rng.standard_normal((len(val_idx), m))
    ) / np.sqrt(2.0)
    abar_v = sched.alpha_bar[t_val][:, None]
    xt_val = np.sqrt(abar_v) * x0[val_idx] + np.sqrt(1.0 - abar_v) * eps_val
    xt_val_t = torch.from_numpy(xt_val.astype(np.complex64))
    eps_val_t = torch.from_numpy(eps_val.astype(np.complex64))
    t_val_t = torch.from_numpy(t_val.astype(np.int64))

    def validation_loss() -> float:
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for lo in range(0, len(val_idx), 256):
                sl = slice(lo, lo + 256)
                pred = model(xt_val_t[sl], t_val_t[sl])
                n = xt_val_t[sl].shape[0]
                total += _complex_mse(pred, eps_val_t[sl]).item() * n
                count += n
        return total / count

    history = {"train_loss": [], "val_loss": [], "lr": []}
    tracker = _PatienceTracker(optimizer, cfg.lr_halving_patience, cfg.early_stop_patience)
    best_state = copy.deepcopy(model.state_dict())

    for _ in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            t = rng.integers(1, T + 1, size=len(idx))
            eps = (
                rng.standard_normal((len(idx), m)) + 1j * rng.standard_normal((len(idx), m))
            ) / np.sqrt(2.0)
            abar = sched.alpha_bar[t][:, None]
            x_t = np.sqrt(abar) * x0[idx] + np.sqrt(1.0 - abar) * eps

            pred = model(
                torch.from_numpy(x_t.astype(np.complex64)),
                torch.from_numpy(t.astype(np.int64)),
            )
            loss = _complex_mse(pred, torch.from_numpy(eps.astype(np.complex64)))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)

        val = validation_loss()
        history["train_loss"].append(epoch_loss / seen)
        history["val_loss"].append(val)
        history["lr"].append(optimizer.param_groups[0]["lr"])
        stop = tracker.update(val)
        if tracker.improved:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    history["best_epoch"] = int(np.argmin(history["val_loss"]))
    return model, history


def _classifier_inputs(
    x: np.ndarray,
    snr_db: np.ndarray,
    predictor: NoisePredictor | None,
    sched: NoiseSchedule | None,
    t_prime: int,
    snr_source: str,
) -> np.ndarray:
    """Shared inference front end: normalize, then optionally denoise."""
    x = normalize_power_rows(x)
    if t_prime == 0 or predictor is None:
        return x
    if snr_source == "truth":
        gammas = snr_db
    elif snr_source == "estimate":
        gammas = np.array([estimate_snr_samples(row) for row in x])
    else:
        raise ConfigError("snr_source must be 'truth' or 'estimate'")
    return denoise_batch(x, gammas, t_prime, as_denoise_fn(predictor), sched)


def train_classifier(
    dataset: list[LabeledObservation],
    predictor: NoisePredictor | None,
    sched: NoiseSchedule | None,
    policy: AugmentationPolicy,
    t_prime: int,
    cfg: TrainConfig,
    clf_config: ClassifierConfig | None = None,
    snr_source: str = "truth",
):
    """Train the device classifier on augmented (and optionally denoised) frames.

    Every batch is noise-augmented, power-normalized, passed through the
    frozen noise predictor when t_prime > 0, and scored with cross-entropy.
    t_prime = 0 is the exact baseline path (no denoising stage).
    """
    if t_prime > 0 and (predictor is None or sched is None):
        raise ConfigError("denoising pipeline needs a predictor and schedule")
    x_all, labels, snr_all = observations_to_arrays(dataset)
    num_records, m = x_all.shape
    num_classes = int(labels.max()) + 1
    if clf_config is None:
        clf_config = ClassifierConfig(num_classes=num_classes, signal_len=m)
    if clf_config.signal_len != m:
        raise ConfigError(f"model expects length {clf_config.signal_len}, data has {m}")
    if labels.max() >= clf_config.num_classes or labels.min() < 0:
        raise ConfigError("label outside [0, num_classes)")

    torch.manual_seed(cfg.seed)
    model = Classifier(clf_config)
    optimizer = make_optimizer(cfg.optimizer_id, model.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split_indices(num_records, cfg.validation_fraction, rng)

    # The predictor is frozen, so the validation pipeline is computed once.
    val_x, val_snr = _augment_arrays(x_all[val_idx], snr_all[val_idx], policy, rng)
    val_x = _classifier_inputs(val_x, val_snr, predictor, sched, t_prime, snr_source)
    val_x_t = torch.from_numpy(val_x.astype(np.complex64))
    val_y_t = torch.from_numpy(labels[val_idx])

    def validation_metrics() -> tuple[float, float]:
        model.eval()
        losses, correct = 0.0, 0
        with torch.no_grad():
            for lo in range(0, len(val_idx), 256):
                sl = slice(lo, lo + 256)
                logits = model(val_x_t[sl])
                losses += F.cross_entropy(logits, val_y_t[sl], reduction="sum").item()
                correct += (logits.argmax(1) == val_y_t[sl]).sum().item()
        return losses / len(val_idx), correct / len(val_idx)

    history = {"train_loss": [], "val_loss": [], "val_accuracy": [], "lr": []}
    tracker = _PatienceTracker(optimizer, cfg.lr_halving_patience, cfg.early_stop_patience)
    best_state = copy.deepcopy(model.state_dict())

    for _ in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            x_aug, snr_aug = _augment_arrays(x_all[idx], snr_all[idx], policy, rng)
            x_in = _classifier_inputs(x_aug, snr_aug, predictor, sched, t_prime, snr_source)

            model.train()
            logits = model(torch.from_numpy(x_in.astype(np.complex64)))
            loss = F.cross_entropy(logits, torch.from_numpy(labels[idx]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)

        val_loss, val_acc = validation_metrics()
        history["train_loss"].append(epoch_loss / seen)
        history["val_loss"].append(val_loss)
        history["val_accuracy"].append(val_acc)
        history["lr"].append(optimizer.param_groups[0]["lr"])
        stop = tracker.update(val_loss)
        if tracker.improved:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    history["best_epoch"] = int(np.argmin(history["val_loss"]))
    return model, history


def train_baseline_classifier(
    dataset: list[LabeledObservation],
    policy: AugmentationPolicy,
    cfg: TrainConfig,
    clf_config: ClassifierConfig | None = None,
):
    """Augmentation-only reference classifier: same pipeline, no denoising."""
    return train_classifier(
        dataset, None, None, policy, t_prime=0, cfg=cfg, clf_config=clf_config
    )
