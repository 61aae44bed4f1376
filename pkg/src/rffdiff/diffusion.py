"""Variance schedule, forward diffusion, SNR mapping, and DDIM denoising.

The forward process corrupts a clean frame x0 over T steps,
x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, with a linear beta
schedule. Each step t has a known SNR, so a measured reception SNR picks
the matching start step; denoising then walks a decimated timestep ladder
deterministically (no fresh noise injected).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PlanError
from .signals import ComplexSignal

SNR_CLAMP_DB = 60.0


@dataclass(frozen=True)
class ScheduleConfig:
    """Serializable schedule / denoising knobs of an experiment."""

    num_steps: int = 1000
    beta_min: float = 1e-5
    beta_max: float = 1.5e-3
    refine_steps: int = 10
    literal_alpha: bool = False

    def __post_init__(self):
        if self.num_steps < 2:
            raise ConfigError("num_steps must be >= 2")
        if not (0.0 < self.beta_min < self.beta_max < 1.0):
            raise ConfigError("need 0 < beta_min < beta_max < 1")
        if self.refine_steps < 1:
            raise ConfigError("refine_steps must be >= 1")

    def build(self) -> "NoiseSchedule":
        return build_schedule(self.num_steps, self.beta_min, self.beta_max)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step corruption bookkeeping; index 0 stands for the clean signal.

    All arrays have T+1 entries. beta[0] and alpha[0] are padding
    (0 and 1) so that beta[t], alpha[t], alpha_bar[t] line up with step t.
    gamma_map[t] is the scheduled SNR in dB at step t for reference powers
    (p_s0, p_n0) of the clean signal.
    """

    num_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    gamma_map: np.ndarray
    p_s0: float
    p_n0: float

    def __post_init__(self):
        T = self.num_steps
        for name in ("beta", "alpha", "alpha_bar", "gamma_map"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != (T + 1,):
                raise ConfigError(f"{name} must have T+1 entries")
        if not np.all(np.diff(self.beta[1:]) > 0):
            raise ConfigError("beta must be strictly increasing over t")
        if not (np.all(self.beta[1:] > 0) and np.all(self.beta[1:] < 1)):
            raise ConfigError("beta values must lie in (0, 1)")
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        if not (np.all(self.alpha_bar > 0) and np.all(self.alpha_bar <= 1)):
            raise ConfigError("alpha_bar values must lie in (0, 1]")
        if not np.all(np.diff(self.gamma_map) < 0):
            raise ConfigError("gamma_map must be strictly decreasing")


@dataclass(frozen=True)
class DenoisePlan:
    """Descending timestep ladder for one denoising run."""

    t_star: int
    t_prime: int
    delta_t: float
    timesteps: tuple

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        object.__setattr__(self, "timesteps", ts)
        if not (1 <= self.t_prime <= self.t_star):
            raise PlanError("need 1 <= t_prime <= t_star")
        if ts[-1] != 0:
            raise PlanError("plan must terminate at step 0")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise PlanError("timesteps must be strictly decreasing")


@dataclass(frozen=True)
class DiffusionSample:
    """A corrupted frame together with the noise that produced it."""

    x_t: ComplexSignal
    t: int
    epsilon: np.ndarray

    def __post_init__(self):
        if len(self.epsilon) != len(self.x_t):
            raise ConfigError("epsilon and x_t lengths must match")
        if self.t < 1:
            raise ConfigError("diffusion step must be >= 1")


def _snr_db(p_signal: float, p_noise: float) -> float:
    if p_noise <= 0.0:
        return SNR_CLAMP_DB
    return min(10.0 * math.log10(p_signal / p_noise), SNR_CLAMP_DB)


def build_schedule(
    T: int,
    beta_min: float,
    beta_max: float,
    p_s0: float = 1.0,
    p_n0: float = 0.0,
) -> NoiseSchedule:
    """Build the linear beta schedule and its per-step SNR map.

    beta[t] runs linearly from beta_min (t=1) to beta_max (t=T). The SNR at
    step t is abar_t*p_s0 / (abar_t*p_n0 + (1 - abar_t)), expressed in dB
    and clamped at +60 dB (the t=0 entry for a noiseless reference).
    """
    if T < 2:
        raise ConfigError("schedule needs T >= 2")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ConfigError("need 0 < beta_min < beta_max < 1")
    if not p_s0 > 0:
        raise ConfigError("p_s0 must be positive")
    if p_n0 < 0:
        raise ConfigError("p_n0 must be non-negative")

    t = np.arange(T + 1, dtype=np.float64)
    beta = np.zeros(T + 1)
    beta[1:] = beta_min + (t[1:] - 1.0) / (T - 1.0) * (beta_max - beta_min)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha[1:])])

    gamma_map = np.array(
        [
            _snr_db(abar * p_s0, abar * p_n0 + (1.0 - abar))
            for abar in alpha_bar
        ]
    )
    return NoiseSchedule(
        num_steps=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        gamma_map=gamma_map,
        p_s0=p_s0,
        p_n0=p_n0,
    )


def sample_unit_noise(length: int, seed: int) -> np.ndarray:
    """Circular complex Gaussian draw, unit variance per complex sample."""
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(length) + 1j * rng.standard_normal(length)) / np.sqrt(2.0)


def _check_step(t: int, T: int, low: int = 1):
    if not (low <= t <= T):
        raise ConfigError(f"step {t} outside [{low}, {T}]")


def forward_step(
    x_prev: ComplexSignal, t: int, sched: NoiseSchedule, seed: int
) -> ComplexSignal:
    """One forward corruption step: sqrt(alpha_t)*x + sqrt(1-alpha_t)*eps."""
    _check_step(t, sched.num_steps)
    eps = sample_unit_noise(len(x_prev), seed)
    a = sched.alpha[t]
    return x_prev.with_samples(np.sqrt(a) * x_prev.samples + np.sqrt(1.0 - a) * eps)


def forward_diffuse(
    x0: ComplexSignal, t: int, sched: NoiseSchedule, seed: int
) -> DiffusionSample:
    """Jump straight to step t via the closed form, keeping the noise draw."""
    _check_step(t, sched.num_steps)
    eps = sample_unit_noise(len(x0), seed)
    abar = sched.alpha_bar[t]
    x_t = np.sqrt(abar) * x0.samples + np.sqrt(1.0 - abar) * eps
    return DiffusionSample(x_t=x0.with_samples(x_t), t=t, epsilon=eps)


def snr_at_step(sched: NoiseSchedule, t: int) -> float:
    """Scheduled SNR in dB at step t (t=0 is the clean reference)."""
    _check_step(t, sched.num_steps, low=0)
    return float(sched.gamma_map[t])


def map_snr_to_step(sched: NoiseSchedule, gamma_db: float) -> int:
    """Pick the step whose scheduled SNR is closest to the measured one.

    Ties break toward the smaller step.
    """
    if not np.isfinite(gamma_db):
        raise ConfigError("gamma_db must be finite")
    diffs = np.abs(sched.gamma_map[1:] - gamma_db)
    return int(np.argmin(diffs)) + 1


def plan_timesteps(t_star: int, t_prime: int) -> DenoisePlan:
    """Decimate [t_star..0] into t_prime hops: t_i = t_star - i*(t_star/t_prime).

    Fractional steps round half-up; duplicates collapse; the ladder always
    ends at 0.
    """
    if t_prime < 1:
        raise PlanError("t_prime must be >= 1")
    if t_prime > t_star:
        raise PlanError(f"t_prime={t_prime} exceeds start step t_star={t_star}")
    delta = t_star / t_prime
    steps = []
    for i in range(1, t_prime + 1):
        v = int(math.floor(t_star - i * delta + 0.5))
        if not steps or v < steps[-1]:
            steps.append(v)
    if steps[-1] != 0:
        steps.append(0)
    return DenoisePlan(t_star=t_star, t_prime=t_prime, delta_t=delta, timesteps=tuple(steps))


def _alpha_bar_at(sched: NoiseSchedule, t: int) -> float:
    return 1.0 if t == 0 else float(sched.alpha_bar[t])


def ddim_step(
    x_t: np.ndarray,
    t_from: int,
    t_to: int,
    eps_hat: np.ndarray,
    sched: NoiseSchedule,
    literal_alpha: bool = False,
) -> np.ndarray:
    """Deterministic denoising hop from t_from down to t_to.

    Reconstructs x0 from the predicted noise, then re-corrupts it to t_to
    with the same prediction; t_to = 0 returns the x0 estimate directly.
    ``literal_alpha`` swaps the x0 coefficient for sqrt(alpha_{t_to}) (the
    single-step no-bar variant) instead of sqrt(alpha_bar_{t_to}).
    """
    if not (0 <= t_to < t_from <= sched.num_steps):
        raise ConfigError(f"need 0 <= t_to < t_from <= T, got {t_from}->{t_to}")
    if len(eps_hat) != len(x_t):
        raise ConfigError("eps_hat length must match x_t")
    abar_from = _alpha_bar_at(sched, t_from)
    abar_to = _alpha_bar_at(sched, t_to)
    x0_hat = (x_t - np.sqrt(1.0 - abar_from) * eps_hat) / np.sqrt(abar_from)
    if t_to == 0:
        return x0_hat
    coef = sched.alpha[t_to] if literal_alpha else abar_to
    return np.sqrt(coef) * x0_hat + np.sqrt(1.0 - abar_to) * eps_hat


def denoise_batch(
    x: np.ndarray,
    gamma_db: np.ndarray,
    t_prime: int,
    predictor,
    sched: NoiseSchedule,
    literal_alpha: bool = False,
) -> np.ndarray:
    """Denoise a [B, M] batch; records sharing a start step run together.

    ``predictor(batch, t)`` must return the predicted noise for a [B, M]
    complex batch at integer step t. t_prime is clamped per record to its
    start step. Outputs are renormalized to unit mean power.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ConfigError("denoise_batch expects a [B, M] array")
    gamma_db = np.broadcast_to(np.asarray(gamma_db, dtype=np.float64), (x.shape[0],))
    if t_prime < 1:
        raise PlanError("t_prime must be >= 1")

    t_stars = np.array([map_snr_to_step(sched, g) for g in gamma_db])
    out = np.empty_like(x)
    for t_star in np.unique(t_stars):
        idx = np.flatnonzero(t_stars == t_star)
        plan = plan_timesteps(int(t_star), min(t_prime, int(t_star)))
        cur = x[idx]
        t_from = plan.t_star
        for t_to in plan.timesteps:
            eps_hat = np.asarray(predictor(cur, t_from), dtype=np.complex128)
            if eps_hat.shape != cur.shape:
                raise ConfigError("predictor output shape must match its input")
            cur = ddim_step(cur, t_from, t_to, eps_hat, sched, literal_alpha)
            t_from = t_to
        power = np.mean(np.abs(cur) ** 2, axis=1, keepdims=True)
        scale = np.where(power > 0, np.sqrt(power), 1.0)
        out[idx] = cur / scale
    return out


def denoise(
    x: ComplexSignal,
    gamma_db: float,
    t_prime: int,
    predictor,
    sched: NoiseSchedule,
    literal_alpha: bool = False,
) -> ComplexSignal:
    """Denoise one frame: SNR -> start step -> DDIM ladder -> unit power.

    Fully deterministic for fixed predictor weights and input.
    """
    y = denoise_batch(
        x.samples[None, :], np.array([gamma_db]), t_prime, predictor, sched, literal_alpha
    )
    return x.with_samples(y[0])
