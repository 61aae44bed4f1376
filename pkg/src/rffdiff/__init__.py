"""Diffusion-based denoising for RF fingerprint identification on
simulated 802.11 legacy preambles."""

from .diffusion import (
    DenoisePlan,
    DiffusionSample,
    NoiseSchedule,
    ScheduleConfig,
    build_schedule,
    ddim_step,
    denoise,
    denoise_batch,
    forward_diffuse,
    forward_step,
    map_snr_to_step,
    plan_timesteps,
    snr_at_step,
)
from .errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    PlanError,
    RffdiffError,
    SignalStructureError,
)
from .models import (
    Classifier,
    ClassifierConfig,
    NoisePredictor,
    NoisePredictorConfig,
    as_denoise_fn,
    classify,
    embed_diffusion_step,
    phase_modulation_encoding,
    predict_noise,
)
from .signals import (
    ChannelConfig,
    ComplexSignal,
    DeviceProfile,
    LabeledObservation,
    SynthesisConfig,
    add_awgn,
    apply_channel,
    apply_device_impairments,
    estimate_snr,
    generate_legacy_preamble,
    make_device_population,
    normalize_power,
    synthesize_dataset,
    synthesize_observation,
)
from .training import (
    AugmentationPolicy,
    TrainConfig,
    noise_augment_batch,
    train_baseline_classifier,
    train_classifier,
    train_noise_predictor,
)

__version__ = "0.1.0"
