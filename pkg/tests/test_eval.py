import numpy as np
import pytest
import torch

from rffdiff.diffusion import build_schedule
from rffdiff.errors import ConfigError
from rffdiff.evaluate import (
    SweepResult,
    accuracy_sweep,
    correlation,
    correlation_sweep,
    export_schedule_figure,
    export_waveform_figures,
    plot_sweep,
)
from rffdiff.models import Classifier, ClassifierConfig, NoisePredictor, NoisePredictorConfig
from rffdiff.signals import (
    ChannelConfig,
    generate_legacy_preamble,
    make_device_population,
    synthesize_dataset,
)
from rffdiff.training import TrainConfig, train_noise_predictor

FS = 20e6

SMALL_DM = NoisePredictorConfig(
    signal_len=320, model_dim=32, num_blocks=1, num_heads=2, step_embed_dim=32, patch_len=16
)


@pytest.fixture(scope="module")
def sched():
    return build_schedule(1000, 1e-5, 1.5e-3)


@pytest.fixture(scope="module")
def dataset():
    population = make_device_population(6, 7)
    channel = ChannelConfig(np.array([1.0, 0.25 + 0.10j, 0.08 - 0.05j]))
    return synthesize_dataset(population, channel, 10, 40.0, seed=41)


@pytest.fixture(scope="module")
def zero_predictor():
    torch.manual_seed(0)
    return NoisePredictor(SMALL_DM)  # zero output head: denoising only rescales


@pytest.fixture(scope="module")
def trained_predictor(dataset, sched):
    cfg = TrainConfig(learning_rate=1e-3, batch_size=32, lr_halving_patience=6,
                      early_stop_patience=10, max_epochs=10, seed=0)
    model, _ = train_noise_predictor(dataset, sched, cfg, SMALL_DM)
    return model


class TestCorrelation:
    def test_self_correlation_is_one(self):
        x = generate_legacy_preamble(FS).samples
        assert correlation(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_scale_and_phase_invariance(self):
        x = generate_legacy_preamble(FS).samples
        c = 0.3 * np.exp(1j * 1.2)
        assert correlation(x, c * x) == pytest.approx(1.0, abs=1e-12)

    def test_against_independent_noise(self):
        x = generate_legacy_preamble(FS).samples
        values = []
        for seed in range(500):
            rng = np.random.default_rng(seed)
            noise = (rng.standard_normal(320) + 1j * rng.standard_normal(320)) / np.sqrt(2)
            values.append(correlation(x, noise))
        # expectation ~ sqrt(pi/4)/sqrt(320) ~ 0.05
        assert np.mean(values) < 0.15

    def test_zero_norm_rejected(self):
        with pytest.raises(ConfigError):
            correlation(np.zeros(4, dtype=complex), np.ones(4, dtype=complex))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            correlation(np.ones(4, dtype=complex), np.ones(5, dtype=complex))


class TestCorrelationSweep:
    def test_reproducible_and_monotone(self, dataset, zero_predictor, sched):
        kwargs = dict(snr_points_db=(0.0, 10.0, 20.0, 30.0, 40.0),
                      trials=40, t_prime=3, seed=2)
        a = correlation_sweep(dataset, zero_predictor, sched, **kwargs)
        b = correlation_sweep(dataset, zero_predictor, sched, **kwargs)
        assert a == b
        noisy = a.values_noisy_or_baseline
        assert all(x < y for x, y in zip(noisy, noisy[1:]))

    def test_high_snr_correlation_near_one(self, dataset, zero_predictor, sched):
        result = correlation_sweep(
            dataset, zero_predictor, sched, snr_points_db=(40.0,), trials=50,
            t_prime=2, seed=3,
        )
        assert result.values_noisy_or_baseline[0] > 0.99

    def test_requires_clean_references(self, dataset, zero_predictor, sched):
        stripped = [
            type(obs)(signal=obs.signal, device_id=obs.device_id, snr_db=obs.snr_db)
            for obs in dataset[:4]
        ]
        with pytest.raises(ConfigError):
            correlation_sweep(stripped, zero_predictor, sched, trials=4)

    def test_trained_predictor_improves_low_snr(self, dataset, trained_predictor, sched):
        result = correlation_sweep(
            dataset, trained_predictor, sched,
            snr_points_db=(0.0, 5.0, 10.0, 15.0), trials=60, t_prime=10, seed=4,
        )
        for denoised, noisy in zip(result.values_denoised, result.values_noisy_or_baseline):
            assert denoised > noisy


class TestAccuracySweep:
    def test_sweep_shapes_and_range(self, dataset, zero_predictor, sched):
        torch.manual_seed(5)
        cfg = ClassifierConfig(num_classes=6, signal_len=320, temporal_depth=1,
                               class_depth=1, num_heads=2, mlp_hidden=16)
        clf, base = Classifier(cfg), Classifier(cfg)
        result = accuracy_sweep(
            dataset, clf, base, zero_predictor, sched,
            snr_points_db=(0.0, 40.0), t_prime=2, seed=6,
        )
        assert result.metric_name == "accuracy"
        assert all(0.0 <= v <= 1.0 for v in result.values_denoised)
        assert all(0.0 <= v <= 1.0 for v in result.values_noisy_or_baseline)
        assert result.num_trials == len(dataset)

    def test_missing_model_rejected(self, dataset, zero_predictor, sched):
        with pytest.raises(ConfigError):
            accuracy_sweep(dataset, None, None, zero_predictor, sched)


class TestFigureExports:
    def test_waveform_artifacts(self, tmp_path, dataset, trained_predictor, sched):
        artifacts = export_waveform_figures(
            dataset[0], trained_predictor, sched, tmp_path, noisy_snr_db=5.0, t_prime=10
        )
        assert len(artifacts) == 6
        for path in artifacts:
            assert path.exists()
        series = {}
        for name in ("original", "noised", "denoised"):
            rows = (tmp_path / f"waveform_{name}.csv").read_text().strip().split("\n")
            assert rows[0] == "i,q"
            assert len(rows) - 1 == 320
            data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
            series[name] = data[:, 0] + 1j * data[:, 1]
        # Added noise raises variance; denoising must recover correlation.
        assert np.var(series["noised"].real) > np.var(series["original"].real)
        ref = series["original"]
        assert correlation(series["denoised"], ref) > correlation(series["noised"], ref)

    def test_schedule_figure_deterministic_and_correct(self, tmp_path, sched):
        out1 = export_schedule_figure(sched, tmp_path / "a")
        out2 = export_schedule_figure(sched, tmp_path / "b")
        svg1, csv1 = out1
        svg2, csv2 = out2
        assert svg1.read_bytes() == svg2.read_bytes()
        rows = csv1.read_text().strip().split("\n")[1:]
        values = np.array([float(r.split(",")[1]) for r in rows])
        assert len(values) == sched.num_steps + 1
        assert np.all(np.diff(values) < 0)
        assert values[0] == sched.gamma_map[0]
        assert values[-1] == pytest.approx(sched.gamma_map[-1], abs=1e-6)

    def test_plot_sweep_writes_svg(self, tmp_path):
        result = SweepResult(
            snr_points_db=(0.0, 10.0), metric_name="accuracy",
            values_denoised=(0.9, 0.95), values_noisy_or_baseline=(0.5, 0.8),
            num_trials=10, seed=0,
        )
        out = tmp_path / "sweep.svg"
        plot_sweep(result, out, "a", "b")
        assert out.exists() and out.stat().st_size > 0


class TestSweepResultInvariants:
    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ConfigError):
            SweepResult(
                snr_points_db=(0.0, 1.0), metric_name="x",
                values_denoised=(0.1,), values_noisy_or_baseline=(0.2, 0.3),
                num_trials=1, seed=0,
            )
