"""Command-line workflow: synthesize, train, denoise, evaluate.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 runtime
failure. Every command declares its outputs up front; on failure, files it
already created are removed so no partial artifacts survive.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io_formats
from .diffusion import map_snr_to_step, denoise_batch
from .errors import ConfigError, DataFormatError, RffdiffError
from .evaluate import (
    DEFAULT_SNR_GRID_DB,
    accuracy_sweep,
    correlation_sweep,
    export_schedule_figure,
    export_waveform_figures,
    plot_sweep,
)
from .models import as_denoise_fn
from .signals import LabeledObservation, estimate_snr_samples, normalize_power_rows
from .training import (
    observations_to_arrays,
    train_classifier,
    train_noise_predictor,
)


@dataclass
class CommandOutcome:
    """What a command did: exit code, files written, structured events."""

    exit_code: int = 0
    artifacts: list = field(default_factory=list)
    log: list = field(default_factory=list)

    def event(self, name: str, **details):
        record = {"event": name, **details}
        self.log.append(record)
        extras = " ".join(f"{k}={v}" for k, v in details.items())
        print(f"[{name}] {extras}".rstrip())

    def wrote(self, path):
        self.artifacts.append(str(path))


class UsageError(RffdiffError):
    """Bad flag grammar or flag values; maps to exit code 1."""


def _cleanup(outcome: CommandOutcome):
    for path in outcome.artifacts:
        try:
            Path(path).unlink(missing_ok=True)
        except OSError:
            pass


def _execute(fn, outcome: CommandOutcome) -> CommandOutcome:
    try:
        fn(outcome)
    except UsageError as exc:
        _cleanup(outcome)
        outcome.event("usage-error", message=str(exc))
        outcome.exit_code = 1
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        _cleanup(outcome)
        outcome.event("data-error", message=str(exc))
        outcome.exit_code = 2
    except Exception as exc:  # pragma: no cover - defensive catch-all
        _cleanup(outcome)
        outcome.event("runtime-error", message=f"{type(exc).__name__}: {exc}")
        outcome.exit_code = 3
    else:
        missing = [p for p in outcome.artifacts if not Path(p).exists()]
        if missing:
            outcome.event("runtime-error", message=f"missing declared artifacts: {missing}")
            outcome.exit_code = 3
    return outcome


def _history_csv(history: dict, path):
    keys = [k for k, v in history.items() if isinstance(v, list)]
    lines = ["epoch," + ",".join(keys)]
    for i in range(len(history[keys[0]])):
        lines.append(f"{i}," + ",".join(f"{history[k][i]:.6g}" for k in keys))
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_init_config(out_path) -> CommandOutcome:
    """Write the default experiment config (with its pinned device profiles)."""
    outcome = CommandOutcome()

    def run(oc: CommandOutcome):
        io_formats.save_experiment_config(io_formats.default_experiment_config(), out_path)
        oc.wrote(out_path)
        oc.event("config-written", path=str(out_path))

    return _execute(run, outcome)


def cmd_synth(config_path, out_dataset, packets_per_device: int = 500, seed: int = 0) -> CommandOutcome:
    """Synthesize an equal-count labeled dataset for every configured device."""
    outcome = CommandOutcome()

    def run(oc: CommandOutcome):
        if packets_per_device < 1:
            raise UsageError("--packets-per-device must be >= 1")
        config = io_formats.load_experiment_config(config_path)
        profiles = config.synthesis.resolve_profiles()
        from .signals import synthesize_dataset

        records = synthesize_dataset(
            profiles,
            config.synthesis.channel(),
            packets_per_device,
            config.synthesis.snr_db,
            seed,
        )
        io_formats.write_dataset(records, out_dataset)
        oc.wrote(out_dataset)
        oc.event(
            "dataset-written",
            path=str(out_dataset),
            records=len(records),
            devices=len(profiles),
            snr_db=config.synthesis.snr_db,
        )

    return _execute(run, outcome)


def cmd_train_dm(config_path, dataset_path, out_checkpoint) -> CommandOutcome:
    """Train the diffusion noise predictor and save its checkpoint."""
    outcome = CommandOutcome()

    def run(oc: CommandOutcome):
        config = io_formats.load_experiment_config(config_path)
        records = io_formats.read_dataset(dataset_path)
        sched = config.schedule.build()
        model, history = train_noise_predictor(
            records, sched, config.training, config.predictor
        )
        io_formats.save_checkpoint(model, out_checkpoint)
        oc.wrote(out_checkpoint)
        history_path = str(out_checkpoint) + ".history.csv"
        _history_csv(history, history_path)
        oc.wrote(history_path)
        oc.event(
            "dm-trained",
            epochs=len(history["train_loss"]),
            best_epoch=history["best_epoch"],
            best_val_loss=f"{min(history['val_loss']):.6f}",
        )

    return _execute(run, outcome)


def cmd_train_clf(
    config_path,
    dataset_path,
    dm_checkpoint,
    out_checkpoint,
    baseline: bool = False,
    snr_source: str = "truth",
) -> CommandOutcome:
    """Train the classifier, optionally as the no-denoising baseline."""
    outcome = CommandOutcome()

    def run(oc: CommandOutcome):
        config = io_formats.load_experiment_config(config_path)
        records = io_formats.read_dataset(dataset_path)
        signal_len = len(records[0].signal) if records else 0
        if baseline:
            predictor, sched, t_prime = None, None, 0
        else:
            predictor = io_formats.load_checkpoint(dm_checkpoint, "noise_predictor")
            if predictor.config.signal_len != signal_len:
                raise ConfigError(
                    f"checkpoint expects length {predictor.config.signal_len}, "
                    f"dataset has {signal_len}"
                )
            sched = config.schedule.build()
            t_prime = config.schedule.refine_steps

        model, history = train_classifier(
            records,
            predictor,
            sched,
            config.augmentation,
            t_prime,
            config.training,
            config.classifier,
            snr_source=snr_source,
        )
        io_formats.save_checkpoint(model, out_checkpoint)
        oc.wrote(out_checkpoint)

        stages = ["augment", "normalize"]
        if not baseline:
            stages.append(f"denoise(t_prime={t_prime}, snr_source={snr_source})")
        stages.append("classify")
        manifest_path = str(out_checkpoint) + ".pipeline.json"
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump({"baseline": baseline, "stages": stages}, fh, indent=2)
            fh.write("\n")
        oc.wrote(manifest_path)

        history_path = str(out_checkpoint) + ".history.csv"
        _history_csv(history, history_path)
        oc.wrote(history_path)
        oc.event(
            "classifier-trained",
            baseline=baseline,
            epochs=len(history["train_loss"]),
            best_epoch=history["best_epoch"],
            best_val_accuracy=f"{max(history['val_accuracy']):.4f}",
        )

    return _execute(run, outcome)


def cmd_denoise(
    dm_checkpoint,
    in_dataset,
    out_dataset,
    snr_source: str = "truth",
    t_prime: int = 10,
) -> CommandOutcome:
    """Denoise every record of a dataset and write the result."""
    outcome = CommandOutcome()

    def run(oc: CommandOutcome):
        if snr_source not in ("truth", "estimate"):
            raise UsageError("--snr-source must be 'truth' or 'estimate'")
        if t_prime < 1:
            raise UsageError("--t-prime must be >= 1")
        predictor = io_formats.load_checkpoint(dm_checkpoint, "noise_predictor")
        records = io_formats.read_dataset(in_dataset)
        if not records:
            io_formats.write_dataset([], out_dataset)
            oc.wrote(out_dataset)
            oc.event("denoised", records=0)
            return
        x, _, snr = observations_to_arrays(records)
        if x.shape[1] != predictor.config.signal_len:
            raise ConfigError(
                f"checkpoint expects length {predictor.config.signal_len}, "
                f"dataset has {x.shape[1]}"
            )
        x = normalize_power_rows(x)
        if snr_source == "estimate":
            gammas = np.array([estimate_snr_samples(row) for row in x])
        else:
            gammas = snr

        sched = io_formats.ScheduleConfig().build()
        clamped = 0
        for g in gammas:
            if t_prime > map_snr_to_step(sched, float(g)):
                clamped += 1
        if clamped:
            oc.event("t-prime-clamped", records=clamped, t_prime=t_prime)

        denoised = denoise_batch(x, gammas, t_prime, as_denoise_fn(predictor), sched)
        out_records = [
            LabeledObservation(
                signal=rec.signal.with_samples(denoised[i]),
                device_id=rec.device_id,
                snr_db=rec.snr_db,
                clean_ref=rec.clean_ref,
            )
            for i, rec in enumerate(records)
        ]
        io_formats.write_dataset(out_records, out_dataset)
        oc.wrote(out_dataset)
        oc.event("denoised", records=len(out_records), snr_source=snr_source)

    return _execute(run, outcome)


def cmd_eval(
    config_path,
    dm_checkpoint,
    clf_checkpoint,
    baseline_checkpoint,
    test_dataset,
    out_dir,
    trials: int = 500,
) -> CommandOutcome:
    """Produce the schedule figure, waveform trio, and both sweeps."""
    outcome = CommandOutcome()

    def run(oc: CommandOutcome):
        if trials < 1:
            raise UsageError("--trials must be >= 1")
        config = io_formats.load_experiment_config(config_path)
        predictor = io_formats.load_checkpoint(dm_checkpoint, "noise_predictor")
        classifier = io_formats.load_checkpoint(clf_checkpoint, "classifier")
        baseline = io_formats.load_checkpoint(baseline_checkpoint, "classifier")
        records = io_formats.read_dataset(test_dataset)
        if not records:
            raise ConfigError("test dataset is empty")
        sched = config.schedule.build()
        t_prime = config.schedule.refine_steps
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        for path in export_schedule_figure(sched, out):
            oc.wrote(path)
        for path in export_waveform_figures(records[0], predictor, sched, out):
            oc.wrote(path)

        corr = correlation_sweep(
            records, predictor, sched, DEFAULT_SNR_GRID_DB, trials, t_prime, seed=0
        )
        corr_csv = out / "correlation_sweep.csv"
        io_formats.write_sweep_csv(corr, corr_csv)
        oc.wrote(corr_csv)
        corr_svg = out / "correlation_sweep.svg"
        plot_sweep(corr, corr_svg, "denoised-original", "noised-original")
        oc.wrote(corr_svg)

        acc = accuracy_sweep(
            records, classifier, baseline, predictor, sched,
            DEFAULT_SNR_GRID_DB, t_prime, seed=0,
        )
        acc_csv = out / "accuracy_sweep.csv"
        io_formats.write_sweep_csv(acc, acc_csv)
        oc.wrote(acc_csv)
        acc_svg = out / "accuracy_sweep.svg"
        plot_sweep(acc, acc_svg, "with denoising", "baseline")
        oc.wrote(acc_svg)

        gap = (acc.values_denoised[0] - acc.values_noisy_or_baseline[0]) * 100.0
        oc.event(
            "accuracy-gap-at-0db",
            denoised=f"{acc.values_denoised[0]:.4f}",
            baseline=f"{acc.values_noisy_or_baseline[0]:.4f}",
            gap_points=f"{gap:+.1f}",
        )

    return _execute(run, outcome)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="rffdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("init-config", help="write the default experiment config")
    p.add_argument("out_config", help="path for the config JSON")

    p = sub.add_parser("synth", help="synthesize a labeled dataset")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("out_dataset", help="output dataset file")
    p.add_argument("--packets-per-device", type=int, default=500,
                   help="frames per device (default 500)")
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")

    p = sub.add_parser("train-dm", help="train the diffusion noise predictor")
    p.add_argument("config")
    p.add_argument("dataset")
    p.add_argument("out_checkpoint")

    p = sub.add_parser("train-clf", help="train the device classifier")
    p.add_argument("config")
    p.add_argument("dataset")
    p.add_argument("dm_checkpoint",
                   help="noise-predictor checkpoint (ignored with --baseline)")
    p.add_argument("out_checkpoint")
    p.add_argument("--baseline", action="store_true",
                   help="skip the denoising stage (augmentation-only reference)")
    p.add_argument("--snr-source", choices=("truth", "estimate"), default="truth",
                   help="SNR fed to the step mapping (default truth)")

    p = sub.add_parser("denoise", help="denoise a dataset with a trained predictor")
    p.add_argument("dm_checkpoint")
    p.add_argument("in_dataset")
    p.add_argument("out_dataset")
    p.add_argument("--snr-source", choices=("truth", "estimate"), default="truth")
    p.add_argument("--t-prime", type=int, default=10,
                   help="refinement steps (clamped per record, default 10)")

    p = sub.add_parser("eval", help="emit figures and sweep tables")
    p.add_argument("config")
    p.add_argument("dm_checkpoint")
    p.add_argument("clf_checkpoint")
    p.add_argument("baseline_checkpoint")
    p.add_argument("test_dataset")
    p.add_argument("out_dir")
    p.add_argument("--trials", type=int, default=500,
                   help="noise trials per correlation point (default 500)")

    return parser


def run(argv=None) -> CommandOutcome:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        outcome = CommandOutcome(exit_code=1)
        outcome.event("usage-error", message=str(exc))
        return outcome

    if args.command == "init-config":
        return cmd_init_config(args.out_config)
    if args.command == "synth":
        return cmd_synth(args.config, args.out_dataset, args.packets_per_device, args.seed)
    if args.command == "train-dm":
        return cmd_train_dm(args.config, args.dataset, args.out_checkpoint)
    if args.command == "train-clf":
        return cmd_train_clf(
            args.config, args.dataset, args.dm_checkpoint, args.out_checkpoint,
            baseline=args.baseline, snr_source=args.snr_source,
        )
    if args.command == "denoise":
        return cmd_denoise(
            args.dm_checkpoint, args.in_dataset, args.out_dataset,
            snr_source=args.snr_source, t_prime=args.t_prime,
        )
    if args.command == "eval":
        return cmd_eval(
            args.config, args.dm_checkpoint, args.clf_checkpoint,
            args.baseline_checkpoint, args.test_dataset, args.out_dir,
            trials=args.trials,
        )
    raise AssertionError(f"unhandled command {args.command}")  # pragma: no cover


def main(argv=None) -> None:
    sys.exit(run(argv).exit_code)


if __name__ == "__main__":
    main()
