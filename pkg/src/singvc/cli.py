"""Command-line surface: synth, train, convert, evaluate, augment.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime
failure.  Nonzero exits always print a message to stderr.  SVC_THREADS
caps torch worker threads (default: number of cores).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import audio, augment as augmod, dataset, identify, inference, model as modeling
from . import synthdata, training

USAGE_ERROR = 1
DATA_ERROR = 2
RUNTIME_ERROR = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _configure_threads():
    raw = os.environ.get("SVC_THREADS")
    if raw:
        try:
            torch.set_num_threads(max(1, int(raw)))
        except ValueError:
            raise CommandError(USAGE_ERROR, f"SVC_THREADS must be an integer, got {raw!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="singvc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic-singer corpus and manifest")
    p.add_argument("--out", required=True, help="output directory for WAVs and manifest")
    p.add_argument("--profiles", help="JSON profile spec (default: built-in dark/bright pair)")
    p.add_argument("--songs", type=int, default=4, help="songs per singer (last one is validation)")
    p.add_argument("--duration", type=float, default=30.0, help="song length in seconds")
    p.add_argument("--sample-rate", type=int, default=audio.DEFAULT_SAMPLE_RATE)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the two-phase training protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="flat key = value training config")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint")

    p = sub.add_parser("convert", help="convert a WAV to a target singer's voice")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem or .svc1 path")
    p.add_argument("--singer", required=True, help="target singer id")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)

    p = sub.add_parser("evaluate", help="identification accuracy on validation clips")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", required=True, choices=["reconstruction", "conversion"])
    p.add_argument("--report", required=True, help="CSV report path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--segment-seconds", type=float, default=0.0,
                   help="evaluate fixed-length segments instead of whole clips (0 = whole)")
    p.add_argument("--id-steps", type=int, default=400, help="identifier training steps")

    p = sub.add_parser("augment", help="write the four augmentation variants of a WAV")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)

    return parser


def cmd_synth(args) -> int:
    try:
        profiles = synthdata.load_profiles(args.profiles) if args.profiles else synthdata.default_profiles()
        if args.songs < 2:
            raise synthdata.ProfileError("--songs must be >= 2 (one train song plus validation)")
        if args.duration <= 0:
            raise synthdata.ProfileError("--duration must be positive")
    except synthdata.ProfileError as exc:
        raise CommandError(DATA_ERROR, str(exc))
    manifest_path = synthdata.make_synthetic_manifest(
        profiles,
        args.songs,
        args.out,
        duration_s=args.duration,
        sample_rate=args.sample_rate,
        base_seed=args.seed,
    )
    print(manifest_path)
    return 0


def cmd_train(args) -> int:
    try:
        config = training.parse_config(args.config)
        manifest, registry = dataset.load_manifest(args.manifest)
        if registry.k < 2:
            raise dataset.ManifestError(f"training requires at least 2 singers, got k={registry.k}")
    except (training.ConfigError, dataset.ManifestError) as exc:
        raise CommandError(DATA_ERROR, str(exc))
    try:
        written = training.train(config, manifest, registry, args.out, resume=args.resume)
    except FileNotFoundError as exc:
        raise CommandError(DATA_ERROR, str(exc))
    except ValueError as exc:
        raise CommandError(DATA_ERROR, str(exc))
    print(f"wrote {len(written)} checkpoints under {Path(args.out) / 'checkpoints'}")
    return 0


def _load_checkpoint(path) -> tuple[modeling.SvcModel, dict]:
    try:
        return modeling.load_checkpoint(path)
    except (modeling.CheckpointError, FileNotFoundError) as exc:
        raise CommandError(DATA_ERROR, str(exc))


def cmd_convert(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    try:
        clip = audio.read_wav(args.input)
    except (FileNotFoundError, audio.AudioError) as exc:
        raise CommandError(DATA_ERROR, f"cannot read input: {exc}")
    if clip.sample_rate != model.sample_rate:
        clip = audio.resample(clip, model.sample_rate)
    try:
        converted = inference.convert(
            clip, args.singer, model, temperature=args.temperature, rng_seed=args.seed
        )
    except (KeyError, ValueError) as exc:
        message = exc.args[0] if exc.args else str(exc)
        raise CommandError(DATA_ERROR, str(message))
    audio.write_wav(converted, args.output)
    print(args.output)
    return 0


def cmd_evaluate(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    try:
        manifest, registry = dataset.load_manifest(args.manifest)
    except dataset.ManifestError as exc:
        raise CommandError(DATA_ERROR, str(exc))
    if tuple(registry.ids) != model.singer_ids:
        raise CommandError(
            DATA_ERROR,
            f"manifest singers {registry.ids} do not match checkpoint singers {model.singer_ids}",
        )
    n_validation = sum(len(s.validation_files()) for s in manifest.singers)
    if n_validation == 0:
        raise CommandError(DATA_ERROR, "manifest has no validation files to evaluate")

    profiles = None
    profiles_path = Path(args.manifest).parent / "profiles.json"
    if profiles_path.exists():
        profiles = synthdata.load_profiles(profiles_path)
        by_name = {p.name: p for p in profiles}
        if set(by_name) >= set(registry.ids):
            profiles = [by_name[sid] for sid in registry.ids]
        else:
            profiles = None

    cache = dataset.AudioCache(sample_rate=model.sample_rate)
    id_net = identify.train_identifier(
        manifest,
        registry,
        config=identify.IdTrainConfig(steps=args.id_steps, rng_seed=args.seed),
        sample_rate=model.sample_rate,
        cache=cache,
    )
    rows, summary = identify.evaluate_model(
        manifest,
        registry,
        model,
        mode=args.mode,
        id_net=id_net,
        cache=cache,
        profiles=profiles,
        segment_seconds=args.segment_seconds,
        temperature=args.temperature,
        rng_seed=args.seed,
    )
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    with report.open("w") as fh:
        fh.write("path,true_singer,predicted_singer,correct,oracle_predicted\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
        fh.write(
            f"# summary mode={args.mode} n={summary['n']} accuracy={summary['accuracy']:.4f}"
            + (f" oracle_accuracy={summary['oracle_accuracy']:.4f}" if "oracle_accuracy" in summary else "")
            + "\n"
        )
    print(
        f"{args.mode}: top-1 accuracy {summary['accuracy']:.4f} over {summary['n']} clips"
        + (f", centroid oracle {summary['oracle_accuracy']:.4f}" if "oracle_accuracy" in summary else "")
    )
    return 0


def cmd_augment(args) -> int:
    try:
        clip = audio.read_wav(args.input)
    except (FileNotFoundError, audio.AudioError) as exc:
        raise CommandError(DATA_ERROR, f"cannot read input: {exc}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    aset = augmod.augment(clip, singer_id=stem)
    for tag, variant in aset.variants().items():
        audio.write_wav(variant, out_dir / f"{stem}_{tag}.wav")
    print(out_dir)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "convert": cmd_convert,
    "evaluate": cmd_evaluate,
    "augment": cmd_augment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_threads()
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return USAGE_ERROR
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (dataset.ManifestError, training.ConfigError, synthdata.ProfileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return RUNTIME_ERROR
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
