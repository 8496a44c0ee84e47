"""Command-line surface: synthesize, train, evaluate, ablate, analyze.

Machine-readable results go to files only; progress lines go to stderr.
Exit codes: 0 success, 2 input/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import alignment, io as dio, representation, training
from .config import default_config_doc, load_config
from .emitter import EmitterConfig, emit
from .errors import ConfigError, EvalignError, FormatError, IntegrityError, TrainingDiverged
from .image import read_image, write_png, write_ppm
from .motion import ALL_KINDS, MotionKind, MotionRanges, render_sequence, sample_motion
from .training import _subseed  # deterministic per-item seed derivation

IMAGE_SUFFIXES = {".pgm", ".png"}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evalign", description=__doc__)
    parser.add_argument("--print-config", action="store_true",
                        help="print every config default as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="synthesize event files from still images")
    p.add_argument("--input", required=True, help="directory of .pgm/.png images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--motion", default="random",
                   choices=["translation", "scaling", "rotation", "random"])
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--duration-ms", type=float, default=50.0)
    p.add_argument("--theta", type=float, default=0.2, help="contrast threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", help="train an encoder on the synthetic world")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--loss", default=None, choices=list(training.LOSS_MODES))
    p.add_argument("--learning-rate", type=float, default=None)

    p = sub.add_parser("eval", help="evaluate zero-shot accuracy of a saved encoder")
    p.add_argument("--config", default=None)
    p.add_argument("--encoder", required=True)
    p.add_argument("--option", default="raw", choices=list(training.EVAL_OPTIONS))
    p.add_argument("--out", required=True, help="output CSV file")

    p = sub.add_parser("ablate", help="run the six-row component ablation")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated train seeds")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("analyze", help="similarity density CSV and event-frame rendering")
    p.add_argument("--events", default=None, help="EventFileV1 to render")
    p.add_argument("--embeddings", default=None, help="EmbeddingFileV1 for the density")
    p.add_argument("--density-bins", type=int, default=51)
    p.add_argument("--render", default=None, help="output image path (.png or .ppm)")
    p.add_argument("--out", default=None, help="density CSV output path")
    return parser


def cmd_synth(args) -> int:
    input_dir = Path(args.input)
    if not input_dir.is_dir():
        raise ConfigError(f"input directory not found: {input_dir}")
    out_dir = Path(args.out)
    (out_dir / "events").mkdir(parents=True, exist_ok=True)
    if args.frames < 2:
        raise ConfigError("--frames must be at least 2")
    if args.duration_ms <= 0:
        raise ConfigError("--duration-ms must be positive")
    kinds = ALL_KINDS if args.motion == "random" else (MotionKind(args.motion),)
    ranges = MotionRanges(duration=args.duration_ms / 1000.0, n_frames=args.frames, kinds=kinds)

    paths = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    failures: list[tuple[Path, str]] = []
    images = []
    for path in paths:
        try:
            images.append((path, read_image(path)))
        except (EvalignError, OSError) as exc:
            failures.append((path, str(exc)))

    def synth_one(item):
        index, (path, img) = item
        seed_i = _subseed(args.seed, index)
        spec = sample_motion(seed_i, ranges)
        seq = render_sequence(img, spec)
        cfg = EmitterConfig(theta_pos=args.theta, theta_neg=args.theta, seed=seed_i)
        return emit(seq, cfg)

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        streams = list(pool.map(synth_one, enumerate(images)))

    entries = []
    for index, ((path, _), stream) in enumerate(zip(images, streams)):
        rel = f"events/{index:05d}_{path.stem}.evz1"
        dio.write_events(stream, out_dir / rel)
        entries.append(
            dio.ManifestEntry(
                event_file=rel,
                source_image=path.name,
                class_id=index,
                class_name=path.stem,
                image_embedding_ref=None,
            )
        )
        _log(f"{path.name}: {len(stream)} events")
    manifest = dio.Manifest(
        dataset=input_dir.name,
        seed=args.seed,
        motion=training.motion_ranges_doc(ranges),
        emitter={"theta_pos": args.theta, "theta_neg": args.theta},
        entries=entries,
    )
    dio.write_manifest(manifest, out_dir / "manifest.json")
    if failures:
        for path, err in failures:
            _log(f"FAILED {path.name}: {err}")
        return 2
    return 0


def _world_and_config(args):
    cfg = load_config(args.config)
    world = training.generate_world(cfg.world)
    return cfg, world


def cmd_train(args) -> int:
    cfg, world = _world_and_config(args)
    train_cfg = cfg.train
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.loss is not None:
        overrides["loss"] = args.loss
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    result = training.train(world, train_cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    training.save_encoder(result.encoder, out_dir / "encoder.enc1")
    (out_dir / "loss_curve.csv").write_text(training.loss_curve_csv(result.loss_curve))
    meta = {
        "seed": train_cfg.seed,
        "loss": train_cfg.loss,
        "epochs": train_cfg.epochs,
        "final_loss": result.loss_curve[-1] if len(result.loss_curve) else None,
    }
    (out_dir / "run.json").write_text(training.run_metadata_json(meta))
    _log(f"trained {train_cfg.loss} for {train_cfg.epochs} epochs -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg, world = _world_and_config(args)
    encoder = training.load_encoder(args.encoder)
    accuracy = training.evaluate_zero_shot(encoder, world, args.option, cfg.loss)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(f"option,accuracy\n{args.option},{accuracy:.6f}\n")
    _log(f"{args.option}: accuracy {accuracy:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg, world = _world_and_config(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad --seeds list: {args.seeds!r}") from None
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    result = training.run_ablation(world, seeds, cfg.train)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text(result.to_csv())
    meta = {"world_seed": cfg.world.seed, "train_seeds": seeds, "loss": dataclasses.asdict(cfg.loss)}
    (out_dir / "run.json").write_text(training.run_metadata_json(meta))
    _log(f"ablation over seeds {seeds} -> {out_dir / 'ablation.csv'}")
    return 0


def cmd_analyze(args) -> int:
    if args.events is None and args.embeddings is None:
        raise ConfigError("analyze needs --events and/or --embeddings")
    if args.events is not None:
        if args.render is None:
            raise ConfigError("--events requires --render PATH")
        stream = dio.read_events(args.events)
        frame = representation.to_event_frame(stream, (0.0, stream.duration))
        rgb = representation.render_rgb(frame)
        render = Path(args.render)
        render.parent.mkdir(parents=True, exist_ok=True)
        if render.suffix.lower() == ".ppm":
            write_ppm(rgb, render)
        else:
            write_png(rgb, render)
        _log(f"rendered {len(stream)} events -> {render}")
    if args.embeddings is not None:
        if args.out is None:
            raise ConfigError("--embeddings requires --out CSV")
        rows = dio.read_embeddings(args.embeddings)
        centers, density = alignment.similarity_density(rows, args.density_bins)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(alignment.density_csv(centers, density))
        _log(f"density over {rows.shape[0]} embeddings -> {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(default_config_doc(), indent=2, sort_keys=True))
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        _log(f"runtime failure: {exc}")
        return 3
    except (ConfigError, FormatError, IntegrityError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
