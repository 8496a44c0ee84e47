"""Run configuration: a TOML or JSON file mirroring the library dataclasses.

Flags override file values; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .alignment import LossConfig
from .emitter import EmitterConfig
from .errors import ConfigError
from .motion import MotionKind, MotionRanges
from .training import TrainConfig, WorldSpec


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    world: WorldSpec = field(default_factory=WorldSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"


def default_config_doc() -> dict:
    """Every configurable key with its default value."""
    cfg = RunConfig()
    world = dataclasses.asdict(cfg.world)
    motion = world.pop("motion")
    motion["kinds"] = [k.value for k in cfg.world.motion.kinds]
    for key in ("dx_max", "dy_max", "scale_end", "angle_end"):
        motion[key] = list(motion[key])
    emitter = world.pop("emitter")
    world.pop("seed")
    train = dataclasses.asdict(cfg.train)
    train.pop("loss_config")
    train.pop("seed")
    return {
        "seed": cfg.seed,
        "world": world,
        "motion": motion,
        "emitter": emitter,
        "loss": dataclasses.asdict(cfg.loss),
        "train": train,
        "paths": {"out_dir": cfg.out_dir},
    }


def _take(doc: dict, section: str, allowed: set[str]) -> dict:
    sub = doc.get(section, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"section {section!r} must be a table/object")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")
    return sub


def parse_config_doc(doc: dict) -> RunConfig:
    defaults = default_config_doc()
    top_unknown = set(doc) - set(defaults)
    if top_unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(top_unknown)}")
    seed = doc.get("seed", defaults["seed"])
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    m = {**defaults["motion"], **_take(doc, "motion", set(defaults["motion"]))}
    try:
        kinds = tuple(MotionKind(k) for k in m["kinds"])
    except ValueError as exc:
        raise ConfigError(f"bad motion kind: {exc}") from None
    motion = MotionRanges(
        dx_max=tuple(m["dx_max"]),
        dy_max=tuple(m["dy_max"]),
        scale_end=tuple(m["scale_end"]),
        angle_end=tuple(m["angle_end"]),
        duration=m["duration"],
        n_frames=m["n_frames"],
        kinds=kinds,
    )
    e = {**defaults["emitter"], **_take(doc, "emitter", set(defaults["emitter"]))}
    emitter = EmitterConfig(**e)
    w = {**defaults["world"], **_take(doc, "world", set(defaults["world"]))}
    world = WorldSpec(seed=seed, motion=motion, emitter=emitter, **w)
    lo = {**defaults["loss"], **_take(doc, "loss", set(defaults["loss"]))}
    loss = LossConfig(**lo)
    t = {**defaults["train"], **_take(doc, "train", set(defaults["train"]))}
    train = TrainConfig(seed=seed, loss_config=loss, **t)
    paths = {**defaults["paths"], **_take(doc, "paths", set(defaults["paths"]))}
    return RunConfig(seed=seed, world=world, loss=loss, train=train, out_dir=paths["out_dir"])


def load_config(path: str | Path | None) -> RunConfig:
    """Read a .toml or .json config file; None means all defaults."""
    if path is None:
        return parse_config_doc({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            doc = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path.name}: invalid TOML: {exc}") from exc
    else:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path.name}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path.name}: config root must be a table/object")
    return parse_config_doc(doc)
