"""Strict JSON run configuration mirroring the three config dataclasses.

Document layout:

    {
      "dataset": { ... DatasetSpec fields ... },
      "train":   { ... TrainConfig fields, "weights": {"expr_weight", "style_weight"} ... },
      "pairing": { ... PairingConfig fields ... }
    }

Sections may be omitted (defaults apply); unknown keys anywhere are
rejected before any compute happens.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .losses import LossWeights
from .pairing import PairingConfig
from .pipeline import TrainConfig
from .synthdata import DatasetSpec

__all__ = ["RunConfig", "ConfigError", "parse_config", "load_config", "config_to_dict"]


class ConfigError(ValueError):
    """The run configuration is malformed."""


@dataclass
class RunConfig:
    dataset: DatasetSpec
    train: TrainConfig
    pairing: PairingConfig


def _build(cls, section: dict, name: str, **extra):
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]!r}")
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid section {name!r}: {err}") from err


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be an object")
    unknown = sorted(set(doc) - {"dataset", "train", "pairing"})
    if unknown:
        raise ConfigError(f"unknown top-level key {unknown[0]!r}")
    dataset = _build(DatasetSpec, doc.get("dataset", {}), "dataset")

    train_section = dict(doc.get("train", {}))
    weights_section = train_section.pop("weights", None)
    extra = {}
    if weights_section is not None:
        extra["weights"] = _build(LossWeights, weights_section, "train.weights")
    train = _build(TrainConfig, train_section, "train", **extra)

    pairing_section = dict(doc.get("pairing", {}))
    if "strategy" in pairing_section and "pairing" in train_section:
        if pairing_section["strategy"] != train_section["pairing"]:
            raise ConfigError("train.pairing and pairing.strategy disagree")
    if "strategy" not in pairing_section:
        pairing_section["strategy"] = train.pairing
    pairing = _build(PairingConfig, pairing_section, "pairing")
    if train.pairing != pairing.strategy:
        train = dataclasses.replace(train, pairing=pairing.strategy)
    return RunConfig(dataset=dataset, train=train, pairing=pairing)


def load_config(path=None, seed: int | None = None) -> RunConfig:
    """Parse a config file (or defaults when path is None), optionally forcing a seed."""
    doc = json.loads(Path(path).read_text()) if path is not None else {}
    cfg = parse_config(doc)
    if seed is not None:
        cfg = RunConfig(
            dataset=dataclasses.replace(cfg.dataset, seed=seed),
            train=dataclasses.replace(cfg.train, seed=seed),
            pairing=cfg.pairing,
        )
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "dataset": dataclasses.asdict(cfg.dataset),
        "train": dataclasses.asdict(cfg.train),
        "pairing": dataclasses.asdict(cfg.pairing),
    }
