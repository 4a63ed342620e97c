"""Run configuration: one JSON file covering every module knob.

Unknown keys are rejected, and every command echoes its effective
configuration into the output directory so a run is reconstructible
from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


def _strict_fields(cls, data: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return data


@dataclass(frozen=True)
class DataConfig:
    manifest: str = ""
    midi_catalog: str = ""
    image_catalog: str = ""
    dictionary: str | None = None
    va_predictor: str | None = None
    split: str = "train"

    @classmethod
    def from_dict(cls, data: dict) -> "DataConfig":
        return cls(**_strict_fields(cls, data, "data"))


@dataclass(frozen=True)
class MetricConfig:
    steps_per_beat: int = 4
    steps_per_measure: int = 16
    polyphony_denominator: str = "sounding"

    def __post_init__(self):
        if self.polyphony_denominator not in ("sounding", "total"):
            raise ConfigError(
                f"polyphony_denominator must be 'sounding' or 'total', "
                f"got {self.polyphony_denominator!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "MetricConfig":
        return cls(**_strict_fields(cls, data, "metrics"))


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {"model", "train", "data", "metrics"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        try:
            return cls(model=ModelConfig.from_dict(data.get("model", {})),
                       train=TrainConfig.from_dict(data.get("train", {})),
                       data=DataConfig.from_dict(data.get("data", {})),
                       metrics=MetricConfig.from_dict(data.get("metrics", {})))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        out = {"model": asdict(self.model), "train": asdict(self.train),
               "data": asdict(self.data), "metrics": asdict(self.metrics)}
        weights = out["train"].pop("loss_weights")
        out["train"]["lambda_va"] = weights["lambda_va"]
        out["train"]["lambda_cc"] = weights["lambda_cc"]
        return out

    def echo(self, out_dir: str | Path, name: str = "run_config.json") -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path
