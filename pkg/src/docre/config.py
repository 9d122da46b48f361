"""Run configuration: one JSON file that fully determines a pipeline run.

Defaults follow the published training recipe wherever it gives a value:
gamma 0.5, warmup over the first 6% of steps, dropout 0.1, gradient norm
clipped at 1.0, learning rate 1e-5 for 2 epochs of distant pretraining and
1e-6 for 10 epochs of fine-tuning. Batch size (4 documents) and the
teacher's epoch count are not published; they are plain defaults here.

``synthetic_preset`` returns a labeled toy configuration with a small
encoder and larger learning rates/epoch counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from ._io import atomic_write_text
from .distill import AdaptationPlan
from .losses import LossConfig
from .model import ModelConfig
from .training import StageConfig


@dataclass
class Paths:
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    distant: str | None = None
    schema: str | None = None
    output_dir: str = "runs/default"


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    teacher: StageConfig = field(default_factory=lambda: StageConfig(epochs=30, lr=1e-5))
    adaptation: AdaptationPlan = field(default_factory=AdaptationPlan)
    seed: int = 0
    preset: str = "default"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "RunConfig":
        obj = dict(obj)
        unknown = set(obj) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        # partial stage sections are merged over the recipe defaults
        defaults = cls()
        adaptation = dict(obj.get("adaptation", {}))
        for stage in ("pretrain", "finetune"):
            if stage in adaptation:
                adaptation[stage] = _build(StageConfig, adaptation[stage], f"adaptation.{stage}",
                                           getattr(defaults.adaptation, stage))
        return cls(
            paths=_build(Paths, obj.get("paths", {}), "paths"),
            model=_build(ModelConfig, obj.get("model", {}), "model"),
            loss=_build(LossConfig, obj.get("loss", {}), "loss"),
            teacher=_build(StageConfig, obj.get("teacher", {}), "teacher", defaults.teacher),
            adaptation=_build(AdaptationPlan, adaptation, "adaptation"),
            seed=int(obj.get("seed", 0)),
            preset=str(obj.get("preset", "default")),
        )

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _build(kind, values: Mapping[str, Any], where: str, base=None):
    if isinstance(values, kind):
        return values
    known = {f.name for f in fields(kind)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    if base is not None:
        return replace(base, **values)
    return kind(**values)


def synthetic_preset(output_dir: str = "runs/synthetic", seed: int = 0) -> RunConfig:
    """Toy preset (d=32 encoder, raised learning rates and epochs) for the
    synthetic corpora written by ``docre prepare --synthetic``."""
    out = Path(output_dir)
    return RunConfig(
        paths=Paths(train=str(out / "train.json"), dev=str(out / "dev.json"),
                    test=str(out / "test.json"), distant=str(out / "distant.json"),
                    output_dir=str(out)),
        model=ModelConfig(),
        loss=LossConfig(),
        teacher=StageConfig(epochs=60, lr=2e-3, batch_size=8),
        adaptation=AdaptationPlan(pretrain=StageConfig(epochs=15, lr=2e-3, batch_size=8),
                                  finetune=StageConfig(epochs=10, lr=5e-4, batch_size=8)),
        seed=seed,
        preset="synthetic (toy scale, not the published recipe)",
    )
