"""Versioned checkpoint container.

A checkpoint is an ``.npz`` archive: every model parameter/buffer as a
named array, plus a ``__meta__`` entry holding UTF-8 JSON with the format
version, stage tag, step count, run config, model config, vocabulary and
relation schema. Arrays are stored in their native dtype, so a round trip
restores parameters bit for bit.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ._io import atomic_write_bytes
from .corpus import RelationSchema
from .encoder import Vocab
from .model import DocREModel, ModelConfig
from .training import RelationExtractor

FORMAT_VERSION = 1
STAGES = ("teacher", "pretrained_student", "finetuned")
_META = "__meta__"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    extractor: RelationExtractor
    stage: str
    step: int = 0
    run_config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.extractor.num_classes


def save_checkpoint(path: str | Path, extractor: RelationExtractor, stage: str, step: int = 0,
                    run_config: dict | None = None, extra: dict | None = None) -> Path:
    if stage not in STAGES:
        raise CheckpointError(f"unknown stage tag {stage!r}; expected one of {STAGES}")
    meta = {
        "version": FORMAT_VERSION,
        "stage": stage,
        "step": int(step),
        "model_config": extractor.model.config.to_json(),
        "vocab": extractor.vocab.to_list(),
        "schema": extractor.schema.to_json(),
        "run_config": run_config or {},
        "extra": extra or {},
    }
    arrays = {name: t.detach().cpu().numpy() for name, t in extractor.model.state_dict().items()}
    if _META in arrays:
        raise CheckpointError(f"parameter name {_META!r} is reserved")
    arrays[_META] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    atomic_write_bytes(path, buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if _META not in archive.files:
            raise CheckpointError(f"{path}: not a checkpoint (no {_META} entry)")
        meta = json.loads(archive[_META].tobytes().decode("utf-8"))
        if meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        state = {name: torch.from_numpy(archive[name].copy())
                 for name in archive.files if name != _META}
    config = ModelConfig(**meta["model_config"])
    vocab = Vocab.from_list(meta["vocab"])
    schema = RelationSchema.from_json(meta["schema"])
    with torch.random.fork_rng():  # construction draws an init we immediately overwrite
        model = DocREModel(config, len(vocab), schema.num_classes)
    model.load_state_dict(state)
    return Checkpoint(RelationExtractor(model, vocab, schema), meta["stage"], meta["step"],
                      meta.get("run_config", {}), meta.get("extra", {}))
