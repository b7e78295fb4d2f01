"""Checkpoint container: one ``.npz`` holding named parameter arrays plus a JSON header.

Layout (format version 1):

* ``__meta__`` -- uint8 array with UTF-8 JSON: format tag, version, model
  config, training config, vocabulary tokens, max component length and the
  validation-selected F1 threshold.
* one array per ``state_dict`` entry, row-major, little-endian.

Zip entries carry the fixed 1980 timestamp numpy writes, so identical
parameters give identical bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .data import Document, EncodedDocument, Vocabulary, encode_corpus
from .model import CalmModel, ModelConfig

FORMAT = "calm-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: CalmModel
    vocab: Vocabulary
    max_component_length: int
    threshold: float | None = None
    train_config: dict = field(default_factory=dict)

    @property
    def schema(self) -> tuple[str, ...]:
        return self.model.cfg.schema

    @property
    def variant(self) -> str:
        return self.model.variant

    def encode(self, docs: Iterable[Document]) -> list[EncodedDocument]:
        docs = list(docs)
        for d in docs:
            if d.names != self.schema:
                raise CheckpointError(
                    f"document {d.id!r} schema {list(d.names)} does not match checkpoint schema "
                    f"{list(self.schema)}")
        return encode_corpus(docs, self.vocab, self.max_component_length)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        meta = {
            "format": FORMAT,
            "version": VERSION,
            "model_config": self.model.cfg.to_dict(),
            "dtype": str(self.model.dtype).replace("torch.", ""),
            "train_config": self.train_config,
            "vocab": self.vocab.tokens,
            "max_component_length": self.max_component_length,
            "threshold": self.threshold,
        }
        arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
        for name, t in self.model.state_dict().items():
            a = t.detach().cpu().numpy()
            arrays[name] = np.ascontiguousarray(a.astype(a.dtype.newbyteorder("<")))
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
            if meta.get("format") != FORMAT or meta.get("version") != VERSION:
                raise CheckpointError(f"{path}: not a version-{VERSION} {FORMAT} file")
            state = {k: torch.from_numpy(z[k].copy()) for k in z.files if k != "__meta__"}
        model = CalmModel(ModelConfig.from_dict(meta["model_config"]))
        model.to(getattr(torch, meta["dtype"]))
        model.load_state_dict(state)
        model.eval()
        return cls(model, Vocabulary(meta["vocab"]), meta["max_component_length"],
                   meta["threshold"], meta["train_config"])
