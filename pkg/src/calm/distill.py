"""Knowledge distillation from a frozen concatenated teacher into an additive student."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch

from .core import PROB_FLOOR
from .data import EncodedDocument


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 2.0
    alpha: float = 0.4
    teacher: str | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.tensor(np.asarray(x, dtype=np.float64))


def soften(z, temperature: float) -> torch.Tensor:
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return torch.softmax(_as_tensor(z) / temperature, dim=-1)


def kd_loss(z_student, z_teacher, temperature: float) -> torch.Tensor:
    """T^2 * KL(softmax(z_T/T) || softmax(z_S/T)); batched inputs give per-example losses."""
    q_t = soften(z_teacher, temperature)
    q_s = soften(z_student, temperature)
    kl = (q_t * (q_t.clamp_min(PROB_FLOOR).log() - q_s.clamp_min(PROB_FLOOR).log())).sum(-1)
    return temperature ** 2 * kl


def combined_loss(ce, kd, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return (1.0 - alpha) * ce + alpha * kd


class TeacherCache(dict):
    """doc id -> teacher logits (numpy C-vector)."""

    def logits_for(self, docs: Iterable[EncodedDocument]) -> np.ndarray:
        rows = []
        for d in docs:
            if d.id not in self:
                raise KeyError(f"no cached teacher logits for document {d.id!r}")
            rows.append(self[d.id])
        return np.stack(rows)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            c = len(next(iter(self.values()))) if self else 2
            w.writerow(["doc_id"] + [f"z{k}" for k in range(c)])
            for doc_id, z in self.items():
                w.writerow([doc_id] + [repr(float(v)) for v in z])
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TeacherCache":
        cache = cls()
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = csv.reader(fh)
            next(rows)
            for row in rows:
                cache[row[0]] = np.array([float(v) for v in row[1:]])
        return cache


@torch.no_grad()
def cache_teacher(teacher, docs: Iterable[EncodedDocument], batch_size: int = 64) -> TeacherCache:
    """Score every document once with the frozen teacher in eval mode."""
    docs = list(docs)
    was = teacher.training
    teacher.eval()
    cache = TeacherCache()
    try:
        for k in range(0, len(docs), batch_size):
            chunk = docs[k:k + batch_size]
            z = teacher.batch_logits(chunk).double().numpy()
            for d, row in zip(chunk, z):
                cache[d.id] = row.copy()
    finally:
        teacher.train(was)
    return cache


def teacher_logits(cache: Mapping[str, np.ndarray], docs, dtype=torch.float32) -> torch.Tensor:
    if isinstance(cache, TeacherCache):
        arr = cache.logits_for(docs)
    else:
        arr = np.stack([cache[d.id] for d in docs])
    return torch.tensor(arr, dtype=dtype)
