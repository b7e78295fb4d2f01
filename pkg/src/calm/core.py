"""Additive aggregation, losses, logit breakdowns and the packed-stream builder."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .backbone import MaskedInput
from .data import EncodedDocument

PROB_FLOOR = 1e-12
BIAS_ROW = "__bias__"


def softmax(z):
    if isinstance(z, torch.Tensor):
        return torch.softmax(z, dim=-1)
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def aggregate(logits, bias):
    """Mean of per-component logits plus bias, and its softmax.

    ``logits`` is [..., M, C] (array or tensor, or a list of C-vectors).
    """
    if isinstance(logits, (list, tuple)):
        if not logits:
            raise ValueError("aggregate needs at least one component logit")
        logits = torch.stack(list(logits)) if isinstance(logits[0], torch.Tensor) else np.asarray(logits, float)
    m = logits.shape[-2]
    if m < 1:
        raise ValueError("aggregate needs at least one component logit")
    z = logits.sum(-2) / m + bias
    return z, softmax(z)


def cross_entropy(p, y):
    """-log p_y with p_y clamped at 1e-12. Batched tensors give the per-example vector."""
    if isinstance(p, torch.Tensor):
        y = torch.as_tensor(y, dtype=torch.long, device=p.device)
        if p.dim() == 1:
            return -torch.log(p[y].clamp_min(PROB_FLOOR))
        return -torch.log(p.gather(-1, y[..., None]).squeeze(-1).clamp_min(PROB_FLOOR))
    return float(-np.log(max(float(np.asarray(p)[int(y)]), PROB_FLOOR)))


def predicted_class(z) -> int:
    # np.argmax returns the first maximum, so ties go to the lowest index
    return int(np.argmax(np.asarray(z)))


@dataclass(frozen=True)
class LogitBreakdown:
    doc_id: str
    names: tuple[str, ...]
    component_logits: np.ndarray | None  # [M, C]; None for the concatenated baseline
    bias: np.ndarray
    z: np.ndarray
    p: np.ndarray
    pairs: tuple[tuple[int, int], ...] = ()
    pair_logits: np.ndarray | None = None  # [P, C]
    beta: float = 0.0

    @property
    def n_components(self) -> int:
        return len(self.names)

    def risk_scores(self) -> np.ndarray:
        return self.component_logits[:, 1] - self.component_logits[:, 0]

    def pair_risk_scores(self) -> np.ndarray:
        return self.pair_logits[:, 1] - self.pair_logits[:, 0]

    def recompute_z(self) -> np.ndarray:
        from .interactions import calm2_aggregate

        if self.component_logits is None:
            raise ValueError("baseline predictions carry no component breakdown")
        ell = self.component_logits.astype(np.float64)
        if self.pair_logits is not None:
            return calm2_aggregate(ell, self.pair_logits.astype(np.float64), self.bias, self.beta)[0]
        return aggregate(ell, self.bias.astype(np.float64))[0]


@dataclass(frozen=True)
class Prediction:
    label: int
    score: float
    breakdown: LogitBreakdown


def build_packed(doc: EncodedDocument, causal: bool = True) -> MaskedInput:
    """Concatenate a document's components into one stream with per-segment positions."""
    return MaskedInput.from_segments(doc.components, causal)


def write_breakdowns(breakdowns: Iterable[LogitBreakdown], path: str | Path) -> Path:
    """Per-component logits as CSV, one bias row per document."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["doc_id", "component_name", "logit_class0", "logit_class1", "risk_score"])
        for bd in breakdowns:
            for name, ell in zip(bd.names, bd.component_logits):
                w.writerow([bd.doc_id, name, _fmt(ell[0]), _fmt(ell[1]), _fmt(ell[1] - ell[0])])
            w.writerow([bd.doc_id, BIAS_ROW, _fmt(bd.bias[0]), _fmt(bd.bias[1]),
                        _fmt(bd.bias[1] - bd.bias[0])])
    return path


def write_pair_breakdowns(breakdowns: Iterable[LogitBreakdown], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["doc_id", "comp_i", "comp_j", "logit_class0", "logit_class1", "risk_score"])
        for bd in breakdowns:
            if bd.pair_logits is None:
                continue
            for (i, j), ell in zip(bd.pairs, bd.pair_logits):
                w.writerow([bd.doc_id, bd.names[i], bd.names[j], _fmt(ell[0]), _fmt(ell[1]),
                            _fmt(ell[1] - ell[0])])
    return path


def _fmt(x) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(x))


def max_relative_deviation(a: Sequence | np.ndarray | torch.Tensor, b) -> float:
    """max|a - b| scaled by max|b| (absolute when b is identically zero)."""
    a = a.detach().double() if isinstance(a, torch.Tensor) else torch.tensor(np.array(a, dtype=np.float64))
    b = b.detach().double() if isinstance(b, torch.Tensor) else torch.tensor(np.array(b, dtype=np.float64))
    scale = float(b.abs().max()) if b.numel() else 0.0
    diff = float((a - b).abs().max()) if b.numel() else 0.0
    return diff / scale if scale > 0 else diff
