"""Population influence, per-value risk curves, patient attributions and pair heatmaps.

Every number here is read off the model's own forward pass: the risk score
of component i is ``l_i[1] - l_i[0]`` from the same head that feeds the
prediction.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from . import plotting
from .checkpoint import Checkpoint
from .core import LogitBreakdown
from .data import Corpus, Document, encode_text

PERCENTILES = (0, 25, 50, 75, 100)


class ExplainError(ValueError):
    pass


def risk_score(breakdown: LogitBreakdown, i: int) -> float:
    if breakdown.component_logits is None:
        raise ExplainError("no per-component logits in this breakdown")
    ell = breakdown.component_logits[i]
    if ell.shape[-1] != 2:
        raise ExplainError("risk scores are defined for binary tasks only")
    return float(ell[1] - ell[0])


def value_key(text: str) -> str:
    return text.lower()


class ComponentScorer:
    """Memoized l_i(x_i). l_i depends only on (i, x_i), so a cache hit is bitwise identical."""

    def __init__(self, ckpt: Checkpoint):
        if ckpt.variant == "baseline":
            raise ExplainError("the concatenated baseline has no component contributions")
        if ckpt.model.cfg.num_classes != 2:
            raise ExplainError("risk scores are defined for binary tasks only")
        self.ckpt = ckpt
        self.model = ckpt.model.eval()
        self._h: dict[tuple[int, ...], torch.Tensor] = {}

    def hidden(self, text: str) -> torch.Tensor:
        ids = encode_text(text, self.ckpt.vocab, self.ckpt.max_component_length)
        if ids not in self._h:
            with torch.no_grad():
                self._h[ids] = self.model.encode_value(ids)
        return self._h[ids]

    def logits(self, i: int, text: str) -> np.ndarray:
        with torch.no_grad():
            return self.model.component_logit(i, self.hidden(text)).numpy()

    def risk(self, i: int, text: str) -> float:
        ell = self.logits(i, text)
        return float(ell[1] - ell[0])

    def pair_risk(self, i: int, j: int, text_i: str, text_j: str) -> float:
        inter = self.model.interactions
        if inter is None:
            raise ExplainError("pair terms need a CALM2 model")
        with torch.no_grad():
            ell = inter.pair_logit(self.hidden(text_i), self.hidden(text_j), i, j).numpy()
        return float(ell[1] - ell[0])


def _index(ckpt: Checkpoint, component: int | str) -> int:
    if isinstance(component, str):
        if component not in ckpt.schema:
            raise ExplainError(f"unknown component {component!r}")
        return ckpt.schema.index(component)
    if not 0 <= component < len(ckpt.schema):
        raise ExplainError(f"component index {component} out of range")
    return component


# influence ------------------------------------------------------------------

@dataclass(frozen=True)
class InfluenceTable:
    names: tuple[str, ...]
    values: tuple[float, ...]
    n_docs: int

    def ranked(self) -> list[tuple[str, float]]:
        """Descending influence; ties keep schema order."""
        order = sorted(range(len(self.names)), key=lambda k: (-self.values[k], k))
        return [(self.names[k], self.values[k]) for k in order]


def influence_scores(ckpt: Checkpoint, corpus: Corpus | Iterable[Document]) -> InfluenceTable:
    """Mean absolute risk score of every component over the corpus."""
    docs = list(corpus)
    if not docs:
        raise ExplainError("influence needs a non-empty corpus")
    scorer = ComponentScorer(ckpt)
    values = []
    for i in range(len(ckpt.schema)):
        mags = [abs(scorer.risk(i, d.texts[i])) for d in docs]
        values.append(math.fsum(mags) / len(docs))
    return InfluenceTable(ckpt.schema, tuple(values), len(docs))


# risk curves ----------------------------------------------------------------

@dataclass(frozen=True)
class RiskCurve:
    component: str
    points: tuple[tuple[str, int, float], ...]  # (value, frequency, risk score), by frequency
    percentile_points: tuple[tuple[int, str], ...]  # (percentile, value)

    def by_risk(self) -> list[tuple[str, int, float]]:
        return sorted(self.points, key=lambda p: (p[2], p[0]))


def feature_value_curve(ckpt: Checkpoint, corpus: Corpus | Iterable[Document], component: int | str,
                        k: int = 20) -> RiskCurve:
    """Risk score of the k most frequent values of one component, with percentile picks."""
    i = _index(ckpt, component)
    counts = Counter(value_key(d.texts[i]) for d in corpus)
    if not counts:
        raise ExplainError("no values observed for this component")
    top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    scorer = ComponentScorer(ckpt)
    points = tuple((v, n, scorer.risk(i, v)) for v, n in top)
    ordered = sorted(points, key=lambda p: (p[2], p[0]))
    picks = tuple((q, ordered[round(q / 100 * (len(ordered) - 1))][0]) for q in PERCENTILES)
    return RiskCurve(ckpt.schema[i], points, picks)


# patient attributions -------------------------------------------------------

@dataclass(frozen=True)
class PatientAttribution:
    doc_id: str
    top: tuple[tuple[str, float], ...]
    bottom: tuple[tuple[str, float], ...]
    pair_top: tuple[tuple[str, float], ...] = ()
    pair_bottom: tuple[tuple[str, float], ...] = ()
    breakdown: LogitBreakdown | None = field(default=None, compare=False)


def _top_bottom(names, scores, k):
    top_idx = sorted(range(len(scores)), key=lambda n: (-scores[n], n))[:k]
    rest = [n for n in range(len(scores)) if n not in set(top_idx)]
    bottom_idx = sorted(rest, key=lambda n: (scores[n], n))[:k]
    return (tuple((names[n], scores[n]) for n in top_idx),
            tuple((names[n], scores[n]) for n in bottom_idx))


def patient_attribution(ckpt: Checkpoint, doc: Document, k: int = 5) -> PatientAttribution:
    """Top-k and bottom-k components by risk score (k clipped to M // 2 when M < 2k)."""
    if ckpt.variant == "baseline":
        raise ExplainError("the concatenated baseline has no component contributions")
    enc = ckpt.encode([doc])[0]
    bd = ckpt.model.component_forward(enc)
    m = bd.n_components
    kk = min(k, m // 2) if m < 2 * k else k
    scores = [float(s) for s in bd.risk_scores()]
    top, bottom = _top_bottom(bd.names, scores, kk)
    pair_top = pair_bottom = ()
    if bd.pair_logits is not None:
        labels = [f"{bd.names[i]} x {bd.names[j]}" for i, j in bd.pairs]
        ps = [float(s) for s in bd.pair_risk_scores()]
        pk = min(k, len(ps) // 2) if len(ps) < 2 * k else k
        pair_top, pair_bottom = _top_bottom(labels, ps, pk)
    return PatientAttribution(doc.id, top, bottom, pair_top, pair_bottom, bd)


# pairwise heatmap -----------------------------------------------------------

@dataclass(frozen=True)
class PairHeatmap:
    comp_i: str
    comp_j: str
    values_i: tuple[str, ...]
    values_j: tuple[str, ...]
    risk: tuple[tuple[float, ...], ...]  # [len(values_i)][len(values_j)]
    counts: tuple[tuple[int, ...], ...]


def pair_heatmap(ckpt: Checkpoint, corpus: Corpus | Iterable[Document], i: int | str, j: int | str,
                 k: int = 10) -> PairHeatmap:
    """Pair risk l_ij[1] - l_ij[0] over the k most frequent values of each component."""
    i, j = _index(ckpt, i), _index(ckpt, j)
    if i == j:
        raise ExplainError("a pair needs two distinct components")
    if i > j:
        i, j = j, i
    docs = list(corpus)
    ci = Counter(value_key(d.texts[i]) for d in docs)
    cj = Counter(value_key(d.texts[j]) for d in docs)
    joint = Counter((value_key(d.texts[i]), value_key(d.texts[j])) for d in docs)
    vi = tuple(v for v, _ in sorted(ci.items(), key=lambda kv: (-kv[1], kv[0]))[:k])
    vj = tuple(v for v, _ in sorted(cj.items(), key=lambda kv: (-kv[1], kv[0]))[:k])
    scorer = ComponentScorer(ckpt)
    risk = tuple(tuple(scorer.pair_risk(i, j, a, b) for b in vj) for a in vi)
    counts = tuple(tuple(joint[(a, b)] for b in vj) for a in vi)
    return PairHeatmap(ckpt.schema[i], ckpt.schema[j], vi, vj, risk, counts)


# export ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


INFLUENCE_DISPLAY_ROWS = 10


def export(artifact, fmt: str, path: str | Path) -> Path:
    """Write an explanation artifact as CSV or SVG."""
    path = Path(path)
    if fmt not in ("csv", "svg"):
        raise ExplainError(f"unknown export format {fmt!r}")
    if not path.parent.is_dir():
        raise ExplainError(f"cannot write to {path}: directory does not exist")
    if isinstance(artifact, InfluenceTable):
        ranked = artifact.ranked()
        if fmt == "csv":
            return _write_rows(path, ["rank", "component", "influence", "n_docs"],
                               [[r, n, _fmt(v), artifact.n_docs] for r, (n, v) in enumerate(ranked, 1)])
        shown = ranked[:INFLUENCE_DISPLAY_ROWS]
        return plotting.hbar([n for n, _ in shown], [v for _, v in shown], path,
                             title=f"Influence (N={artifact.n_docs})", xlabel="mean |risk score|")
    if isinstance(artifact, RiskCurve):
        pct = {}
        for q, v in artifact.percentile_points:
            pct.setdefault(v, []).append(str(q))
        if fmt == "csv":
            return _write_rows(path, ["component", "value", "frequency", "risk_score", "percentiles"],
                               [[artifact.component, v, n, _fmt(r), ";".join(pct.get(v, []))]
                                for v, n, r in artifact.points])
        ordered = artifact.by_risk()
        hi = [k for k, (v, _, _) in enumerate(ordered) if v in pct]
        return plotting.point_curve([v for v, _, _ in ordered], [r for _, _, r in ordered], path,
                                    highlight=hi, title=artifact.component)
    if isinstance(artifact, PatientAttribution):
        sides = [("top", artifact.top), ("bottom", artifact.bottom),
                 ("pair_top", artifact.pair_top), ("pair_bottom", artifact.pair_bottom)]
        if fmt == "csv":
            rows = [[artifact.doc_id, side, r, name, _fmt(s)]
                    for side, items in sides for r, (name, s) in enumerate(items, 1)]
            return _write_rows(path, ["doc_id", "side", "rank", "component", "risk_score"], rows)
        items = list(artifact.top) + list(artifact.bottom)[::-1]
        return plotting.hbar([n for n, _ in items], [s for _, s in items], path, signed=True,
                             title=f"Patient {artifact.doc_id}", xlabel="risk score")
    if isinstance(artifact, PairHeatmap):
        if fmt == "csv":
            rows = [[artifact.comp_i, a, artifact.comp_j, b, artifact.counts[r][c], _fmt(artifact.risk[r][c])]
                    for r, a in enumerate(artifact.values_i) for c, b in enumerate(artifact.values_j)]
            return _write_rows(path, ["comp_i", "value_i", "comp_j", "value_j", "count", "risk_score"], rows)
        return plotting.heatmap(artifact.values_i, artifact.values_j, artifact.risk, path,
                                title=f"{artifact.comp_i} x {artifact.comp_j}",
                                xlabel=artifact.comp_j, ylabel=artifact.comp_i)
    raise ExplainError(f"cannot export {type(artifact).__name__}")
