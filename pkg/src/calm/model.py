"""Concatenated baseline, CALM and CALM2 classifiers sharing one backbone codepath."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig, BackboneError, MaskedInput, pool_eos
from .core import LogitBreakdown, Prediction, aggregate, build_packed, predicted_class
from .data import EncodedDocument, Vocabulary
from .interactions import InteractionHead, calm2_aggregate

VARIANTS = ("baseline", "calm", "calm2")


class PackedOverflowError(BackboneError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig
    schema: tuple[str, ...]
    variant: str = "calm"
    num_classes: int = 2
    rank: int = 8
    beta: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.schema:
            raise ValueError("model needs a non-empty component schema")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        object.__setattr__(self, "schema", tuple(self.schema))

    @property
    def n_components(self) -> int:
        return len(self.schema)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = list(self.schema)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneConfig(**d["backbone"])
        d["schema"] = tuple(d["schema"])
        return cls(**d)


class CalmModel(nn.Module):
    """Backbone plus heads.

    The baseline keeps a single head (index 0) applied to the final token
    of the concatenated document; CALM and CALM2 keep one head per schema
    position. Heads and the global bias start at zero.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, eos_id: int = Vocabulary.eos_id):
        super().__init__()
        self.cfg = cfg
        self.eos_id = eos_id
        gen = torch.Generator().manual_seed(seed)
        self.backbone = Backbone(cfg.backbone, gen)
        n_heads = 1 if cfg.variant == "baseline" else cfg.n_components
        d, c = cfg.backbone.d_model, cfg.num_classes
        self.head_weight = nn.Parameter(torch.zeros(n_heads, c, d))
        self.head_bias = nn.Parameter(torch.zeros(n_heads, c))
        self.bias = nn.Parameter(torch.zeros(c))
        self.interactions = (InteractionHead(cfg.n_components, d, cfg.rank, c, gen)
                             if cfg.variant == "calm2" else None)

    @property
    def variant(self) -> str:
        return self.cfg.variant

    @property
    def dtype(self) -> torch.dtype:
        return self.bias.dtype

    # single-document paths ------------------------------------------------

    def component_vectors(self, doc: EncodedDocument, path: str = "independent") -> list[torch.Tensor]:
        """h_i for every component, via independent encodes or one packed stream."""
        self._check_schema(doc)
        if path == "independent":
            return [self.backbone.encode_segment(seg) for seg in doc.components]
        if path == "packed":
            if doc.total_length > self.cfg.backbone.max_position:
                raise PackedOverflowError(
                    f"packed stream of {doc.total_length} tokens exceeds capacity "
                    f"{self.cfg.backbone.max_position}; use the independent path instead")
            inp = build_packed(doc, self.cfg.backbone.causal_within_segment)
            return pool_eos(self.backbone.encode(inp), inp, self.eos_id)
        raise ValueError(f"unknown path {path!r}")

    def component_logit(self, i: int, h: torch.Tensor) -> torch.Tensor:
        return self.head_weight[i] @ h + self.head_bias[i]

    def encode_value(self, token_ids: Sequence[int]) -> torch.Tensor:
        return self.backbone.encode_segment(token_ids)

    def breakdown_from_vectors(self, doc_id: str, hs: Sequence[torch.Tensor]) -> LogitBreakdown:
        ell = torch.stack([self.component_logit(i, h) for i, h in enumerate(hs)])
        pairs, pair_ell, beta = (), None, 0.0
        if self.interactions is not None:
            pairs = tuple(self.interactions.pairs)
            pair_ell = torch.stack([self.interactions.pair_logit(hs[i], hs[j], i, j) for i, j in pairs])
            beta = self.cfg.beta
            z, p = calm2_aggregate(ell, pair_ell, self.bias, beta)
        else:
            z, p = aggregate(ell, self.bias)
        return LogitBreakdown(doc_id, self.cfg.schema, _np(ell), _np(self.bias), _np(z), _np(p),
                              pairs, None if pair_ell is None else _np(pair_ell), beta)

    @torch.no_grad()
    def component_forward(self, doc: EncodedDocument) -> LogitBreakdown:
        if self.variant == "baseline":
            raise ValueError("the concatenated baseline has no per-component breakdown")
        return self.breakdown_from_vectors(doc.id, self.component_vectors(doc, "independent"))

    @torch.no_grad()
    def packed_forward(self, doc: EncodedDocument) -> LogitBreakdown:
        if self.variant == "baseline":
            raise ValueError("the concatenated baseline has no per-component breakdown")
        return self.breakdown_from_vectors(doc.id, self.component_vectors(doc, "packed"))

    def concat_input(self, doc: EncodedDocument) -> MaskedInput:
        tokens = [t for seg in doc.components for t in seg]
        if len(tokens) > self.cfg.backbone.max_position:
            raise BackboneError(
                f"concatenated document of {len(tokens)} tokens exceeds max_position "
                f"{self.cfg.backbone.max_position}")
        return MaskedInput.from_segments([tokens], self.cfg.backbone.causal_within_segment)

    @torch.no_grad()
    def baseline_forward(self, doc: EncodedDocument) -> Prediction:
        if self.variant != "baseline":
            raise ValueError("baseline_forward needs a baseline model")
        self._check_schema(doc)
        h = self.backbone.encode(self.concat_input(doc))[-1]
        z, p = aggregate(self.component_logit(0, h)[None], self.bias)
        bd = LogitBreakdown(doc.id, self.cfg.schema, None, _np(self.bias), _np(z), _np(p))
        return Prediction(predicted_class(bd.z), float(bd.p[1]), bd)

    def predict(self, doc: EncodedDocument, path: str = "independent") -> Prediction:
        if self.variant == "baseline":
            return self.baseline_forward(doc)
        bd = self.packed_forward(doc) if path == "packed" else self.component_forward(doc)
        return Prediction(predicted_class(bd.z), float(bd.p[1]), bd)

    # batched path used for training and scoring ----------------------------

    def batch_logits(self, docs: Sequence[EncodedDocument]) -> torch.Tensor:
        """Aggregate logits z [B, C] for a batch, differentiable.

        Components are right-padded into one encoder batch; padding keys are
        masked so each row computes the same function as an independent encode.
        """
        if not docs:
            raise ValueError("empty batch")
        if self.variant == "baseline":
            seqs = [[t for seg in d.components for t in seg] for d in docs]
            if max(len(s) for s in seqs) > self.cfg.backbone.max_position:
                raise BackboneError("concatenated document exceeds max_position")
            h = self.backbone.encode_padded(seqs)
            return h @ self.head_weight[0].T + self.head_bias[0] + self.bias
        for d in docs:
            self._check_schema(d)
        m = self.cfg.n_components
        h = self.backbone.encode_padded([seg for d in docs for seg in d.components])
        h = h.view(len(docs), m, -1)
        ell = torch.einsum("mcd,bmd->bmc", self.head_weight, h) + self.head_bias
        if self.interactions is not None:
            return calm2_aggregate(ell, self.interactions(h), self.bias, self.cfg.beta)[0]
        return aggregate(ell, self.bias)[0]

    @torch.no_grad()
    def score(self, docs: Sequence[EncodedDocument], batch_size: int = 64) -> np.ndarray:
        """Class-1 probabilities in eval mode."""
        was = self.training
        self.eval()
        try:
            out = [torch.softmax(self.batch_logits(docs[k:k + batch_size]), -1)[:, 1]
                   for k in range(0, len(docs), batch_size)]
        finally:
            self.train(was)
        return torch.cat(out).double().numpy() if out else np.zeros(0)

    def _check_schema(self, doc: EncodedDocument):
        if len(doc.components) != self.cfg.n_components:
            raise ValueError(
                f"document {doc.id!r} has {len(doc.components)} components, model expects "
                f"{self.cfg.n_components}")


def _np(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().numpy().copy()
    a.setflags(write=False)
    return a
