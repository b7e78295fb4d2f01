"""Additive, component-wise interpretable text classifiers."""

__version__ = "0.1.0"

from .backbone import Backbone, BackboneConfig, MaskedInput, attention_cost, pool_eos  # noqa: E402
from .checkpoint import Checkpoint  # noqa: E402
from .core import LogitBreakdown, Prediction, aggregate, build_packed, cross_entropy, softmax  # noqa: E402
from .data import (Corpus, Document, EncodedDocument, Vocabulary, balance_subsample,  # noqa: E402
                   build_vocab, encode_document, load_corpus)
from .interactions import calm2_aggregate, pair_logit, textpair_cost_estimate  # noqa: E402
from .model import CalmModel, ModelConfig  # noqa: E402
from .training import TrainConfig, evaluate, fit, grid_run, train  # noqa: E402

__all__ = [
    "Backbone", "BackboneConfig", "MaskedInput", "attention_cost", "pool_eos", "Checkpoint",
    "LogitBreakdown", "Prediction", "aggregate", "build_packed", "cross_entropy", "softmax",
    "Corpus", "Document", "EncodedDocument", "Vocabulary", "balance_subsample", "build_vocab",
    "encode_document", "load_corpus", "calm2_aggregate", "pair_logit", "textpair_cost_estimate",
    "CalmModel", "ModelConfig", "TrainConfig", "evaluate", "fit", "grid_run", "train",
]
