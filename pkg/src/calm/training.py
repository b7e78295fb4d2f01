"""AdamW training with gradient accumulation, per-epoch AUC-PR model selection, and grid runs."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import torch

from . import metrics
from .backbone import BackboneConfig
from .checkpoint import Checkpoint, CheckpointError
from .core import cross_entropy
from .data import Corpus, EncodedDocument, Vocabulary, balance_subsample, build_vocab, encode_corpus
from .distill import TeacherCache, combined_loss, kd_loss, teacher_logits
from .model import CalmModel, ModelConfig

log = logging.getLogger(__name__)

TRAIN_VARIANTS = ("baseline", "calm", "calm2", "distill")

# learning-rate / adapter grid; "rank" doubles as the interaction rank, "alpha" is adapter scaling
DEFAULT_GRID = {
    "C1": {"lr": 1e-4, "rank": 8, "alpha": 16, "dropout": 0.05},
    "C2": {"lr": 1e-4, "rank": 8, "alpha": 32, "dropout": 0.05},
    "C3": {"lr": 1e-4, "rank": 16, "alpha": 16, "dropout": 0.05},
    "C4": {"lr": 1e-4, "rank": 16, "alpha": 32, "dropout": 0.05},
    "C5": {"lr": 2e-4, "rank": 8, "alpha": 16, "dropout": 0.05},
    "C6": {"lr": 2e-4, "rank": 16, "alpha": 32, "dropout": 0.05},
    "C7": {"lr": 5e-4, "rank": 8, "alpha": 32, "dropout": 0.05},
    "C8": {"lr": 5e-4, "rank": 16, "alpha": 16, "dropout": 0.05},
}


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "calm"
    lr: float = 2e-4
    # heads, bias and interaction factors; None means the backbone rate
    head_lr: float | None = None
    epochs: int = 5
    micro_batch: int = 1
    grad_accum: int = 16
    weight_decay: float = 0.01
    seed: int = 0
    dropout: float = 0.05
    # interaction rank and blend (calm2)
    rank: int = 8
    beta: float = 0.5
    # distillation blend and temperature
    kd_alpha: float = 0.4
    temperature: float = 2.0
    # adapter scaling, kept only so grid files parse; there is no adapter here
    alpha: float | None = None
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_position: int = 64
    causal: bool = True
    max_component_length: int = 16
    min_count: int = 1
    balance: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in TRAIN_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {TRAIN_VARIANTS}")
        if self.lr < 0 or (self.head_lr is not None and self.head_lr < 0):
            raise ValueError("learning rates must be non-negative")
        if min(self.epochs, self.micro_batch, self.grad_accum) < 1:
            raise ValueError("epochs, micro_batch and grad_accum must be positive")
        if not 0 <= self.kd_alpha <= 1 or not 0 <= self.beta <= 1:
            raise ValueError("kd_alpha and beta must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "R" in d:
            d["rank"] = d.pop("R")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        if d.get("alpha") is not None:
            log.info("config key 'alpha' (adapter scaling) has no effect on full-parameter training")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def model_variant(self) -> str:
        return "calm" if self.variant == "distill" else self.variant

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def model_config(self, schema: Sequence[str], vocab_size: int) -> ModelConfig:
        bb = BackboneConfig(vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff,
                            self.max_position, self.causal, self.dropout)
        return ModelConfig(bb, tuple(schema), self.model_variant, 2, self.rank, self.beta)


@dataclass
class RunHistory:
    train_loss: list[float] = field(default_factory=list)
    val_metrics: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    wall_time: float = field(default=0.0, compare=False)

    @property
    def val_auc_pr(self) -> list[float]:
        return [m["auc_pr"] for m in self.val_metrics]

    def to_dict(self) -> dict:
        return asdict(self)


def batch_loss(model: CalmModel, docs: Sequence[EncodedDocument], cfg: TrainConfig,
               teacher: TeacherCache | None = None) -> torch.Tensor:
    """Per-example training loss for the configured variant."""
    z = model.batch_logits(docs)
    y = torch.tensor([d.label for d in docs])
    ce = cross_entropy(torch.softmax(z, -1), y)
    if cfg.variant != "distill":
        return ce
    if teacher is None:
        raise ValueError("distillation needs cached teacher logits")
    kd = kd_loss(z, teacher_logits(teacher, docs, z.dtype), cfg.temperature)
    return combined_loss(ce, kd, cfg.kd_alpha)


def make_optimizer(model: CalmModel, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with the backbone at ``lr`` and everything downstream of h_i at ``head_lr``."""
    backbone = [p for n, p in model.named_parameters() if n.startswith("backbone.")]
    heads = [p for n, p in model.named_parameters() if not n.startswith("backbone.")]
    head_lr = cfg.lr if cfg.head_lr is None else cfg.head_lr
    return torch.optim.AdamW([{"params": backbone, "lr": cfg.lr}, {"params": heads, "lr": head_lr}],
                             lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=cfg.weight_decay)


def accumulate_step(model: CalmModel, opt: torch.optim.Optimizer, group: Sequence[EncodedDocument],
                    cfg: TrainConfig, teacher: TeacherCache | None = None) -> float:
    """One optimizer update over ``group``, split into micro-batches.

    Each micro-batch contributes sum(loss)/len(group), so the accumulated
    gradient equals that of the mean loss over the whole group.
    """
    opt.zero_grad()
    total = 0.0
    for k in range(0, len(group), cfg.micro_batch):
        mb = group[k:k + cfg.micro_batch]
        loss = batch_loss(model, mb, cfg, teacher).sum() / len(group)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite training loss ({float(loss.detach())}) in micro-batch at offset {k}")
        loss.backward()
        total += float(loss.detach())
    opt.step()
    return total


def validation_metrics(model: CalmModel, docs: Sequence[EncodedDocument],
                       threshold: float | None = None) -> dict:
    s = metrics.scored_set(model.score(docs), [d.label for d in docs], [d.id for d in docs])
    return metrics.report(s, threshold)


def train(cfg: TrainConfig, train_docs: Sequence[EncodedDocument], val_docs: Sequence[EncodedDocument],
          schema: Sequence[str], vocab_size: int, teacher: TeacherCache | None = None,
          ) -> tuple[CalmModel, RunHistory]:
    """Train one model; returns the best-validation-epoch model and its history."""
    if not train_docs or not val_docs:
        raise ValueError("training and validation sets must be non-empty")
    t0 = time.perf_counter()
    torch.manual_seed(cfg.seed)  # dropout stream
    model = CalmModel(cfg.model_config(schema, vocab_size), seed=cfg.seed).to(cfg.torch_dtype)
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    group = cfg.micro_batch * cfg.grad_accum
    hist = RunHistory()
    best_state, best_ap = None, -1.0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_docs))
        total = 0.0
        for g in range(0, len(order), group):
            idx = order[g:g + group]
            total += accumulate_step(model, opt, [train_docs[k] for k in idx], cfg, teacher) * len(idx)
        hist.train_loss.append(total / len(train_docs))
        vm = validation_metrics(model, val_docs)
        hist.val_metrics.append(vm)
        log.info("epoch %d  train_loss=%.4f  val_auc_pr=%.4f", epoch, hist.train_loss[-1], vm["auc_pr"])
        if vm["auc_pr"] > best_ap:
            best_ap, hist.best_epoch = vm["auc_pr"], epoch
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    hist.wall_time = time.perf_counter() - t0
    return model, hist


def fit(cfg: TrainConfig, train_corpus: Corpus, val_corpus: Corpus,
        teacher: TeacherCache | None = None, vocab: Vocabulary | None = None,
        ) -> tuple[Checkpoint, RunHistory]:
    """Optional class balancing, vocabulary, encoding, training and threshold selection."""
    if train_corpus.schema != val_corpus.schema:
        raise CheckpointError("train and validation corpora use different schemas")
    train_c = balance_subsample(train_corpus, cfg.seed) if cfg.balance else train_corpus
    vocab = vocab or build_vocab(train_c, cfg.min_count)
    enc_train = encode_corpus(train_c, vocab, cfg.max_component_length)
    enc_val = encode_corpus(val_corpus, vocab, cfg.max_component_length)
    model, hist = train(cfg, enc_train, enc_val, train_corpus.schema, len(vocab), teacher)
    threshold = hist.val_metrics[hist.best_epoch]["threshold"]
    return Checkpoint(model, vocab, cfg.max_component_length, threshold, cfg.to_dict()), hist


def evaluate(ckpt: Checkpoint, corpus: Corpus, threshold: float | None = None) -> dict:
    """Metrics JSON for a corpus; F1 uses the checkpoint's validation threshold by default."""
    if not len(corpus):
        raise ValueError("cannot evaluate an empty corpus")
    if corpus.schema != ckpt.schema:
        raise CheckpointError(
            f"corpus schema {list(corpus.schema)} does not match checkpoint schema {list(ckpt.schema)}")
    t = threshold if threshold is not None else ckpt.threshold
    return validation_metrics(ckpt.model, ckpt.encode(corpus), t)


@dataclass
class GridResult:
    best: Checkpoint
    best_history: RunHistory
    best_name: str
    leaderboard: list[dict]


def grid_run(grid: dict[str, dict] | Sequence[TrainConfig], base: TrainConfig, train_corpus: Corpus,
             val_corpus: Corpus, teacher: TeacherCache | None = None) -> GridResult:
    """Train every grid entry; keep the best validation AUC-PR (first wins ties)."""
    if isinstance(grid, dict):
        items = [(name, TrainConfig.from_dict({**base.to_dict(), **entry})) for name, entry in grid.items()]
    else:
        items = [(f"run{k}", c) for k, c in enumerate(grid)]
    if not items:
        raise ValueError("empty grid")
    best = None
    board = []
    for name, cfg in items:
        ckpt, hist = fit(cfg, train_corpus, val_corpus, teacher)
        vm = hist.val_metrics[hist.best_epoch]
        board.append({"name": name, "lr": cfg.lr, "rank": cfg.rank, "alpha": cfg.alpha,
                      "dropout": cfg.dropout, "best_epoch": hist.best_epoch, **{
                          f"val_{k}": v for k, v in vm.items()}})
        if best is None or vm["auc_pr"] > best[0]:
            best = (vm["auc_pr"], name, ckpt, hist)
    return GridResult(best[2], best[3], best[1], board)

