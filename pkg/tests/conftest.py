import random

import pytest
import torch

from calm.backbone import BackboneConfig
from calm.data import EncodedDocument
from calm.model import CalmModel, ModelConfig
from calm.synthetic import additive_corpus
from calm.training import TrainConfig, fit

TINY_VOCAB = 24


def tiny_backbone(**kw) -> BackboneConfig:
    base = dict(vocab_size=TINY_VOCAB, d_model=16, n_layers=1, n_heads=2, d_ff=24, max_position=64,
                causal_within_segment=True, dropout=0.0)
    base.update(kw)
    return BackboneConfig(**base)


def tiny_model(m=3, variant="calm", seed=0, dtype=torch.float32, rank=4, beta=0.5, **bb) -> CalmModel:
    schema = tuple(f"c{i}" for i in range(m))
    cfg = ModelConfig(tiny_backbone(**bb), schema, variant, 2, rank, beta)
    model = CalmModel(cfg, seed=seed).to(dtype)
    randomize_heads(model, seed)
    return model.eval()


@torch.no_grad()
def randomize_heads(model: CalmModel, seed: int):
    # heads start at zero; give them values so tests see non-trivial logits
    g = torch.Generator().manual_seed(seed + 1000)
    for name, p in model.named_parameters():
        if not name.startswith("backbone."):
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype) * 0.5)


def random_doc(rng: random.Random, m: int, lmin=2, lmax=12, doc_id="d", vocab=TINY_VOCAB) -> EncodedDocument:
    comps = []
    for _ in range(m):
        n = rng.randint(lmin, lmax)
        comps.append((1, *(rng.randrange(4, vocab) for _ in range(n - 2)), 2))
    return EncodedDocument(doc_id, tuple(comps), rng.randrange(2))


FAST = TrainConfig(lr=2e-4, head_lr=2e-3, micro_batch=16, grad_accum=1, epochs=5, balance=False)


@pytest.fixture(scope="session")
def additive_splits():
    return additive_corpus(n_docs=400, seed=3)


@pytest.fixture(scope="session")
def additive_ckpt(additive_splits):
    ckpt, _ = fit(FAST, additive_splits.train, additive_splits.validation)
    return ckpt


@pytest.fixture(scope="session")
def calm2_ckpt(additive_splits):
    from dataclasses import replace

    ckpt, _ = fit(replace(FAST, variant="calm2", epochs=2), additive_splits.train, additive_splits.validation)
    return ckpt


# one PASS/FAIL line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[", 1)[1].split("]", 1)[0])):
            terminalreporter.write_line(line)
