"""Synthetic corpora in the component-per-document schema, with known generating rules."""
from __future__ import annotations

import random
from dataclasses import dataclass

from .data import Corpus, Document

NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")


@dataclass
class Splits:
    train: Corpus
    validation: Corpus
    test: Corpus
    truth: dict  # generating values per document id


def _split(docs: list[Document], schema, truth, fractions=(0.7, 0.15)) -> Splits:
    n_train = int(round(len(docs) * fractions[0]))
    n_val = int(round(len(docs) * fractions[1]))
    return Splits(Corpus("train", docs[:n_train], schema),
                  Corpus("validation", docs[n_train:n_train + n_val], schema),
                  Corpus("test", docs[n_train + n_val:], schema), truth)


def value_text(k: int) -> str:
    return f"level {NUMBER_WORDS[k]}"


def additive_corpus(n_docs: int = 2000, n_components: int = 6, n_values: int = 10,
                    seed: int = 0) -> Splits:
    """Each component states an integer in words; label is 1 when the sum exceeds its mean."""
    rng = random.Random(seed)
    schema = tuple(f"f{i}" for i in range(n_components))
    cut = n_components * (n_values - 1) / 2
    docs, truth = [], {}
    for k in range(n_docs):
        vals = [rng.randrange(n_values) for _ in schema]
        doc_id = f"add{k:05d}"
        truth[doc_id] = vals
        comps = tuple((name, value_text(v)) for name, v in zip(schema, vals))
        docs.append(Document(doc_id, comps, int(sum(vals) > cut)))
    return _split(docs, schema, truth)


def xor_corpus(n_docs: int = 2000, n_components: int = 4, seed: int = 0) -> Splits:
    """Label is the parity of two yes/no components; the rest are uninformative noise."""
    if n_components < 2:
        raise ValueError("need at least two components")
    rng = random.Random(seed)
    schema = tuple(f"q{i}" for i in range(n_components))
    docs, truth = [], {}
    for k in range(n_docs):
        a, b = rng.randrange(2), rng.randrange(2)
        noise = [rng.randrange(10) for _ in range(n_components - 2)]
        doc_id = f"xor{k:05d}"
        truth[doc_id] = [a, b, *noise]
        texts = ["yes" if a else "no", "yes" if b else "no", *(value_text(v) for v in noise)]
        docs.append(Document(doc_id, tuple(zip(schema, texts)), a ^ b))
    return _split(docs, schema, truth)
