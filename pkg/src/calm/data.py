"""Corpus ingestion, tokenization, balanced subsampling and per-component encoding."""
from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, START, EOS, UNK = "[PAD]", "[START]", "[EOS]", "[UNK]"
RESERVED = (PAD, START, EOS, UNK)
SPLITS = ("train", "validation", "test")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class DataError(ValueError):
    """Raised for malformed corpus files or records that violate the schema."""


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation (punctuation kept as tokens)."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    components: tuple[tuple[str, str], ...]
    label: int

    def __post_init__(self):
        if not self.components:
            raise DataError(f"document {self.id!r} has no components")
        names = [n for n, _ in self.components]
        if len(set(names)) != len(names):
            raise DataError(f"document {self.id!r} has duplicate component names")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.components)

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(t for _, t in self.components)

    def text(self, name: str) -> str:
        return dict(self.components)[name]

    def replace_component(self, name: str, text: str) -> "Document":
        if name not in self.names:
            raise KeyError(name)
        comps = tuple((n, text if n == name else t) for n, t in self.components)
        return Document(self.id, comps, self.label)


@dataclass
class Corpus:
    split: str
    documents: list[Document]
    schema: tuple[str, ...]

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        self.schema = tuple(self.schema)
        for doc in self.documents:
            if doc.names != self.schema:
                raise DataError(f"document {doc.id!r} does not follow the corpus schema")

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def labels(self) -> list[int]:
        return [d.label for d in self.documents]

    def by_id(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.id == doc_id:
                return d
        raise KeyError(doc_id)


def make_document(doc_id: str, components: dict[str, str], label: int, schema: Sequence[str]) -> Document:
    unknown = [n for n in components if n not in schema]
    if unknown:
        raise DataError(f"document {doc_id!r}: unknown component(s) {unknown}")
    comps = tuple((n, components.get(n, "") or "") for n in schema)
    return Document(str(doc_id), comps, int(label))


def read_schema(spec: str | Path) -> tuple[str, ...]:
    """Schema from a comma-separated string or a file with one name per line."""
    p = Path(spec)
    if p.is_file():
        names = [ln.strip() for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]
    else:
        names = [n.strip() for n in str(spec).split(",") if n.strip()]
    if not names:
        raise DataError("empty schema")
    if len(set(names)) != len(names):
        raise DataError("schema has duplicate component names")
    return tuple(names)


def load_corpus(
    path: str | Path,
    schema: Sequence[str] | None = None,
    split: str = "train",
    num_classes: int = 2,
) -> Corpus:
    """Read a line-delimited JSON corpus.

    Each line is ``{"id": str, "label": int, "components": {name: text}}``.
    Components absent from a record are filled with the empty string. When
    ``schema`` is None it is taken from the first-seen order of component
    names across the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or not {"id", "label", "components"} <= rec.keys():
                raise DataError(f"{path}:{lineno}: record needs id, label and components")
            comps = rec["components"]
            if not isinstance(comps, dict) or not all(isinstance(v, str) for v in comps.values()):
                raise DataError(f"{path}:{lineno}: components must map names to strings")
            label = rec["label"]
            if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < num_classes:
                raise DataError(f"{path}:{lineno}: label {label!r} outside 0..{num_classes - 1}")
            records.append((lineno, rec))

    if schema is None:
        seen: dict[str, None] = {}
        for _, rec in records:
            seen.update(dict.fromkeys(rec["components"]))
        schema = tuple(seen)
    schema = tuple(schema)
    docs = []
    for lineno, rec in records:
        try:
            docs.append(make_document(rec["id"], rec["components"], rec["label"], schema))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return Corpus(split, docs, schema)


def write_corpus(corpus: Corpus | Iterable[Document], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in corpus:
            rec = {"id": doc.id, "label": doc.label, "components": dict(doc.components)}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def balance_subsample(corpus: Corpus, seed: int) -> Corpus:
    """Keep every positive and min(#neg, #pos) negatives sampled uniformly, shuffled by ``seed``."""
    pos = [d for d in corpus.documents if d.label == 1]
    neg = [d for d in corpus.documents if d.label != 1]
    if not pos or not neg:
        raise DataError("cannot balance: corpus needs at least one positive and one negative")
    rng = random.Random(seed)
    n = min(len(pos), len(neg))
    if len(neg) > n:
        neg = rng.sample(neg, n)
    docs = pos + neg
    rng.shuffle(docs)
    return Corpus(corpus.split, docs, corpus.schema)


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise DataError("vocabulary must start with the reserved tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")

    pad_id = 0
    start_id = 1
    eos_id = 2
    unk_id = 3

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{t}\t{i}\n" for i, t in enumerate(self.tokens)), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                tok, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise DataError(f"{path}: vocabulary ids are not dense from 0")
        return cls([t for _, t in pairs])


def build_vocab(corpus: Corpus | Iterable[Document], min_count: int = 1) -> Vocabulary:
    """Tokens seen at least ``min_count`` times, ordered by frequency then lexicographically."""
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        for text in doc.texts:
            counts.update(tokenize(text))
    if n_docs == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept)


@dataclass(frozen=True)
class EncodedDocument:
    id: str
    components: tuple[tuple[int, ...], ...]
    label: int

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.components)

    @property
    def total_length(self) -> int:
        return sum(self.lengths)


def encode_text(text: str, vocab: Vocabulary, max_component_length: int) -> tuple[int, ...]:
    if max_component_length < 2:
        raise ValueError("max_component_length must be at least 2")
    ids = vocab.encode(tokenize(text))[: max_component_length - 2]
    return (vocab.start_id, *ids, vocab.eos_id)


def encode_document(doc: Document, vocab: Vocabulary, max_component_length: int) -> EncodedDocument:
    comps = tuple(encode_text(t, vocab, max_component_length) for t in doc.texts)
    return EncodedDocument(doc.id, comps, doc.label)


def encode_corpus(corpus: Corpus | Iterable[Document], vocab: Vocabulary,
                  max_component_length: int) -> list[EncodedDocument]:
    return [encode_document(d, vocab, max_component_length) for d in corpus]


def component_lengths(doc: Document, max_component_length: int) -> list[int]:
    """Token lengths (framing included) without needing a vocabulary."""
    return [min(len(tokenize(t)), max_component_length - 2) + 2 for t in doc.texts]
