"""Small pre-LN transformer encoder driven by an explicit attention predicate and per-token positions."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
from torch import nn
import torch.nn.functional as F

COST_MODES = ("independent", "padded", "packed_dense", "packed_blocksparse")


class BackboneError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_position: int = 64
    causal_within_segment: bool = True
    dropout: float = 0.05

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise BackboneError("d_model must be divisible by n_heads")
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff, self.max_position) < 1:
            raise BackboneError("backbone sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MaskedInput:
    """One token stream split into contiguous segments.

    ``bounds`` holds ``(start, stop)`` for each segment in stream order.
    Positions restart at 0 inside every segment; ``allow(u, v)`` permits
    attention only within a segment, and only to ``v <= u`` when causal.
    """

    tokens: torch.Tensor
    positions: torch.Tensor
    bounds: list[tuple[int, int]]
    causal: bool = True

    @classmethod
    def from_segments(cls, segments: Sequence[Sequence[int]], causal: bool = True) -> "MaskedInput":
        if not segments or any(len(s) == 0 for s in segments):
            raise BackboneError("every segment needs at least one token")
        tokens, positions, bounds, start = [], [], [], 0
        for seg in segments:
            tokens.extend(seg)
            positions.extend(range(len(seg)))
            bounds.append((start, start + len(seg)))
            start += len(seg)
        return cls(torch.tensor(tokens, dtype=torch.long), torch.tensor(positions, dtype=torch.long),
                   bounds, causal)

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def segment_ids(self) -> torch.Tensor:
        ids = torch.empty(len(self), dtype=torch.long)
        for k, (a, b) in enumerate(self.bounds):
            ids[a:b] = k
        return ids

    def segment_sets(self) -> list[list[int]]:
        return [list(range(a, b)) for a, b in self.bounds]

    def allow(self) -> torch.Tensor:
        """Boolean [L, L] predicate; entry (u, v) says query u may attend key v."""
        seg = self.segment_ids
        mask = seg[:, None] == seg[None, :]
        if self.causal:
            mask &= torch.ones(len(self), len(self), dtype=torch.bool).tril()
        return mask


class _Layer(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff_in = nn.Linear(cfg.d_model, cfg.d_ff)
        self.ff_out = nn.Linear(cfg.d_ff, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, allow, keep_attn=False):
        B, L, D = x.shape
        hd = D // self.n_heads
        q, k, v = self.qkv(self.ln1(x)).split(D, dim=-1)
        q, k, v = (t.view(B, L, self.n_heads, hd).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        allow = allow[:, None]
        scores = scores.masked_fill(~allow, float("-inf"))
        # rows with no admissible key output zeros instead of NaN
        scores = scores.masked_fill(~allow.any(-1, keepdim=True), 0.0)
        attn = torch.softmax(scores, dim=-1).masked_fill(~allow, 0.0)
        y = (attn @ v).transpose(1, 2).reshape(B, L, D)
        x = x + self.drop(self.proj(y))
        x = x + self.drop(self.ff_out(F.gelu(self.ff_in(self.ln2(x)))))
        return x, (attn if keep_attn else None)


class Backbone(nn.Module):
    """Shared encoder. Learned absolute position embeddings are indexed by the supplied positions."""

    def __init__(self, cfg: BackboneConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_position, cfg.d_model)
        self.layers = nn.ModuleList(_Layer(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.reset_parameters(generator)

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator | None = None):
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".ln" in name or name.startswith("ln_"):
                p.fill_(1.0)
            else:
                p.normal_(0.0, 0.02, generator=generator)

    def forward(self, tokens, positions, allow, keep_attn: bool = False):
        """Batched encode. ``tokens``/``positions`` are [B, L]; ``allow`` is [B, L, L]."""
        if positions.numel() and int(positions.max()) >= self.cfg.max_position:
            raise BackboneError(
                f"position {int(positions.max())} exceeds max_position {self.cfg.max_position}")
        if tokens.numel() and (int(tokens.max()) >= self.cfg.vocab_size or int(tokens.min()) < 0):
            raise BackboneError("token id outside vocabulary range")
        x = self.drop(self.tok_emb(tokens) + self.pos_emb(positions))
        attns = []
        for layer in self.layers:
            x, a = layer(x, allow, keep_attn)
            attns.append(a)
        x = self.ln_f(x)
        return (x, attns) if keep_attn else x

    def encode(self, inp: MaskedInput, keep_attn: bool = False):
        """Encode one stream; returns hidden states [L, d_model] (and per-layer attention)."""
        out = self(inp.tokens[None], inp.positions[None], inp.allow()[None], keep_attn)
        if keep_attn:
            h, attns = out
            return h[0], [a[0] for a in attns]
        return out[0]

    def encode_segment(self, token_ids: Sequence[int]) -> torch.Tensor:
        """Independent encode of a single segment; returns the final-position vector."""
        inp = MaskedInput.from_segments([token_ids], self.cfg.causal_within_segment)
        return self.encode(inp)[-1]

    def encode_padded(self, segments: Sequence[Sequence[int]], pad_id: int = 0) -> torch.Tensor:
        """Encode many segments as a right-padded batch; returns last-real-token vectors [N, d]."""
        n, lmax = len(segments), max(len(s) for s in segments)
        tokens = torch.full((n, lmax), pad_id, dtype=torch.long)
        lengths = torch.tensor([len(s) for s in segments])
        for r, s in enumerate(segments):
            tokens[r, : len(s)] = torch.as_tensor(s)
        positions = torch.arange(lmax).expand(n, lmax)
        real = torch.arange(lmax)[None, :] < lengths[:, None]
        allow = real[:, None, :] & real[:, :, None]
        if self.cfg.causal_within_segment:
            allow = allow & torch.ones(lmax, lmax, dtype=torch.bool).tril()
        h = self(tokens, positions, allow)
        return h[torch.arange(n), lengths - 1]


def pool_eos(hidden: torch.Tensor, inp: MaskedInput, eos_id: int) -> list[torch.Tensor]:
    """Hidden vector at the terminal EOS of every segment, in stream order."""
    out = []
    for k, (a, b) in enumerate(inp.bounds):
        if int(inp.tokens[b - 1]) != eos_id:
            raise BackboneError(f"segment {k} does not end with EOS")
        out.append(hidden[b - 1])
    return out


def gradients(loss: torch.Tensor, module: nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss`` for every named parameter; zeros off the loss path."""
    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {n: torch.zeros_like(p) if g is None else g for (n, p), g in zip(named, grads)}


def attention_cost(lengths: Sequence[int], mode: str) -> int:
    """Quadratic self-attention cost in token-pair units for one document."""
    if not len(lengths):
        raise BackboneError("attention_cost needs at least one length")
    if any(int(n) <= 0 for n in lengths):
        raise BackboneError("lengths must be positive")
    lengths = [int(n) for n in lengths]
    if mode in ("independent", "packed_blocksparse"):
        return sum(n * n for n in lengths)
    if mode == "padded":
        return len(lengths) * max(lengths) ** 2
    if mode == "packed_dense":
        return sum(lengths) ** 2
    raise BackboneError(f"unknown cost mode {mode!r}; expected one of {COST_MODES}")
