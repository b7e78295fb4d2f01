"""Low-rank bilinear pairwise interaction terms and the blended aggregation."""
from __future__ import annotations

from itertools import combinations
from math import comb
from typing import Sequence

import torch
from torch import nn

from .backbone import attention_cost
from .core import aggregate, softmax


def pair_index(m: int) -> list[tuple[int, int]]:
    """All (i, j) with i < j, in lexicographic order."""
    return list(combinations(range(m), 2))


class InteractionHead(nn.Module):
    """Per-component left/right projections and one output map per component pair.

    ``left[i]`` projects h_i when i is the first member of a pair and
    ``right[j]`` projects h_j when j is the second. Projections start as
    small Gaussians and the output maps at zero, so a fresh head contributes
    nothing to the logits.
    """

    def __init__(self, n_components: int, d_model: int, rank: int, num_classes: int = 2,
                 generator: torch.Generator | None = None):
        super().__init__()
        if rank < 1:
            raise ValueError("interaction rank must be >= 1")
        if n_components < 2:
            raise ValueError("pairwise interactions need at least two components")
        self.n_components, self.rank = n_components, rank
        self.pairs = pair_index(n_components)
        self.left = nn.Parameter(torch.empty(n_components, rank, d_model))
        self.right = nn.Parameter(torch.empty(n_components, rank, d_model))
        self.w_out = nn.Parameter(torch.zeros(len(self.pairs), num_classes, rank))
        with torch.no_grad():
            self.left.normal_(0.0, 0.02, generator=generator)
            self.right.normal_(0.0, 0.02, generator=generator)
        self.register_buffer("_i", torch.tensor([i for i, _ in self.pairs]), persistent=False)
        self.register_buffer("_j", torch.tensor([j for _, j in self.pairs]), persistent=False)

    def pair_position(self, i: int, j: int) -> int:
        if not 0 <= i < j < self.n_components:
            raise ValueError(f"pair ({i}, {j}) must satisfy 0 <= i < j < {self.n_components}")
        return self.pairs.index((i, j))

    def pair_logit(self, h_i: torch.Tensor, h_j: torch.Tensor, i: int, j: int) -> torch.Tensor:
        p = self.pair_position(i, j)
        return pair_logit(h_i, h_j, self.left[i], self.right[j], self.w_out[p])

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        """Vectorized pair logits: hidden [..., M, d] -> [..., P, C]."""
        lt = torch.einsum("mrd,...md->...mr", self.left, hidden)
        rt = torch.einsum("mrd,...md->...mr", self.right, hidden)
        prod = lt[..., self._i, :] * rt[..., self._j, :]
        return torch.einsum("pcr,...pr->...pc", self.w_out, prod)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def expected_parameter_count(m: int, rank: int, d_model: int, num_classes: int = 2) -> int:
    return 2 * m * rank * d_model + comb(m, 2) * num_classes * rank


def pair_logit(h_i, h_j, left_i, right_j, w_out):
    """w_out @ ((left_i @ h_i) * (right_j @ h_j)); works on tensors or arrays."""
    return w_out @ ((left_i @ h_i) * (right_j @ h_j))


def calm2_aggregate(logits, pair_logits, bias, beta: float):
    """Blend additive and pairwise logits, add the bias, and softmax.

    ``logits`` is [..., M, C] and ``pair_logits`` [..., M(M-1)/2, C]; both
    numpy arrays and torch tensors are accepted.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    m = logits.shape[-2]
    if m < 2 and beta > 0:
        raise ValueError("interaction blending needs at least two components")
    if beta == 0:
        return aggregate(logits, bias)
    z = (1.0 - beta) * logits.sum(-2) / m + beta * pair_logits.sum(-2) / comb(m, 2) + bias
    return z, softmax(z)


def textpair_cost_estimate(lengths: Sequence[int]) -> dict[str, int]:
    """Dense attention cost of encoding every component plus every concatenated pair."""
    lengths = [int(n) for n in lengths]
    if any(n <= 0 for n in lengths):
        raise ValueError("lengths must be positive")
    pairs = sum((a + b) ** 2 for a, b in combinations(lengths, 2))
    singles = attention_cost(lengths, "independent") if lengths else 0
    return {"pairs": pairs, "singles": singles, "total": pairs + singles}
