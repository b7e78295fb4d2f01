import random

import pytest
import torch
from hypothesis import given, settings, strategies as st

from calm.backbone import Backbone, BackboneError, MaskedInput, attention_cost, gradients, pool_eos
from conftest import TINY_VOCAB, tiny_backbone


def _backbone(seed=0, dtype=torch.float64, **kw):
    return Backbone(tiny_backbone(**kw), torch.Generator().manual_seed(seed)).to(dtype).eval()


def _segments(rng, m, lmax=8):
    return [[1, *(rng.randrange(4, TINY_VOCAB) for _ in range(rng.randint(0, lmax - 2))), 2] for _ in range(m)]


def test_from_segments_positions_and_bounds():
    inp = MaskedInput.from_segments([[1, 2], [1, 5, 2]])
    assert len(inp) == 5
    assert inp.positions.tolist() == [0, 1, 0, 1, 2]
    assert inp.bounds == [(0, 2), (2, 5)]
    assert inp.segment_sets() == [[0, 1], [2, 3, 4]]


@pytest.mark.parametrize("causal", [True, False])
def test_allow_blocks(causal):
    inp = MaskedInput.from_segments([[1, 2], [1, 5, 2]], causal)
    allow = inp.allow()
    seg = inp.segment_ids
    for u in range(5):
        for v in range(5):
            want = bool(seg[u] == seg[v]) and (v <= u or not causal)
            assert bool(allow[u, v]) == want


@pytest.mark.parametrize("causal", [True, False])
def test_mask_faithfulness_on_attention_matrices(causal):
    rng = random.Random(1)
    bb = _backbone(causal_within_segment=causal, n_layers=2)
    for _ in range(5):
        inp = MaskedInput.from_segments(_segments(rng, rng.randint(1, 5)), causal)
        _, attns = bb.encode(inp, keep_attn=True)
        blocked = ~inp.allow()
        for a in attns:  # [heads, L, L]
            assert torch.all(a[:, blocked] == 0)
            assert torch.allclose(a.sum(-1), torch.ones_like(a.sum(-1)))


def test_single_segment_matches_plain_sequence():
    bb = _backbone()
    seq = [1, 7, 9, 2]
    inp = MaskedInput.from_segments([seq], causal=False)
    plain = bb(torch.tensor([seq]), torch.arange(4)[None], torch.ones(1, 4, 4, dtype=torch.bool))[0]
    assert torch.equal(bb.encode(inp), plain)


def test_identical_segments_pool_identically():
    bb = _backbone()
    inp = MaskedInput.from_segments([[1, 6, 7, 2], [1, 6, 7, 2]])
    h = pool_eos(bb.encode(inp), inp, 2)
    assert torch.allclose(h[0], h[1], rtol=0, atol=1e-12)


@pytest.mark.parametrize("causal", [True, False])
def test_segment_permutation_matches_independent_encodes(causal):
    rng = random.Random(2)
    bb = _backbone(causal_within_segment=causal)
    for _ in range(10):
        segs = _segments(rng, rng.randint(2, 5))
        perm = list(range(len(segs)))
        rng.shuffle(perm)
        inp = MaskedInput.from_segments([segs[k] for k in perm], causal)
        pooled = pool_eos(bb.encode(inp), inp, 2)
        for slot, k in enumerate(perm):
            ref = bb.encode_segment(segs[k])
            assert (pooled[slot] - ref).abs().max() / ref.abs().max() <= 1e-10


def test_pool_eos_counts_and_errors():
    bb = _backbone()
    inp = MaskedInput.from_segments([[1, 2], [1, 4, 2], [1, 2]])
    h = bb.encode(inp)
    out = pool_eos(h, inp, 2)
    assert len(out) == 3 and torch.equal(out[1], h[4])
    single = MaskedInput.from_segments([[1, 5, 2]])
    assert torch.equal(pool_eos(bb.encode(single), single, 2)[0], bb.encode(single)[-1])
    bad = MaskedInput.from_segments([[1, 5]])
    with pytest.raises(BackboneError, match="EOS"):
        pool_eos(bb.encode(bad), bad, 2)


def test_position_overflow():
    bb = _backbone(max_position=8)
    with pytest.raises(BackboneError, match="max_position"):
        bb.encode(MaskedInput.from_segments([[1] * 9 + [2]]))


def test_encode_is_deterministic():
    bb = _backbone(dtype=torch.float32)
    inp = MaskedInput.from_segments([[1, 5, 6, 2], [1, 9, 2]])
    assert torch.equal(bb.encode(inp), bb.encode(inp))


def test_padded_batch_matches_independent():
    rng = random.Random(3)
    bb = _backbone()
    segs = _segments(rng, 6)
    batch = bb.encode_padded(segs)
    for k, s in enumerate(segs):
        ref = bb.encode_segment(s)
        assert (batch[k] - ref).abs().max() / ref.abs().max() <= 1e-12


def test_fully_masked_row_outputs_zeros():
    bb = _backbone(n_layers=1)
    allow = torch.zeros(1, 3, 3, dtype=torch.bool)
    out = bb(torch.tensor([[1, 5, 2]]), torch.arange(3)[None], allow, keep_attn=True)
    assert torch.isfinite(out[0]).all()
    assert torch.all(out[1][0] == 0)


def test_gradient_of_embedding_row_sum():
    bb = _backbone()
    loss = bb.tok_emb.weight[5].sum()
    g = gradients(loss, bb)
    expect = torch.zeros_like(bb.tok_emb.weight)
    expect[5] = 1
    assert torch.equal(g["tok_emb.weight"], expect)
    # parameters off the loss path get exact zeros
    assert all(torch.count_nonzero(v) == 0 for k, v in g.items() if k != "tok_emb.weight")


def test_backbone_gradients_match_finite_differences():
    bb = _backbone(seed=4, d_model=8, d_ff=8, n_heads=2, vocab_size=12, max_position=8)
    assert sum(p.numel() for p in bb.parameters()) <= 5000
    inp = MaskedInput.from_segments([[1, 5, 6, 2], [1, 7, 2]])
    w = torch.randn(8, generator=torch.Generator().manual_seed(0), dtype=torch.float64)

    def f():
        return (pool_eos(bb.encode(inp), inp, 2)[1] @ w).tanh()

    g = gradients(f(), bb)
    h, worst = 1e-5, 0.0
    with torch.no_grad():
        for name, p in bb.named_parameters():
            flat, gf = p.view(-1), g[name].view(-1)
            for k in range(0, flat.numel(), max(1, flat.numel() // 6)):
                old = flat[k].item()
                flat[k] = old + h
                up = f().item()
                flat[k] = old - h
                dn = f().item()
                flat[k] = old
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(fd - gf[k].item()) / max(1e-6, abs(fd), abs(gf[k].item())))
    assert worst < 1e-4


def test_attention_cost_example():
    assert attention_cost([3, 4], "independent") == 25
    assert attention_cost([3, 4], "padded") == 32
    assert attention_cost([3, 4], "packed_dense") == 49
    assert attention_cost([3, 4], "packed_blocksparse") == 25


def test_attention_cost_single_component():
    assert {attention_cost([10], m) for m in ("independent", "padded", "packed_dense",
                                              "packed_blocksparse")} == {100}


def test_attention_cost_errors():
    with pytest.raises(BackboneError):
        attention_cost([], "independent")
    with pytest.raises(BackboneError):
        attention_cost([3], "sparse")


@settings(max_examples=100)
@given(st.integers(1, 50), st.integers(1, 12))
def test_equal_lengths_ratios(length, m):
    lengths = [length] * m
    ind = attention_cost(lengths, "independent")
    assert attention_cost(lengths, "padded") == ind
    assert attention_cost(lengths, "packed_dense") == m * ind


@settings(max_examples=200)
@given(st.lists(st.integers(1, 500), min_size=1, max_size=20))
def test_sum_of_squares_bound(lengths):
    ind = attention_cost(lengths, "independent")
    dense = attention_cost(lengths, "packed_dense")
    assert ind <= dense
    assert (ind == dense) == (len(lengths) == 1)
    assert attention_cost(lengths, "packed_blocksparse") == ind
