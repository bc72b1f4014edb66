import itertools

import numpy as np
import pytest

from kbgen.data import BOS, EOS, PAD
from kbgen.errors import ContractError
from kbgen.generator import Decoder, conditioning_memory
from kbgen.gradcheck import grad_check_params
from kbgen.losses import loss_tt
from kbgen.tensor import Tensor, log_softmax

VOCAB = 9


@pytest.fixture
def decoder():
    return Decoder(np.random.default_rng(0), VOCAB, d_model=8, heads=2, layers=2, d_ff=16, max_len=12)


@pytest.fixture
def memory():
    return Tensor(np.random.default_rng(1).normal(size=(2, 5, 8)))


def _targets():
    return np.array([[BOS, 4, 5, 6, 7, EOS], [BOS, 8, 4, EOS, PAD, PAD]])


def test_logits_shape(decoder, memory):
    assert decoder.teacher_forcing_logits(_targets(), memory).shape == (2, 5, VOCAB)


def test_causality_bitwise(decoder, memory):
    base = _targets()
    ref = decoder.teacher_forcing_logits(base, memory).data
    for t in range(1, base.shape[1] - 1):
        changed = base.copy()
        changed[0, t + 1] = 4 if changed[0, t + 1] != 4 else 5
        out = decoder.teacher_forcing_logits(changed, memory).data
        np.testing.assert_array_equal(out[0, :t + 1], ref[0, :t + 1])


def test_jacobian_wrt_future_embeddings_is_zero(decoder, memory):
    ids = _targets()[:1, :-1]
    for t in range(ids.shape[1] - 1):
        decoder.tok_emb.grad = None
        decoder(ids, memory[:1])[0, t].sum().backward()
        future = set(ids[0, t + 1:].tolist()) - set(ids[0, :t + 1].tolist())
        for tok in future:
            assert not decoder.tok_emb.grad[tok].any()


def test_targets_must_start_with_bos(decoder, memory):
    with pytest.raises(ContractError):
        decoder.teacher_forcing_logits(np.array([[4, 5, EOS]]), memory[:1])
    with pytest.raises(ContractError):
        decoder.teacher_forcing_logits(np.array([[BOS]]), memory[:1])
    with pytest.raises(ContractError):
        decoder(np.zeros((1, 0), dtype=int), memory[:1])


@pytest.mark.parametrize("seed", range(2))
def test_ce_gradient_matches_finite_differences(seed):
    dec = Decoder(np.random.default_rng(seed), VOCAB, d_model=8, heads=2, layers=1, d_ff=16)
    mem = Tensor(np.random.default_rng(seed + 1).normal(size=(2, 5, 8)), requires_grad=True)
    tgt = _targets()
    errs = grad_check_params(lambda: loss_tt(dec.teacher_forcing_logits(tgt, mem), tgt[:, 1:]),
                             {**dict(dec.named_parameters()), "memory": mem}, max_coords=6,
                             rng=np.random.default_rng(seed))
    assert max(errs.values()) < 1e-4


def test_greedy_is_deterministic_and_bounded(decoder, memory):
    a = decoder.greedy(memory, max_len=7)
    b = decoder.greedy(memory, max_len=7)
    assert [r.tokens for r in a] == [r.tokens for r in b]
    for r in a:
        assert 1 <= len(r.tokens) <= 7
        assert len(r.log_probs) == len(r.tokens) == r.steps
        assert EOS not in r.tokens[:-1]


def test_greedy_log_prob_is_sum_of_chosen_steps(decoder, memory):
    res = decoder.greedy(memory[:1], max_len=8)[0]
    ids = np.array([[BOS] + res.tokens])
    logp = log_softmax(decoder(ids[:, :-1], memory[:1])).data[0]
    chosen = logp[np.arange(len(res.tokens)), res.tokens]
    assert abs(chosen.sum() - res.total_log_prob) < 1e-9
    assert all(int(np.argmax(row)) == tok for row, tok in zip(logp, res.tokens))


def test_greedy_ties_pick_lowest_id(memory):
    dec = Decoder(np.random.default_rng(0), VOCAB, d_model=8, heads=2, layers=1, d_ff=16)
    dec.out.weight.data[:] = 0.0
    dec.out.bias.data[:] = 0.0
    dec.out.bias.data[[5, 7]] = 1.0  # two-way tie
    res = dec.greedy(memory[:1], max_len=3)[0]
    assert res.tokens == [5, 5, 5]


def test_immediate_eos_is_valid(memory):
    dec = Decoder(np.random.default_rng(0), VOCAB, d_model=8, heads=2, layers=1, d_ff=16)
    dec.out.bias.data[EOS] = 1e3
    res = dec.greedy(memory[:1], max_len=5)[0]
    assert res.tokens == [EOS] and res.steps == 1


def test_beam_one_equals_greedy(decoder, memory):
    g = decoder.greedy(memory[:1], max_len=6)[0]
    b = decoder.beam_search(memory[:1], max_len=6, beam=1)
    assert g.tokens == b.tokens
    assert abs(g.total_log_prob - b.total_log_prob) < 1e-9


def _score(dec, mem, seq):
    ids = np.array([[BOS] + list(seq)])
    logp = log_softmax(dec(ids[:, :-1], mem)).data[0]
    return float(logp[np.arange(len(seq)), seq].sum())


def test_wide_beam_finds_exhaustive_optimum():
    vocab, max_len = 5, 3
    dec = Decoder(np.random.default_rng(4), vocab, d_model=8, heads=2, layers=1, d_ff=16)
    mem = Tensor(np.random.default_rng(5).normal(size=(1, 3, 8)))
    candidates = []
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(vocab), repeat=n):
            if EOS in seq[:-1] or (n < max_len and seq[-1] != EOS):
                continue
            candidates.append((_score(dec, mem, seq), list(seq)))
    best = max(candidates, key=lambda c: c[0])
    res = dec.beam_search(mem, max_len=max_len, beam=vocab ** max_len)
    assert abs(res.total_log_prob - best[0]) < 1e-9
    assert res.tokens == best[1]


def test_memory_order_visual_first(rng):
    V = Tensor(rng.normal(size=(2, 4, 8)))
    Ms = Tensor(rng.normal(size=(2, 1, 8)))
    mem = conditioning_memory(V, Ms)
    assert mem.shape == (2, 5, 8)
    np.testing.assert_array_equal(mem.data[:, :4], V.data)
    np.testing.assert_array_equal(mem.data[:, 4:], Ms.data)
    assert conditioning_memory(V, None) is V


def test_generate_single_example(decoder, rng):
    V, Ms = Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(1, 8)))
    a = decoder.generate(V, Ms, max_len=5)
    b = decoder.generate(V, Ms, max_len=5)
    assert a.tokens == b.tokens and len(a.tokens) <= 5
    assert len(decoder.generate(V, Ms, max_len=5, beam=3).tokens) <= 5
