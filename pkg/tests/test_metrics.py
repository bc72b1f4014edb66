import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbgen.data import keyword_labeler, tokenize
from kbgen.errors import ContractError
from kbgen.metrics import (bleu, bleu_all, bleu_stats, brevity_penalty, ce_from_labels, ce_metrics, cider,
                           evaluate_corpus, lcs_length, rouge_l, rouge_l_corpus)
from oracles import bleu_oracle, cider_oracle, confusion_oracle, lcs_oracle, rouge_l_oracle

WORDS = "the a lung is clear no effusion heart size normal".split()
sentence = st.lists(st.sampled_from(WORDS), min_size=1, max_size=12)


def random_pairs(seed, n=100, vocab=6):
    rng = np.random.default_rng(seed)
    words = WORDS[:vocab]
    pairs = []
    for _ in range(n):
        c = [words[i] for i in rng.integers(0, vocab, size=rng.integers(1, 14))]
        r = [words[i] for i in rng.integers(0, vocab, size=rng.integers(1, 14))]
        pairs.append((c, r))
    return [p[0] for p in pairs], [p[1] for p in pairs]


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_bleu_matches_oracle(seed, n):
    c, r = random_pairs(seed)
    assert abs(bleu(c, r, n) - bleu_oracle(c, r, n)) < 1e-9
    assert abs(bleu_all(c, r)[n - 1] - bleu_oracle(c, r, n)) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_rouge_matches_oracle(seed):
    c, r = random_pairs(seed, vocab=4)
    mean, each = rouge_l_corpus(c, r)
    expect = [rouge_l_oracle(a, b) for a, b in zip(c, r)]
    assert max(abs(x - y) for x, y in zip(each, expect)) < 1e-9
    assert abs(mean - sum(expect) / len(expect)) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_cider_matches_oracle(seed):
    c, r = random_pairs(seed, vocab=8)
    mean, each = cider(c, r)
    o_mean, o_each = cider_oracle(c, r)
    assert abs(mean - o_mean) < 1e-9
    assert max(abs(x - y) for x, y in zip(each, o_each)) < 1e-9


@settings(max_examples=100)
@given(sentence, sentence)
def test_lcs_matches_oracle(a, b):
    assert lcs_length(a, b) == lcs_oracle(a, b)


def test_clipped_unigram_precision():
    cand = "the the the the the the the".split()
    ref = "the cat is on the mat".split()
    matches, totals, _, _ = bleu_stats([cand], [ref], 1)
    assert matches[0] == 2 and totals[0] == 7
    assert bleu([cand], [ref], 1) == 2 / 7  # c > r, so no brevity penalty


def test_perfect_match_is_one():
    c, _ = random_pairs(5)
    assert bleu_all(c, c) == [1.0, 1.0, 1.0, 1.0]


def test_brevity_penalty_applied():
    cand, ref = "the cat".split(), "the cat sat on the mat".split()
    bp = brevity_penalty(2, 6)
    assert bp == math.exp(1 - 6 / 2) and bp < 1
    assert abs(bleu([cand], [ref], 1) - bp) < 1e-12


def test_bleu_contracts():
    with pytest.raises(ContractError):
        bleu([], [], 4)
    with pytest.raises(ContractError):
        bleu([["a"]], [["a"], ["b"]], 4)
    with pytest.raises(ContractError):
        bleu([["a"]], [["a"]], 5)


@settings(max_examples=200)
@given(st.lists(st.tuples(sentence, sentence), min_size=1, max_size=4))
def test_bleu_monotone_when_precisions_non_increasing(pairs):
    c, r = [p[0] for p in pairs], [p[1] for p in pairs]
    matches, totals, _, _ = bleu_stats(c, r, 4)
    precisions = [max(m, 1e-9) / max(t, 1) for m, t in zip(matches, totals)]
    scores = bleu_all(c, r)
    assert all(0.0 <= s <= 1.0 for s in scores)
    if all(precisions[k + 1] <= precisions[k] for k in range(3)):
        assert all(scores[k] >= scores[k + 1] - 1e-12 for k in range(3))


def test_bleu_order_monotonicity_is_not_universal():
    # 4-gram precision 1/3 beats the running geometric mean of 1, 0.8, 0.75
    cand, ref = list("bbabba"), list("babbab")
    b = bleu_all([cand], [ref])
    assert b[3] > b[2]


def test_rouge_worked_example():
    score = rouge_l("the cat sat".split(), "the cat is on the mat".split())
    p, r = 2 / 3, 1 / 3
    assert score == (1 + 1.44) * p * r / (1.44 * r + p)
    assert abs(score - 0.474) < 2e-3  # 0.47287 rounded to three places


def test_rouge_identical_and_disjoint():
    assert rouge_l(["a", "b"], ["a", "b"]) == pytest.approx(1.0, abs=1e-15)
    assert rouge_l(["a", "b"], ["c"]) == 0.0
    assert rouge_l([], ["c"]) == 0.0


def test_cider_identical_corpus_is_constant():
    refs = [s.split() for s in ("the lung is clear", "no effusion is seen", "heart size is normal",
                                "a clear lung field")]
    mean, each = cider(refs, refs)
    # every n-gram order has a non-zero TF-IDF vector, so each cosine is 1
    assert all(abs(e - 10.0) < 1e-12 for e in each)
    other, _ = cider([refs[1], refs[0], refs[3], refs[2]], refs)
    assert other < mean


def test_cider_identical_short_document_misses_higher_orders():
    refs = [["no", "effusion"], "the lung is clear".split()]
    _, each = cider(refs, refs)
    assert abs(each[0] - 10.0 * 2 / 4) < 1e-12 and abs(each[1] - 10.0) < 1e-12


def test_cider_zero_overlap_and_single_doc():
    _, each = cider([["zzz"], ["no"]], [["the", "lung"], ["no", "effusion"]])
    assert each[0] == 0.0
    with pytest.raises(ContractError):
        cider([["a"]], [["a"]])


@settings(max_examples=50)
@given(st.lists(st.tuples(sentence, sentence), min_size=2, max_size=5))
def test_cider_non_negative(pairs):
    _, each = cider([p[0] for p in pairs], [p[1] for p in pairs])
    assert all(e >= 0 for e in each)


def test_ce_worked_confusion():
    # 2 examples x 14 labels = 28 cells with TP=3, FP=1, FN=2, TN=22
    ref = np.zeros((2, 14), int)
    pred = np.zeros((2, 14), int)
    ref[0, [0, 1, 2]] = pred[0, [0, 1, 2]] = 1
    pred[1, 5] = 1
    ref[1, [7, 8]] = 1
    out = ce_from_labels(pred, ref)
    assert out.counts == {"tp": 3, "fp": 1, "fn": 2, "tn": 22}
    assert abs(out.precision - 0.75) < 1e-12
    assert abs(out.recall - 0.6) < 1e-12
    assert abs(out.f1 - 2 * 0.75 * 0.6 / 1.35) < 1e-12
    assert abs(out.accuracy - 25 / 28) < 1e-12


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_ce_counts_match_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, ref = rng.integers(0, 2, size=(5, 14)), rng.integers(0, 2, size=(5, 14))
    out = ce_from_labels(pred, ref)
    assert tuple(out.counts.values()) == confusion_oracle(pred.tolist(), ref.tolist())
    for v in (out.accuracy, out.precision, out.recall, out.f1):
        assert 0.0 <= v <= 1.0


def test_ce_identical_and_degenerate():
    reports = ["there is mild cardiomegaly.", "no pneumothorax. a small nodule is noted."]
    out = ce_metrics(reports, reports, keyword_labeler)
    assert (out.accuracy, out.precision, out.recall, out.f1) == (1.0, 1.0, 1.0, 1.0)
    ref = np.zeros((3, 14), int)
    ref[:, 2] = 1
    out = ce_from_labels(np.zeros_like(ref), ref)
    assert out.recall == 0.0 and out.precision == 0.0 and "precision_undefined" in out.flags


def test_ce_macro_average():
    ref = np.array([[1, 0], [1, 1]])
    pred = np.array([[1, 0], [0, 1]])
    out = ce_from_labels(pred, ref, average="macro")
    assert out.precision == 1.0 and out.recall == 0.75
    assert "precision_undefined" not in out.flags
    with pytest.raises(ContractError):
        ce_from_labels(pred, ref, average="weighted")


def test_evaluate_corpus_keys_and_purity():
    gen = ["there is mild cardiomegaly.", "the lungs are clear.", "a small nodule is noted."]
    ref = ["there is mild cardiomegaly.", "there is a small pneumothorax.", "a small nodule is noted."]
    a = evaluate_corpus(gen, ref, tokenize, keyword_labeler)
    b = evaluate_corpus(gen, ref, tokenize, keyword_labeler)
    assert a.scores == b.scores
    assert set(a.scores) == {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider",
                             "ce_accuracy", "ce_precision", "ce_recall", "ce_f1"}
    assert len(a.per_example["bleu4"]) == 3 and a.per_example["rouge_l"][0] == pytest.approx(1.0)
