"""Report-level evaluation: BLEU-1..4, ROUGE-L, CIDEr and label-based clinical efficacy.

Conventions:
  * BLEU is corpus-level (clipped counts and lengths summed over the corpus)
    with a single reference per candidate. A zero match count at some order is
    replaced by ``BLEU_EPS`` so the geometric mean stays defined.
  * ROUGE-L is the LCS F-measure with ``ROUGE_BETA`` = 1.2, averaged over examples.
  * CIDEr uses TF-IDF n-gram vectors (n = 1..4) with document frequencies taken
    from the references, clipped candidate weights, a Gaussian length penalty
    with sigma = 6 and a final scale of 10.
  * Clinical efficacy compares labeler output cell by cell; precision, recall
    or F1 with a zero denominator are reported as 0 and flagged.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
CIDER_MAX_N = 4

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(candidates, references) -> None:
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ContractError("no candidates to score")


# -- BLEU ----------------------------------------------------------------------------

def bleu_stats(candidates: Sequence[Tokens], references: Sequence[Tokens], n: int = 4):
    """Clipped matches and candidate n-gram totals per order, plus corpus lengths."""
    matches = [0] * n
    totals = [0] * n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for k in range(1, n + 1):
            cc, rc = ngrams(cand, k), ngrams(ref, k)
            matches[k - 1] += sum(min(c, rc[g]) for g, c in cc.items())
            totals[k - 1] += max(len(cand) - k + 1, 0)
    return matches, totals, c_len, r_len


def brevity_penalty(c_len: int, r_len: int) -> float:
    if c_len == 0:
        return 0.0
    return 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)


def bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], n: int = 4) -> float:
    _check_pairs(candidates, references)
    if not 1 <= n <= 4:
        raise ContractError(f"BLEU order must be in 1..4, got {n}")
    matches, totals, c_len, r_len = bleu_stats(candidates, references, n)
    log_p = 0.0
    for m, t in zip(matches, totals):
        log_p += math.log(max(m, BLEU_EPS) / max(t, 1))
    return brevity_penalty(c_len, r_len) * math.exp(log_p / n)


def bleu_all(candidates, references) -> list[float]:
    """BLEU-1..4 from a single pass over the n-gram counts."""
    _check_pairs(candidates, references)
    matches, totals, c_len, r_len = bleu_stats(candidates, references, 4)
    bp = brevity_penalty(c_len, r_len)
    out, log_p = [], 0.0
    for k, (m, t) in enumerate(zip(matches, totals), 1):
        log_p += math.log(max(m, BLEU_EPS) / max(t, 1))
        out.append(bp * math.exp(log_p / k))
    return out


# -- ROUGE-L --------------------------------------------------------------------------

def lcs_length(a: Tokens, b: Tokens) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens, beta: float = ROUGE_BETA) -> float:
    """(1 + b^2) P R / (b^2 R + P) from the LCS precision P and recall R."""
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return (1 + beta ** 2) * p * r / (beta ** 2 * r + p)


def rouge_l_corpus(candidates, references, beta: float = ROUGE_BETA) -> tuple[float, list[float]]:
    _check_pairs(candidates, references)
    scores = [rouge_l(c, r, beta) for c, r in zip(candidates, references)]
    return float(np.mean(scores)), scores


# -- CIDEr ----------------------------------------------------------------------------

def _tfidf(tokens: Tokens, df: list[Counter], log_n: float):
    vecs, norms = [], []
    for k in range(1, CIDER_MAX_N + 1):
        vec = {g: tf * (log_n - math.log(max(1.0, df[k - 1][g]))) for g, tf in ngrams(tokens, k).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider(candidates: Sequence[Tokens], references: Sequence[Tokens],
          sigma: float = CIDER_SIGMA) -> tuple[float, list[float]]:
    _check_pairs(candidates, references)
    if len(references) < 2:
        raise ContractError("CIDEr needs a corpus of at least two references for document frequencies")
    df = [Counter() for _ in range(CIDER_MAX_N)]
    for ref in references:
        for k in range(1, CIDER_MAX_N + 1):
            df[k - 1].update(ngrams(ref, k).keys())
    log_n = math.log(float(len(references)))
    scores = []
    for cand, ref in zip(candidates, references):
        vc, nc = _tfidf(cand, df, log_n)
        vr, nr = _tfidf(ref, df, log_n)
        delta = float(len(cand) - len(ref))
        penalty = math.exp(-(delta ** 2) / (2 * sigma ** 2))
        total = 0.0
        for k in range(CIDER_MAX_N):
            dot = sum(min(w, vr[k][g]) * vr[k][g] for g, w in vc[k].items() if g in vr[k])
            if nc[k] != 0 and nr[k] != 0:
                total += penalty * dot / (nc[k] * nr[k])
        scores.append(CIDER_SCALE * total / CIDER_MAX_N)
    return float(np.mean(scores)), scores


# -- clinical efficacy -------------------------------------------------------------------

@dataclass
class CEResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)


def _prf(tp: float, fp: float, fn: float, flags: list[str], tag: str = "") -> tuple[float, float, float]:
    if tp + fp == 0:
        p = 0.0
        flags.append(f"precision_undefined{tag}")
    else:
        p = tp / (tp + fp)
    if tp + fn == 0:
        r = 0.0
        flags.append(f"recall_undefined{tag}")
    else:
        r = tp / (tp + fn)
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def ce_from_labels(pred: np.ndarray, ref: np.ndarray, average: str = "micro") -> CEResult:
    """Accuracy/precision/recall/F1 with ``ref`` as ground truth over (example, label) cells."""
    pred = np.asarray(pred).astype(bool)
    ref = np.asarray(ref).astype(bool)
    if pred.shape != ref.shape:
        raise ContractError(f"label matrices differ: {pred.shape} vs {ref.shape}")
    tp = int((pred & ref).sum())
    fp = int((pred & ~ref).sum())
    fn = int((~pred & ref).sum())
    tn = int((~pred & ~ref).sum())
    accuracy = (tp + tn) / max(pred.size, 1)
    flags: list[str] = []
    if average == "micro":
        p, r, f = _prf(tp, fp, fn, flags)
    elif average == "macro":
        per = []
        for j in range(pred.shape[1]):
            pj, rj = pred[:, j], ref[:, j]
            per.append(_prf(int((pj & rj).sum()), int((pj & ~rj).sum()), int((~pj & rj).sum()), flags, f"[{j}]"))
        p, r, f = (float(np.mean(v)) for v in zip(*per))
    else:
        raise ContractError(f"average must be 'micro' or 'macro', got {average!r}")
    return CEResult(accuracy, p, r, f, flags, {"tp": tp, "fp": fp, "fn": fn, "tn": tn})


def ce_metrics(gen_reports: Sequence[str], ref_reports: Sequence[str],
               labeler: Callable[[str], np.ndarray], average: str = "micro") -> CEResult:
    _check_pairs(gen_reports, ref_reports)
    pred = np.stack([labeler(r) for r in gen_reports])
    ref = np.stack([labeler(r) for r in ref_reports])
    return ce_from_labels(pred, ref, average)


# -- everything at once -------------------------------------------------------------------

@dataclass
class CorpusEval:
    scores: dict[str, float]
    per_example: dict[str, list[float]]
    flags: list[str] = field(default_factory=list)


def evaluate_corpus(gen_reports: Sequence[str], ref_reports: Sequence[str],
                    tokenizer: Callable[[str], list[str]], labeler: Callable[[str], np.ndarray],
                    average: str = "micro") -> CorpusEval:
    cands = [tokenizer(r) for r in gen_reports]
    refs = [tokenizer(r) for r in ref_reports]
    b = bleu_all(cands, refs)
    rl, rl_each = rouge_l_corpus(cands, refs)
    cd, cd_each = cider(cands, refs) if len(refs) >= 2 else (float("nan"), [float("nan")] * len(refs))
    ce = ce_metrics(gen_reports, ref_reports, labeler, average)
    scores = {f"bleu{k}": v for k, v in enumerate(b, 1)}
    scores.update({"rouge_l": rl, "cider": cd, "ce_accuracy": ce.accuracy, "ce_precision": ce.precision,
                   "ce_recall": ce.recall, "ce_f1": ce.f1})
    per = {
        "bleu4": [bleu([c], [r], 4) for c, r in zip(cands, refs)],
        "rouge_l": rl_each,
        "cider": cd_each,
    }
    return CorpusEval(scores, per, ce.flags)
