"""Deliberately naive reference implementations used as test oracles."""

import math
from functools import lru_cache


def all_ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def count(items, item):
    return sum(1 for x in items if x == item)


def bleu_oracle(cands, refs, n):
    log_sum = 0.0
    for k in range(1, n + 1):
        matched = total = 0
        for c, r in zip(cands, refs):
            cg, rg = all_ngrams(c, k), all_ngrams(r, k)
            for g in set(cg):
                matched += min(count(cg, g), count(rg, g))
            total += len(cg)
        p = (matched if matched > 0 else 1e-9) / (total if total > 0 else 1)
        log_sum += math.log(p)
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    if c_len == 0:
        bp = 0.0
    elif c_len > r_len:
        bp = 1.0
    else:
        bp = math.exp(1 - r_len / c_len)
    return bp * math.exp(log_sum / n)


def lcs_oracle(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_l_oracle(c, r, beta=1.2):
    if not c or not r:
        return 0.0
    lcs = lcs_oracle(c, r)
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(c), lcs / len(r)
    return (1 + beta * beta) * prec * rec / (rec * beta * beta + prec)


def cider_oracle(cands, refs, sigma=6.0):
    """Explicit dense TF-IDF vectors over the union n-gram vocabulary."""
    N = len(refs)
    scores = []
    per_n = {}
    for n in range(1, 5):
        vocab = sorted({g for doc in list(cands) + list(refs) for g in all_ngrams(doc, n)})
        df = {g: sum(1 for r in refs if g in all_ngrams(r, n)) for g in vocab}
        idf = {g: math.log(N) - math.log(max(1.0, df[g])) for g in vocab}
        per_n[n] = (vocab, idf)
    for c, r in zip(cands, refs):
        total = 0.0
        for n in range(1, 5):
            vocab, idf = per_n[n]
            cg, rg = all_ngrams(c, n), all_ngrams(r, n)
            vc = [count(cg, g) * idf[g] for g in vocab]
            vr = [count(rg, g) * idf[g] for g in vocab]
            nc = math.sqrt(sum(x * x for x in vc))
            nr = math.sqrt(sum(x * x for x in vr))
            if nc == 0 or nr == 0:
                continue
            dot = sum(min(x, y) * y for x, y in zip(vc, vr))
            total += dot / (nc * nr) * math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma * sigma))
        scores.append(10.0 * total / 4)
    return sum(scores) / len(scores), scores


def confusion_oracle(pred, ref):
    tp = fp = fn = tn = 0
    for prow, rrow in zip(pred, ref):
        for p, r in zip(prow, rrow):
            if p and r:
                tp += 1
            elif p:
                fp += 1
            elif r:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn
