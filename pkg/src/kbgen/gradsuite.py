"""Finite-difference suite: every differentiable kernel op plus the full training loss.

Each case builds fresh random inputs from a seed and returns a scalar loss
closure with the tensors to check. All cases run in float64.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as tn
from .attention import MhaParams, causal_mask, mha, scaled_attention
from .config import RunConfig
from .data import BOS, EOS, N_LABELS, PAD
from .gradcheck import grad_check_params
from .losses import cosine_distance, loss_tt, loss_vl, loss_vt, total_loss
from .model import Batch, ReportGenModel
from .tensor import Tensor, no_grad

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


def _p(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _weights(rng, *shape) -> np.ndarray:
    return rng.normal(size=shape)


def _elementwise(rng):
    a, b = _p(rng, 3, 4), _p(rng, 4)
    c = _p(rng, 3, 4, low=0.5, high=2.0)
    w = _weights(rng, 3, 4)
    return lambda: (((a + b) * c - a / c + c ** 1.5 - (-b)) * w).sum(), {"a": a, "b": b, "c": c}


def _unary(rng):
    x = _p(rng, 2, 5)
    pos = _p(rng, 2, 5, low=0.5, high=2.0)
    w = _weights(rng, 2, 5)
    return lambda: ((x.exp() + pos.log() + pos.sqrt() + x.sigmoid() + tn.log_sigmoid(x)) * w).sum(), \
        {"x": x, "pos": pos}


def _relu(rng):
    # keep inputs away from the kink so the central difference is valid
    x = Tensor(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)), requires_grad=True)
    w = _weights(rng, 3, 4)
    return lambda: (x.relu() * w).sum(), {"x": x}


def _matmul(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    w = _weights(rng, 2, 3, 5)
    return lambda: (tn.matmul(a, b) * w).sum(), {"a": a, "b": b}


def _reductions(rng):
    x = _p(rng, 2, 3, 4)
    w = _weights(rng, 3, 2)
    return lambda: ((x.sum(axis=2).transpose() * w).sum() + x.mean(axis=(0, 1), keepdims=True).sum()
                    + (x.reshape(6, 4).T * x.reshape(6, 4).T).mean()), {"x": x}


def _indexing(rng):
    x = _p(rng, 4, 5)
    w = _weights(rng, 2, 5)
    return lambda: (x[1:3] * w).sum() + x[np.array([0, 0, 3]), 2].sum(), {"x": x}


def _softmax(rng):
    x = _p(rng, 3, 6, low=-3, high=3)
    w = _weights(rng, 3, 6)
    return lambda: (tn.softmax_rows(x) * w).sum() + (tn.log_softmax(x, axis=0) * w).sum(), {"x": x}


def _layer_norm(rng):
    x, g, b = _p(rng, 3, 6), _p(rng, 6), _p(rng, 6)
    w = _weights(rng, 3, 6)
    return lambda: (tn.layer_norm(x, g, b) * w).sum(), {"x": x, "gain": g, "bias": b}


def _concat_pool(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 2, 1, 4)
    w = _weights(rng, 2, 4)
    return lambda: (tn.mean_rows(tn.concat_rows([a, b])) * w).sum(), {"a": a, "b": b}


def _embedding_pick(rng):
    table = _p(rng, 6, 4)
    ids = rng.integers(0, 6, size=(2, 5))
    logits = _p(rng, 2, 5, 6)
    w = _weights(rng, 2, 5, 4)
    return lambda: (tn.embedding(table, ids) * w).sum() + tn.pick(logits, ids).sum(), \
        {"table": table, "logits": logits}


def _masked_fill(rng):
    x = _p(rng, 4, 4)
    w = _weights(rng, 4, 4)
    return lambda: (tn.softmax(tn.masked_fill(x, causal_mask(4), -np.inf)) * w).sum(), {"x": x}


def _conv2d(rng):
    x, k, b = _p(rng, 2, 2, 7, 7), _p(rng, 3, 2, 3, 3), _p(rng, 3)
    w = _weights(rng, 2, 3, 4, 4)
    return lambda: (tn.conv2d(x, k, b, stride=2, padding=1) * w).sum(), {"x": x, "kernel": k, "bias": b}


def _attention(rng):
    params = MhaParams(rng, 6, 2)
    X, Y = _p(rng, 2, 3, 6), _p(rng, 2, 4, 6)
    mask = np.zeros((2, 3, 4), dtype=bool)
    mask[1, :, 3] = True
    w = _weights(rng, 2, 3, 6)
    wq, wk, wv = params.head(0)

    def loss():
        single = scaled_attention(X, Y, wq, wk, wv).sum()
        return (mha(X, Y, params, mask) * w).sum() + single

    return loss, {"X": X, "Y": Y, **dict(params.named_parameters("mha."))}


def _losses(rng):
    zi, zt, zin, ztn = (_p(rng, 3, 5) for _ in range(4))
    mu = np.array([0.0, 0.5, 1.0])
    logits = _p(rng, 3, N_LABELS, low=-3, high=3)
    y = rng.integers(0, 2, size=(3, N_LABELS))
    tok_logits = _p(rng, 2, 4, 7, low=-2, high=2)
    targets = rng.integers(4, 7, size=(2, 4))
    targets[1, 3] = PAD

    def loss():
        return total_loss(loss_tt(tok_logits, targets), loss_vt(zi, zt, zin, ztn, mu),
                          loss_vl(logits, y)).graph + cosine_distance(zi, zt).sum()

    return loss, {"z_img": zi, "z_txt": zt, "z_img_neg": zin, "z_txt_neg": ztn, "label_logits": logits,
                  "token_logits": tok_logits}


def relu_margin(loss_fn: Callable[[], Tensor]) -> float:
    """Smallest |input| seen by any relu (hinges included) while evaluating ``loss_fn``."""
    seen = []
    original = Tensor.relu

    def spy(self):
        seen.append(float(np.abs(self.data).min()))
        return original(self)

    Tensor.relu = spy
    try:
        with no_grad():
            loss_fn()
    finally:
        Tensor.relu = original
    return min(seen, default=np.inf)


def tiny_model_batch(seed: int, batch: int = 2, vocab: int = 10, length: int = 6, margin: float = 1e-4):
    """A small model and random batch used by the composed-loss check.

    Draws are repeated (deterministically) until the point is generic: pooled
    image and report vectors clearly non-zero, since cosine distance is
    undefined at 0, and every relu input at least ``margin`` from the kink, so
    a central difference with h well below ``margin`` never straddles it.
    """
    for attempt in itertools.count():
        model, b = _draw_model_batch(seed, attempt, batch, vocab, length)
        with no_grad():
            z_img = model.visual(np.concatenate([b.images, b.neg_images]))[1].data
            z_txt = model.text(np.concatenate([b.tokens, b.neg_tokens]))[1].data
        if min(np.linalg.norm(z_img, axis=-1).min(), np.linalg.norm(z_txt, axis=-1).min()) <= 1e-3:
            continue
        if relu_margin(lambda: model.loss(b)) >= margin:
            return model, b


def _draw_model_batch(seed, attempt, batch, vocab, length):
    config = RunConfig(d_model=8, n_heads=2, attn_heads=2, enc_layers=1, dec_layers=1, d_ff=16, kb_size=4,
                       grid=16, conv_channels=(2, 2, 2), max_len=12, seed=seed + attempt)
    model = ReportGenModel(config, vocab)
    rng = np.random.default_rng([seed, 7, attempt])
    # Zero-initialised biases put relu inputs exactly on the kink wherever a
    # receptive field is all zeros; jitter every parameter to a generic point.
    for p in model.parameters():
        p.data += rng.normal(scale=0.1, size=p.shape)

    def tokens():
        t = np.full((batch, length), PAD, dtype=np.int64)
        for r in range(batch):
            n = int(rng.integers(2, length - 1))
            t[r, 0] = BOS
            t[r, 1:n + 1] = rng.integers(4, vocab, size=n)
            t[r, n + 1] = EOS
        return t

    b = Batch(rng.uniform(size=(batch, 16, 16)), tokens(), rng.integers(0, 2, size=(batch, N_LABELS)),
              rng.uniform(size=(batch, 16, 16)), tokens(), rng.integers(0, 2, size=(batch, N_LABELS)))
    return model, b


def _full_loss(rng):
    model, batch = tiny_model_batch(int(rng.integers(0, 2 ** 31)))
    return (lambda: model.loss(batch)[0].graph), dict(model.named_parameters())


CASES: dict[str, Case] = {
    "elementwise": _elementwise,
    "unary": _unary,
    "relu": _relu,
    "matmul": _matmul,
    "reductions": _reductions,
    "indexing": _indexing,
    "softmax": _softmax,
    "layer_norm": _layer_norm,
    "concat_pool": _concat_pool,
    "embedding_pick": _embedding_pick,
    "masked_fill": _masked_fill,
    "conv2d": _conv2d,
    "attention": _attention,
    "losses": _losses,
    "full_loss": _full_loss,
}


@dataclass
class SuiteResult:
    case: str
    seed: int
    max_rel_error: float
    worst_tensor: str


def run_suite(seeds: int = 20, h: float = 1e-5, full_loss_coords: int = 3,
              cases: dict[str, Case] | None = None) -> tuple[list[SuiteResult], float]:
    """Run every case for ``seeds`` seeds; returns per-(case, seed) results and wall time.

    The composed loss checks ``full_loss_coords`` random coordinates of every
    parameter tensor per seed; the small cases check every coordinate.
    """
    start = time.perf_counter()
    out = []
    for name, case in (cases or CASES).items():
        for seed in range(seeds):
            rng = np.random.default_rng([seed, 2024])
            loss_fn, params = case(rng)
            coords = full_loss_coords if name == "full_loss" else None
            errs = grad_check_params(loss_fn, params, h=h, max_coords=coords, rng=rng)
            worst = max(errs, key=errs.get)
            out.append(SuiteResult(name, seed, errs[worst], worst))
    return out, time.perf_counter() - start
