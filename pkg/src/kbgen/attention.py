"""Scaled dot-product and multi-head attention.

Queries ``X`` have shape (..., l_x, d) and keys/values ``Y`` have shape
(..., l_y, d); leading axes are batch axes. Per-head projections are stored
as column blocks of one d x d matrix, so head ``i`` uses columns
``i*d_n:(i+1)*d_n``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Module
from .tensor import Tensor, glorot_uniform, masked_fill, softmax


def scaled_attention(X: Tensor, Y: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                     mask: np.ndarray | None = None, return_weights: bool = False):
    """One head: softmax(X wq (Y wk)^T / sqrt(d_n)) Y wv.

    ``mask`` (broadcastable to (..., l_x, l_y)) is true where a key is hidden.
    """
    d = X.shape[-1]
    if Y.shape[-1] != d or wq.shape[0] != d or wk.shape[0] != d or wv.shape[0] != d:
        raise DimensionError(f"attention: X {X.shape}, Y {Y.shape}, head weights {wq.shape}")
    d_n = wq.shape[1]
    scores = (X @ wq) @ (Y @ wk).transpose() * (1.0 / math.sqrt(d_n))
    if mask is not None:
        scores = masked_fill(scores, mask, -np.inf)
    weights = softmax(scores, axis=-1)
    out = weights @ (Y @ wv)
    return (out, weights) if return_weights else out


class MhaParams(Module):
    """Query/key/value/output projections for ``n_heads`` parallel heads."""

    def __init__(self, rng: np.random.Generator, d: int, n_heads: int, dtype=np.float64):
        if n_heads < 1 or d % n_heads:
            raise ConfigError(f"model dim {d} is not divisible by head count {n_heads}")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.w_q = glorot_uniform(rng, (d, d), fan_out=self.d_head, dtype=dtype)
        self.w_k = glorot_uniform(rng, (d, d), fan_out=self.d_head, dtype=dtype)
        self.w_v = glorot_uniform(rng, (d, d), fan_out=self.d_head, dtype=dtype)
        self.w_o = glorot_uniform(rng, (d, d), dtype=dtype)

    def head(self, i: int) -> tuple[Tensor, Tensor, Tensor]:
        cols = slice(i * self.d_head, (i + 1) * self.d_head)
        return self.w_q[:, cols], self.w_k[:, cols], self.w_v[:, cols]


def _split_heads(x: Tensor, n: int) -> Tensor:
    lead = x.shape[:-2]
    k = len(lead)
    x = x.reshape(lead + (x.shape[-2], n, x.shape[-1] // n))
    return x.transpose(tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    lead = x.shape[:-3]
    k = len(lead)
    n, l, dn = x.shape[-3:]
    x = x.transpose(tuple(range(k)) + (k + 1, k, k + 2))
    return x.reshape(lead + (l, n * dn))


def mha(X: Tensor, Y: Tensor, params: MhaParams, mask: np.ndarray | None = None) -> Tensor:
    """[Att_1(X, Y); ...; Att_n(X, Y)] W^O, output shaped like ``X``."""
    d = params.d
    if X.shape[-1] != d or Y.shape[-1] != d:
        raise DimensionError(f"mha: expected feature dim {d}, got X {X.shape} and Y {Y.shape}")
    n = params.n_heads
    q = _split_heads(X @ params.w_q, n)
    k = _split_heads(Y @ params.w_k, n)
    v = _split_heads(Y @ params.w_v, n)
    scores = q @ k.transpose() * (1.0 / math.sqrt(params.d_head))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        scores = masked_fill(scores, mask[..., None, :, :], -np.inf)
    heads = softmax(scores, axis=-1) @ v
    return _merge_heads(heads) @ params.w_o


def causal_mask(length: int) -> np.ndarray:
    """True above the diagonal: position t may not see keys after t."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def key_padding_mask(key_is_pad: np.ndarray, n_queries: int) -> np.ndarray:
    """(B, l_y) pad flags -> (B, n_queries, l_y) mask."""
    key_is_pad = np.asarray(key_is_pad, dtype=bool)
    return np.broadcast_to(key_is_pad[:, None, :], (key_is_pad.shape[0], n_queries, key_is_pad.shape[1]))
