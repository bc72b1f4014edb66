"""Learned knowledge base: a memory matrix written by report embeddings, read by images.

Training step t:
    delta_b = MHA(M_{t-1}, T_b)                 for each report b in the batch
    M_t     = M_{t-1} + mean_b LayerNorm(delta_b)
    M^S_b   = MHA(z_img_b, M_t)

``M`` itself is a buffer: the update rule, not the optimiser, evolves it.
Gradients reach the update attention and its layer norm through the current
step's graph only.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .attention import MhaParams, key_padding_mask, mha
from .errors import ConfigError, DimensionError, FrozenError
from .nn import LayerNorm, Module
from .tensor import Tensor


def initial_memory(n_slots: int, d: int, dtype=np.float64) -> np.ndarray:
    """Ones at (i, i) for i < min(n_slots, d), zeros elsewhere."""
    if n_slots < 1 or d < 1:
        raise ConfigError(f"knowledge base needs positive sizes, got N_m={n_slots}, D={d}")
    return np.eye(n_slots, d, dtype=dtype)


class KnowledgeBase(Module):
    def __init__(self, rng: np.random.Generator, n_slots: int, d: int, n_heads: int, dtype=np.float64):
        self.M = initial_memory(n_slots, d, dtype)
        self.update_attn = MhaParams(rng, d, n_heads, dtype=dtype)
        self.retrieve_attn = MhaParams(rng, d, n_heads, dtype=dtype)
        self.norm = LayerNorm(d, dtype=dtype)
        self.frozen = False

    @property
    def n_slots(self) -> int:
        return self.M.shape[0]

    @property
    def d(self) -> int:
        return self.M.shape[1]

    def freeze(self) -> None:
        self.frozen = True

    def unfreeze(self) -> None:
        self.frozen = False

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.M).tobytes()).hexdigest()

    def increment(self, T: Tensor, key_is_pad: np.ndarray | None = None) -> Tensor:
        """Mean over the batch of LayerNorm(MHA(M, T_b)), shape (N_m, D).

        ``key_is_pad`` (B, N_R) hides padding rows so each report contributes
        only its own N_R embeddings.
        """
        if T.shape[-1] != self.d:
            raise DimensionError(f"report embeddings have dim {T.shape[-1]}, knowledge base has {self.d}")
        if T.ndim == 2:
            T = T.reshape((1,) + T.shape)
            key_is_pad = None if key_is_pad is None else np.asarray(key_is_pad)[None]
        mask = None if key_is_pad is None else key_padding_mask(key_is_pad, self.n_slots)
        delta = mha(Tensor(self.M), T, self.update_attn, mask)
        return self.norm(delta).mean(axis=0)

    def update(self, T: Tensor, key_is_pad: np.ndarray | None = None) -> Tensor:
        """Apply one update step; returns M_t as a graph node and stores its value."""
        if self.frozen:
            raise FrozenError("knowledge base is frozen; unfreeze() before updating")
        M_t = Tensor(self.M) + self.increment(T, key_is_pad)
        self.M = M_t.data.copy()
        return M_t

    def retrieve(self, z_img: Tensor, memory: Tensor | None = None) -> Tensor:
        """Supporting knowledge MHA(z_img, M): (D,) -> (1, D), (B, D) -> (B, 1, D). Read-only."""
        if z_img.shape[-1] != self.d:
            raise DimensionError(f"z_img has dim {z_img.shape[-1]}, knowledge base has {self.d}")
        memory = Tensor(self.M) if memory is None else memory
        query = z_img.reshape(z_img.shape[:-1] + (1, self.d))
        return mha(query, memory, self.retrieve_attn)


def init_kb(n_slots: int, d: int, n_heads: int = 1, seed: int = 0, dtype=np.float64) -> KnowledgeBase:
    return KnowledgeBase(np.random.default_rng(seed), n_slots, d, n_heads, dtype)


def update_kb(kb: KnowledgeBase, T: Tensor, key_is_pad: np.ndarray | None = None) -> KnowledgeBase:
    kb.update(T, key_is_pad)
    return kb


def retrieve(kb: KnowledgeBase, z_img: Tensor) -> Tensor:
    return kb.retrieve(z_img)
