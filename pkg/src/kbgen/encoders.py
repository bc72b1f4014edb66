"""Visual encoder (image -> V, z_img) and report encoder (tokens -> T, z_txt)."""

from __future__ import annotations

import logging

import numpy as np

from .attention import MhaParams, key_padding_mask, mha
from .data import PAD
from .errors import DimensionError, VocabularyError
from .nn import FeedForward, LayerNorm, Linear, Module, sinusoidal_positions
from .tensor import Tensor, conv2d, embedding, glorot_uniform, mean_rows, zeros

logger = logging.getLogger(__name__)


class ImageEncoder(Module):
    """Three 3x3 conv blocks (strides 1, 2, 2) followed by the affine map W^E.

    The input is expanded to three channels: intensity, intensity * row
    coordinate, intensity * column coordinate. Position stays visible to the
    decoder, and an all-zero image still maps to all-zero features.
    """

    def __init__(self, rng: np.random.Generator, d_model: int, grid: int = 32,
                 channels: tuple[int, int, int] = (8, 16, 32), dtype=np.float64):
        self.grid = grid
        c_in = 3
        self.conv_w = []
        self.conv_b = []
        for c_out in channels:
            self.conv_w.append(glorot_uniform(rng, (c_out, c_in, 3, 3), fan_in=c_in * 9, fan_out=c_out * 9, dtype=dtype))
            self.conv_b.append(zeros((c_out,), requires_grad=True, dtype=dtype))
            c_in = c_out
        self.strides = (1, 2, 2)
        self.w_e = glorot_uniform(rng, (channels[-1], d_model), dtype=dtype)
        ramp = np.linspace(-1.0, 1.0, grid)
        self._rows = np.broadcast_to(ramp[:, None], (grid, grid)).astype(dtype)
        self._cols = np.broadcast_to(ramp[None, :], (grid, grid)).astype(dtype)

    def named_parameters(self, prefix: str = ""):
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            yield f"{prefix}conv{i}.weight", w
            yield f"{prefix}conv{i}.bias", b
        yield f"{prefix}w_e", self.w_e

    @property
    def n_positions(self) -> int:
        side = self.grid
        for s in self.strides:
            side = (side - 1) // s + 1
        return side * side

    def __call__(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        """``images`` (B, grid, grid) in [0, 1] -> V (B, K, D), z_img (B, D)."""
        images = np.asarray(images, dtype=self.w_e.dtype)
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != (self.grid, self.grid):
            raise DimensionError(f"expected {self.grid}x{self.grid} images, got {images.shape[1:]}")
        x = Tensor(np.stack([images, images * self._rows, images * self._cols], axis=1))
        for w, b, s in zip(self.conv_w, self.conv_b, self.strides):
            x = conv2d(x, w, b, stride=s, padding=1).relu()
        B, C, H, W = x.shape
        feats = x.reshape(B, C, H * W).transpose(0, 2, 1)
        V = feats @ self.w_e
        return V, mean_rows(V)


class EncoderLayer(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int, d_ff: int, dtype=np.float64):
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.attn = MhaParams(rng, d, heads, dtype=dtype)
        self.norm2 = LayerNorm(d, dtype=dtype)
        self.ff = FeedForward(rng, d, d_ff, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        h = self.norm1(x)
        x = x + mha(h, h, self.attn, mask)
        return x + self.ff(self.norm2(x))


class ReportEncoder(Module):
    """Pre-norm transformer encoder; row 0 (the BOS/CLS token) pools the report."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, d_model: int, heads: int,
                 layers: int, d_ff: int, max_len: int = 60, dtype=np.float64):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d_model = d_model
        self.tok_emb = glorot_uniform(rng, (vocab_size, d_model), dtype=dtype)
        self.layers = [EncoderLayer(rng, d_model, heads, d_ff, dtype) for _ in range(layers)]
        self.norm = LayerNorm(d_model, dtype=dtype)
        self.proj = Linear(rng, d_model, d_model, dtype=dtype)  # W^Z, b^Z
        self._pos = sinusoidal_positions(max_len, d_model, dtype)
        self._scale = float(np.sqrt(d_model))

    def __call__(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        """``ids`` (B, N) beginning with CLS -> T (B, N, D), z_txt (B, D)."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(f"token id outside vocabulary of size {self.vocab_size}")
        if ids.shape[1] > self.max_len:
            logger.warning("report batch of length %d truncated to max_len=%d", ids.shape[1], self.max_len)
            ids = ids[:, :self.max_len]
        n = ids.shape[1]
        x = embedding(self.tok_emb, ids) * self._scale + self._pos[:n]
        mask = key_padding_mask(ids == PAD, n)
        for layer in self.layers:
            x = layer(x, mask)
        T = self.norm(x)
        return T, self.proj(T[:, 0, :])
