"""Transformer decoder over the conditioning memory [V; M^S]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import MhaParams, causal_mask, key_padding_mask, mha
from .data import BOS, EOS, PAD
from .errors import ContractError
from .nn import FeedForward, LayerNorm, Linear, Module, sinusoidal_positions
from .tensor import Tensor, concat_rows, embedding, glorot_uniform, log_softmax, no_grad


@dataclass
class GenerationResult:
    tokens: list[int]                 # generated ids, ending with EOS unless max_len was hit
    log_probs: list[float] = field(default_factory=list)
    steps: int = 0                    # decoder forward passes used

    @property
    def total_log_prob(self) -> float:
        return float(sum(self.log_probs))


def conditioning_memory(V: Tensor, Ms: Tensor | None) -> Tensor:
    """Visual rows first, the supporting-knowledge row last; V alone without a KB."""
    return V if Ms is None else concat_rows([V, Ms])


class DecoderLayer(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int, d_ff: int, dtype=np.float64):
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.self_attn = MhaParams(rng, d, heads, dtype=dtype)
        self.norm2 = LayerNorm(d, dtype=dtype)
        self.cross_attn = MhaParams(rng, d, heads, dtype=dtype)
        self.norm3 = LayerNorm(d, dtype=dtype)
        self.ff = FeedForward(rng, d, d_ff, dtype=dtype)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray) -> Tensor:
        h = self.norm1(x)
        x = x + mha(h, h, self.self_attn, self_mask)
        x = x + mha(self.norm2(x), memory, self.cross_attn)
        return x + self.ff(self.norm3(x))


class Decoder(Module):
    def __init__(self, rng: np.random.Generator, vocab_size: int, d_model: int, heads: int,
                 layers: int, d_ff: int, max_len: int = 60, dtype=np.float64):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.tok_emb = glorot_uniform(rng, (vocab_size, d_model), dtype=dtype)
        self.layers = [DecoderLayer(rng, d_model, heads, d_ff, dtype) for _ in range(layers)]
        # the KB row grows with training steps while V does not; normalising the
        # memory rows keeps cross-attention from being swamped by M^S
        self.memory_norm = LayerNorm(d_model, dtype=dtype)
        self.norm = LayerNorm(d_model, dtype=dtype)
        self.out = Linear(rng, d_model, vocab_size, dtype=dtype)
        self._pos = sinusoidal_positions(max_len + 1, d_model, dtype)
        self._scale = float(np.sqrt(d_model))

    def __call__(self, ids: np.ndarray, memory: Tensor) -> Tensor:
        """Logits (B, N, |V|) for every input position of ``ids`` (B, N)."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        n = ids.shape[1]
        if n == 0:
            raise ContractError("decoder input is empty")
        x = embedding(self.tok_emb, ids) * self._scale + self._pos[:n]
        mask = causal_mask(n)[None] | key_padding_mask(ids == PAD, n)
        memory = self.memory_norm(memory)
        for layer in self.layers:
            x = layer(x, memory, mask)
        return self.out(self.norm(x))

    # -- training -------------------------------------------------------------
    def teacher_forcing_logits(self, targets: np.ndarray, memory: Tensor) -> Tensor:
        """``targets`` (B, N+1) starting with BOS -> logits (B, N, |V|) predicting targets[:, 1:]."""
        targets = np.asarray(targets)
        if targets.ndim == 1:
            targets = targets[None]
        if targets.shape[1] < 2:
            raise ContractError("targets need BOS plus at least one supervised token")
        if not (targets[:, 0] == BOS).all():
            raise ContractError("targets must start with BOS")
        return self(targets[:, :-1], memory)

    # -- inference ------------------------------------------------------------
    def greedy(self, memory: Tensor, max_len: int) -> list[GenerationResult]:
        """Batched greedy decoding; argmax ties go to the lowest token id."""
        if max_len < 1:
            raise ContractError("max_len must be >= 1")
        B = memory.shape[0]
        ids = np.full((B, 1), BOS, dtype=np.int64)
        results = [GenerationResult([]) for _ in range(B)]
        alive = np.ones(B, dtype=bool)
        with no_grad():
            for _ in range(max_len):
                rows = np.flatnonzero(alive)
                logp = log_softmax(self(ids[rows], memory[rows])[:, -1, :]).data
                choice = logp.argmax(axis=-1)
                step_ids = np.full(B, PAD, dtype=np.int64)
                for r, tok, lp in zip(rows, choice, logp[np.arange(len(rows)), choice]):
                    res = results[r]
                    res.tokens.append(int(tok))
                    res.log_probs.append(float(lp))
                    res.steps += 1
                    step_ids[r] = tok
                    if tok == EOS:
                        alive[r] = False
                ids = np.concatenate([ids, step_ids[:, None]], axis=1)
                if not alive.any():
                    break
        return results

    def beam_search(self, memory: Tensor, max_len: int, beam: int) -> GenerationResult:
        """Beam search for one example (memory (1, M, D)); scores are summed log-probs."""
        if max_len < 1 or beam < 1:
            raise ContractError("max_len and beam must be >= 1")
        hyps: list[tuple[float, list[int], list[float]]] = [(0.0, [], [])]
        finished: list[tuple[float, list[int], list[float]]] = []
        steps = 0
        with no_grad():
            for _ in range(max_len):
                ids = np.array([[BOS] + h[1] for h in hyps], dtype=np.int64)
                mem = memory[np.zeros(len(hyps), dtype=np.int64)]
                logp = log_softmax(self(ids, mem)[:, -1, :]).data
                steps += 1
                cands = []
                for (score, toks, lps), row in zip(hyps, logp):
                    top = np.argsort(-row, kind="stable")[:beam]
                    for tok in top:
                        cands.append((score + float(row[tok]), toks + [int(tok)], lps + [float(row[tok])]))
                cands.sort(key=lambda c: (-c[0], c[1]))
                top = cands[:beam]
                finished += [c for c in top if c[1][-1] == EOS]
                hyps = [c for c in top if c[1][-1] != EOS]
                # scores only decrease, so an alive beam can no longer overtake
                if not hyps or (finished and max(f[0] for f in finished) >= hyps[0][0]):
                    break
        best = min(finished + hyps, key=lambda c: (-c[0], c[1]))
        return GenerationResult(best[1], best[2], steps)

    def generate(self, V: Tensor, Ms: Tensor | None, max_len: int = 60, beam: int = 1) -> GenerationResult:
        """Decode one report from V (K, D) and M^S (1, D) (or None without a KB)."""
        memory = conditioning_memory(V, Ms)
        if memory.ndim == 2:
            memory = memory.reshape((1,) + memory.shape)
        if beam == 1:
            return self.greedy(memory, max_len)[0]
        return self.beam_search(memory, max_len, beam)
