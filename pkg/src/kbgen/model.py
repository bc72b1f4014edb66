"""Full report generator: visual encoder, report encoder, knowledge base, decoder, label head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import PAD, pad_batch
from .encoders import ImageEncoder, ReportEncoder
from .errors import FrozenError
from .generator import Decoder, GenerationResult, conditioning_memory
from .knowledge_base import KnowledgeBase
from .losses import LossBreakdown, loss_tt, loss_vl, loss_vt, margin_mu, predict_labels, total_loss
from .nn import Linear, Module
from .tensor import Tensor, no_grad


@dataclass
class Batch:
    images: np.ndarray          # (B, H, W)
    tokens: np.ndarray          # (B, N) BOS ... EOS PAD...
    labels: np.ndarray          # (B, N_L)
    neg_images: np.ndarray
    neg_tokens: np.ndarray
    neg_labels: np.ndarray


def make_batch(studies, encoded, anchors, negatives) -> Batch:
    """Stack anchors and their negatives; reports share one padded width."""
    seqs = [encoded[i] for i in anchors] + [encoded[j] for j in negatives]
    tokens = pad_batch(seqs)
    B = len(anchors)
    return Batch(
        images=np.stack([studies[i].image for i in anchors]),
        tokens=tokens[:B],
        labels=np.stack([studies[i].labels for i in anchors]),
        neg_images=np.stack([studies[j].image for j in negatives]),
        neg_tokens=tokens[B:],
        neg_labels=np.stack([studies[j].labels for j in negatives]),
    )


class ReportGenModel(Module):
    def __init__(self, config: RunConfig, vocab_size: int):
        rng = np.random.default_rng(config.seed)
        dt = config.dtype
        D = config.d_model
        self.config = config
        self.vocab_size = vocab_size
        self.visual = ImageEncoder(rng, D, config.grid, config.conv_channels, dt)
        self.text = ReportEncoder(rng, vocab_size, D, config.attn_heads, config.enc_layers,
                                  config.ff_width, config.max_len, dt)
        self.kb = KnowledgeBase(rng, config.kb_size, D, config.n_heads, dt) if config.kb_size else None
        self.decoder = Decoder(rng, vocab_size, D, config.attn_heads, config.dec_layers,
                               config.ff_width, config.max_len, dt)
        self.label_head = Linear(rng, D, config.n_labels, dtype=dt)  # W^L, b^L

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        visual = [(f"visual.{k}", p) for k, p in self.visual.named_parameters()]
        taken = {id(p) for _, p in visual}
        other = [(k, p) for k, p in self.named_parameters() if id(p) not in taken]
        return {"visual": visual, "other": other}

    # -- training ---------------------------------------------------------------
    def loss(self, batch: Batch) -> tuple[LossBreakdown, Tensor | None]:
        """Combined objective for one batch.

        Returns the loss breakdown (``.graph`` is the differentiable total) and the
        updated knowledge-base matrix M_t, which the caller commits after the
        optimiser step. The model itself is left untouched.
        """
        cfg = self.config
        B = len(batch.images)
        V_all, z_all = self.visual(np.concatenate([batch.images, batch.neg_images]))
        T_all, zt_all = self.text(np.concatenate([batch.tokens, batch.neg_tokens]))
        V, z_img, z_img_neg = V_all[:B], z_all[:B], z_all[B:]
        T, z_txt, z_txt_neg = T_all[:B], zt_all[:B], zt_all[B:]

        M_t = Ms = None
        if self.kb is not None:
            if self.kb.frozen:
                raise FrozenError("cannot train with a frozen knowledge base")
            M_t = Tensor(self.kb.M) + self.kb.increment(T, batch.tokens == PAD)
            Ms = self.kb.retrieve(z_img, M_t)

        logits = self.decoder.teacher_forcing_logits(batch.tokens, conditioning_memory(V, Ms))
        l_tt = loss_tt(logits, batch.tokens[:, 1:])
        mu = np.array([margin_mu(y, yn) for y, yn in zip(batch.labels, batch.neg_labels)])
        l_vt = loss_vt(z_img, z_txt, z_img_neg, z_txt_neg, mu, cfg.cross_modal_negatives)
        l_vl = loss_vl(predict_labels(z_img, self.label_head), batch.labels)
        return total_loss(l_tt, l_vt, l_vl, cfg.lambdas), M_t

    def commit_kb(self, M_t: Tensor | None) -> None:
        if self.kb is None or M_t is None:
            return
        if self.kb.frozen:
            raise FrozenError("knowledge base is frozen")
        self.kb.M = np.array(M_t.data, copy=True)

    # -- inference ---------------------------------------------------------------
    def memory_for(self, images: np.ndarray) -> Tensor:
        """Decoder conditioning [V; M^S] from images alone, reading the stored M."""
        V, z_img = self.visual(images)
        Ms = self.kb.retrieve(z_img) if self.kb is not None else None
        return conditioning_memory(V, Ms)

    def generate(self, images: np.ndarray, max_len: int | None = None, beam: int | None = None,
                 chunk: int = 64) -> list[GenerationResult]:
        images = np.asarray(images)
        if images.ndim == 2:
            images = images[None]
        max_len = max_len or self.config.max_len
        beam = beam or self.config.beam
        out: list[GenerationResult] = []
        with no_grad():
            for start in range(0, len(images), chunk):
                memory = self.memory_for(images[start:start + chunk])
                if beam == 1:
                    out.extend(self.decoder.greedy(memory, max_len))
                else:
                    out.extend(self.decoder.beam_search(memory[i:i + 1], max_len, beam)
                               for i in range(memory.shape[0]))
        return out

    def label_probabilities(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            _, z_img = self.visual(images)
            logits = predict_labels(z_img, self.label_head).data
        return 1.0 / (1.0 + np.exp(-logits))

    def token_nll(self, images: np.ndarray, tokens: np.ndarray) -> float:
        """Teacher-forced mean token cross-entropy against the stored (not updated) M."""
        with no_grad():
            logits = self.decoder.teacher_forcing_logits(tokens, self.memory_for(images))
            return float(loss_tt(logits, np.asarray(tokens)[:, 1:]).data)
