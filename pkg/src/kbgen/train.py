"""Training loop, validation-based model selection and in-memory evaluation helpers."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig
from .data import (SyntheticStudy, Vocabulary, build_vocab, decode, encode, keyword_labeler, pad_batch,
                   read_manifest, tokenize)
from .errors import ContractError, NumericError
from .losses import sample_negative
from .metrics import CorpusEval, evaluate_corpus
from .model import ReportGenModel, make_batch
from .optim import Adam

logger = logging.getLogger(__name__)


def split_studies(studies: Sequence[SyntheticStudy]) -> dict[str, list[SyntheticStudy]]:
    out: dict[str, list[SyntheticStudy]] = {"train": [], "val": [], "test": []}
    for s in studies:
        out.setdefault(s.split, []).append(s)
    return out


def make_optimizer(model: ReportGenModel, config: RunConfig) -> Adam:
    """Visual encoder at ``lr_visual``; everything else at ``lr_other`` with weight decay."""
    groups = model.param_groups()
    return Adam({
        "visual": ([p for _, p in groups["visual"]], config.lr_visual, 0.0),
        "other": ([p for _, p in groups["other"]], config.lr_other, config.weight_decay),
    })


def generate_reports(model: ReportGenModel, vocab: Vocabulary, studies: Sequence[SyntheticStudy],
                     max_len: int | None = None, beam: int | None = None) -> list[str]:
    if not studies:
        return []
    results = model.generate(np.stack([s.image for s in studies]), max_len=max_len, beam=beam)
    return [decode(r.tokens, vocab) for r in results]


def evaluate_studies(model: ReportGenModel, vocab: Vocabulary, studies: Sequence[SyntheticStudy],
                     average: str = "micro") -> tuple[CorpusEval, list[str]]:
    if not studies:
        raise ContractError("no studies to evaluate")
    generated = generate_reports(model, vocab, studies)
    refs = [s.report for s in studies]
    return evaluate_corpus(generated, refs, tokenize, keyword_labeler, average), generated


def token_cross_entropy(model: ReportGenModel, vocab: Vocabulary, studies: Sequence[SyntheticStudy],
                        chunk: int = 64) -> float:
    """Token-weighted teacher-forced cross-entropy over ``studies``."""
    total = count = 0.0
    cfg = model.config
    for start in range(0, len(studies), chunk):
        part = studies[start:start + chunk]
        tokens = pad_batch([encode(s.report, vocab, cfg.max_len) for s in part])
        n = float((tokens[:, 1:] != 0).sum())
        total += model.token_nll(np.stack([s.image for s in part]), tokens) * n
        count += n
    return total / count


@dataclass
class TrainResult:
    model: ReportGenModel
    vocab: Vocabulary
    log: list[dict] = field(default_factory=list)
    best_val_bleu4: float | None = None
    best_epoch: int | None = None
    best_path: Path | None = None
    last_path: Path | None = None
    best_snapshot: "ckpt_io.Checkpoint | None" = None


def train(config: RunConfig, studies: Sequence[SyntheticStudy] | None = None, manifest: str | Path | None = None,
          out_dir: str | Path | None = None, log_every: int = 0) -> TrainResult:
    """Train on the ``train`` split, select on validation BLEU-4, freeze the knowledge base.

    With ``out_dir`` set, writes ``train_log.jsonl``, ``best.ckpt`` (best
    validation BLEU-4) and ``last.ckpt``; both checkpoints hold a frozen KB.
    """
    if studies is None:
        if manifest is None:
            raise ContractError("train needs either studies or a manifest path")
        studies = read_manifest(manifest)
    parts = split_studies(studies)
    train_set, val_set = parts["train"], parts["val"]
    if len(train_set) < 2:
        raise ContractError(f"need at least two training studies, got {len(train_set)}")

    vocab = build_vocab([s.report for s in train_set], config.min_freq)
    encoded = [encode(s.report, vocab, config.max_len) for s in train_set]
    model = ReportGenModel(config, len(vocab))
    opt = make_optimizer(model, config)
    rng = np.random.default_rng([config.seed, 1])
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(model, vocab)
    best_snapshot = None

    step = 0
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            anchors = order[start:start + config.batch_size]
            negatives = [sample_negative(train_set, int(i), rng)[0] for i in anchors]
            batch = make_batch(train_set, encoded, anchors, negatives)
            losses, new_M = model.loss(batch)
            if not math.isfinite(losses.total):
                raise NumericError(f"non-finite loss {losses.total} at step {step + 1} (epoch {epoch})")
            opt.zero_grad()
            losses.graph.backward()
            opt.step()
            model.commit_kb(new_M)
            step += 1
            rec = {"kind": "step", "step": step, "epoch": epoch, **losses.as_dict()}
            result.log.append(rec)
            if log_every and step % log_every == 0:
                logger.info("step %d epoch %d loss %.4f (tt %.4f vt %.4f vl %.4f)", step, epoch,
                            losses.total, losses.l_tt, losses.l_vt, losses.l_vl)
            if config.max_steps and step >= config.max_steps:
                break

        if config.validate and val_set:
            ev, _ = evaluate_studies(model, vocab, val_set)
            bleu4 = ev.scores["bleu4"]
            result.log.append({"kind": "epoch", "step": step, "epoch": epoch, "val_bleu4": bleu4})
            logger.info("epoch %d val BLEU-4 %.4f", epoch, bleu4)
            if result.best_val_bleu4 is None or bleu4 > result.best_val_bleu4:
                result.best_val_bleu4, result.best_epoch = bleu4, epoch
                best_snapshot = ckpt_io.snapshot(model, vocab, opt, step, epoch, frozen=True,
                                                 extra={"val_bleu4": bleu4})
        if config.max_steps and step >= config.max_steps:
            break

    if model.kb is not None:
        model.kb.freeze()
    last = ckpt_io.snapshot(model, vocab, opt, step, epoch if config.epochs else 0, frozen=True)
    if best_snapshot is None:
        best_snapshot = last

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "train_log.jsonl").open("w") as fh:
            for rec in result.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        result.best_path = ckpt_io.save(best_snapshot, out / "best.ckpt")
        result.last_path = ckpt_io.save(last, out / "last.ckpt")
    result.best_snapshot = best_snapshot
    return result


def load_best(result: TrainResult) -> tuple[ReportGenModel, Vocabulary]:
    """Model restored from the best-validation snapshot of a finished run."""
    return ckpt_io.build_model(result.best_snapshot)
