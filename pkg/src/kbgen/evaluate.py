"""Checkpoint evaluation: results file plus a per-example table."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import checkpoint as ckpt_io
from .data import keyword_labeler, read_manifest, tokenize
from .errors import ContractError, FrozenError
from .metrics import CorpusEval, evaluate_corpus
from .train import generate_reports


def evaluate_checkpoint(checkpoint: str | Path, manifest: str | Path, split: str = "test",
                        out_dir: str | Path | None = None, self_test: bool = False,
                        average: str = "micro", beam: int | None = None) -> CorpusEval:
    """Generate for every study in ``split`` and score against the references.

    ``self_test`` scores the references against themselves, which must give
    BLEU-4 = 1 and CE = 1. Refuses checkpoints whose knowledge base is not frozen.
    """
    ckpt = ckpt_io.load(checkpoint)
    if not ckpt.kb_frozen:
        raise FrozenError(f"{checkpoint}: knowledge base is not frozen; inference requires a fixed knowledge base")
    studies = [s for s in read_manifest(manifest) if s.split == split]
    if not studies:
        raise ContractError(f"{manifest}: no studies in split {split!r}")
    refs = [s.report for s in studies]

    if self_test:
        generated = list(refs)
    else:
        model, vocab = ckpt_io.build_model(ckpt)
        before = model.kb.checksum() if model.kb is not None else None
        generated = generate_reports(model, vocab, studies, beam=beam)
        if model.kb is not None and model.kb.checksum() != before:
            raise FrozenError("knowledge base changed during evaluation")

    result = evaluate_corpus(generated, refs, tokenize, keyword_labeler, average)
    if out_dir is not None:
        write_results(result, studies, generated, Path(out_dir), split)
    return result


def write_results(result: CorpusEval, studies, generated, out_dir: Path, split: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / f"results_{split}.jsonl").open("w") as fh:
        for name, value in result.scores.items():
            fh.write(json.dumps({"metric": name, "value": value}) + "\n")
        for flag in result.flags:
            fh.write(json.dumps({"flag": flag}) + "\n")
    with (out_dir / f"examples_{split}.tsv").open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["study_id", "bleu4", "rouge_l", "cider", "generated", "reference"])
        per = result.per_example
        for i, s in enumerate(studies):
            w.writerow([s.study_id, repr(per["bleu4"][i]), repr(per["rouge_l"][i]), repr(per["cider"][i]),
                        generated[i], s.report])
