"""Command-line entry point: synth, train, evaluate, generate, gradcheck, ablate."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .ablation import DEFAULT_ARMS, format_table, run_ablation, summarize
from .config import RunConfig, apply_overrides, load_config
from .data import LABEL_NAMES, decode, generate_corpus, load_image, read_manifest, write_manifest
from .errors import KBGenError

logger = logging.getLogger("kbgen")

OUTPUT_ROOT_ENV = "KBGEN_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def resolve_out(path: str | None, default: str) -> Path:
    """Relative output paths land under the output root; absolute ones are kept."""
    p = Path(path) if path else Path(default)
    return p if p.is_absolute() else output_root() / p


def _config(args) -> RunConfig:
    return load_config(args.config, args.set or [])


def cmd_synth(args) -> int:
    studies = generate_corpus(args.seed, args.n, grid=args.grid)
    out = resolve_out(args.out, f"corpus_seed{args.seed}_n{args.n}")
    path = write_manifest(studies, out)
    counts = {k: sum(s.split == k for s in studies) for k in ("train", "val", "test")}
    print(f"wrote {len(studies)} studies to {path} (train/val/test = {counts['train']}/{counts['val']}/{counts['test']})")
    return 0


def cmd_train(args) -> int:
    from .train import train

    config = _config(args)
    out = resolve_out(args.out, "train")
    result = train(config, manifest=args.manifest, out_dir=out, log_every=args.log_every)
    best = "n/a" if result.best_val_bleu4 is None else f"{result.best_val_bleu4:.4f} (epoch {result.best_epoch})"
    print(f"best validation BLEU-4: {best}")
    print(f"checkpoints: {result.best_path} {result.last_path}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluate import evaluate_checkpoint

    out = resolve_out(args.out, "eval")
    result = evaluate_checkpoint(args.checkpoint, args.manifest, split=args.split, out_dir=out,
                                 self_test=args.self_test, average=args.average, beam=args.beam)
    for name, value in result.scores.items():
        print(f"{name}\t{value:.6f}")
    for flag in result.flags:
        print(f"flag\t{flag}")
    return 0


def cmd_generate(args) -> int:
    ckpt = ckpt_io.load(args.checkpoint)
    model, vocab = ckpt_io.build_model(ckpt)
    if model.kb is not None and not model.kb.frozen:
        raise ckpt_io.CheckpointError("checkpoint knowledge base is not frozen; refusing to generate")
    image = load_image(args.image, size=model.config.grid, resize=args.resize)
    result = model.generate(image[None], beam=args.beam)[0]
    print(decode(result.tokens, vocab))
    if args.logprobs:
        for tok, lp in zip(result.tokens, result.log_probs):
            print(f"{vocab.lookup(tok)}\t{lp:.6f}")
    if args.labels:
        probs = model.label_probabilities(image[None])[0]
        for name, p in zip(LABEL_NAMES, probs):
            print(f"{name}\t{p:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results, seconds = run_suite(seeds=args.seeds, h=args.h)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.case] = max(worst.get(r.case, 0.0), r.max_rel_error)
    ok = True
    for case, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}\t{case}\tmax_rel_err={err:.3e}")
    print(f"{len(results)} checks over {args.seeds} seeds in {seconds:.1f}s")
    return 0 if ok else 1


def _parse_arms(raw: list[list[str]] | None) -> dict[str, dict]:
    if not raw:
        return dict(DEFAULT_ARMS)
    arms = {}
    for name, *overrides in raw:
        arms[name] = {k: getattr(apply_overrides(RunConfig(), [f"{k}={v}"]), k)
                      for k, _, v in (o.partition("=") for o in overrides)}
    return arms


def cmd_ablate(args) -> int:
    config = _config(args)
    studies = read_manifest(args.manifest)
    out = resolve_out(args.out, "ablate")
    out.mkdir(parents=True, exist_ok=True)
    records = run_ablation(config, _parse_arms(args.arm), args.seeds, studies, split=args.split,
                           out_path=out / "runs.jsonl")
    table = format_table(summarize(records))
    (out / "summary.md").write_text(table + "\n")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbgen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")

    p = sub.add_parser("synth", help="write a synthetic corpus and manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--out", help=f"output directory (relative paths go under ${OUTPUT_ROOT_ENV})")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("manifest")
    with_config(p)
    p.add_argument("--out")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.add_argument("--self-test", action="store_true", help="score references against themselves")
    p.add_argument("--average", choices=("micro", "macro"), default="micro")
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="write a report for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--resize", action="store_true", help="resize images of the wrong size instead of failing")
    p.add_argument("--logprobs", action="store_true")
    p.add_argument("--labels", action="store_true", help="also print the 14 label probabilities")
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train a grid of arms over several seeds")
    p.add_argument("manifest")
    with_config(p)
    p.add_argument("--arm", action="append", nargs="+", metavar="NAME [KEY=VALUE ...]",
                   help="one arm: a name followed by overrides (repeatable); default: the built-in grid")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KBGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
