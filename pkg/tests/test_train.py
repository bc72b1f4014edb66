import json

import numpy as np
import pytest

from kbgen import checkpoint as ckpt_io
from kbgen.errors import ContractError, FrozenError, NumericError
from kbgen.model import ReportGenModel
from kbgen.tensor import Tensor
from kbgen.train import load_best, make_optimizer, split_studies, token_cross_entropy, train


def test_end_to_end_determinism(quick_run, small_corpus, quick_config, tmp_path):
    result, _, root = quick_run
    train(quick_config, studies=small_corpus, out_dir=tmp_path)
    for name in ("train_log.jsonl", "best.ckpt", "last.ckpt"):
        assert (tmp_path / name).read_bytes() == (root / "run" / name).read_bytes(), name


def test_seed_changes_the_run(quick_config, small_corpus):
    a = train(quick_config.replace(max_steps=2), studies=small_corpus)
    b = train(quick_config.replace(max_steps=2, seed=1), studies=small_corpus)
    assert a.log[0]["total"] != b.log[0]["total"]


def test_parameter_groups_get_configured_rates(small_corpus):
    from kbgen.config import RunConfig
    cfg = RunConfig(d_model=16, n_heads=2, attn_heads=2, kb_size=4, enc_layers=1, dec_layers=1,
                    conv_channels=(2, 2, 2), lr_visual=3e-4, lr_other=7e-4, weight_decay=1e-4)
    model = ReportGenModel(cfg, 20)
    opt = make_optimizer(model, cfg)
    assert (opt.states["visual"].lr, opt.states["visual"].weight_decay) == (3e-4, 0.0)
    assert (opt.states["other"].lr, opt.states["other"].weight_decay) == (7e-4, 1e-4)
    visual = {id(p) for p in opt.groups["visual"]}
    assert visual == {id(p) for p in model.visual.parameters()}
    everything = {id(p) for p in model.parameters()}
    assert visual | {id(p) for p in opt.groups["other"]} == everything
    assert not visual & {id(p) for p in opt.groups["other"]}


def test_saved_optimizer_rates(quick_run, quick_config):
    result, _, _ = quick_run
    ckpt = ckpt_io.load(result.last_path)
    assert ckpt.optimizer["visual"]["lr"] == quick_config.lr_visual
    assert ckpt.optimizer["other"]["lr"] == quick_config.lr_other


def test_first_adam_step_moves_by_learning_rate(quick_config, small_corpus):
    # with bias correction the first Adam update has magnitude lr wherever the gradient is not tiny
    cfg = quick_config.replace(max_steps=1, weight_decay=0.0, lambdas=(1.0, 0.0, 0.0), validate=False)
    result = train(cfg, studies=small_corpus)
    fresh = ReportGenModel(cfg, len(result.vocab))
    for group, lr in (("visual", cfg.lr_visual), ("other", cfg.lr_other)):
        named = dict(fresh.param_groups()[group])
        moved = dict(result.model.param_groups()[group])
        steps = np.concatenate([np.abs(moved[k].data - named[k].data).ravel() for k in named])
        assert steps.max() <= lr * (1 + 1e-6)
        assert np.isclose(steps, lr, rtol=1e-3).any()


def test_best_checkpoint_is_max_validation_bleu(quick_run):
    result, _, root = quick_run
    epochs = [json.loads(line) for line in (root / "run" / "train_log.jsonl").read_text().splitlines()]
    scores = [r["val_bleu4"] for r in epochs if r["kind"] == "epoch"]
    assert len(scores) == 2
    best = ckpt_io.load(result.best_path)
    assert best.extra["val_bleu4"] == max(scores) == result.best_val_bleu4
    assert best.kb_frozen


def test_kb_frozen_after_training(quick_run, small_corpus):
    result, _, _ = quick_run
    model, _ = load_best(result)
    assert model.kb.frozen
    before = model.kb.checksum()
    model.generate(np.stack([s.image for s in small_corpus[:3]]))
    assert model.kb.checksum() == before
    with pytest.raises(FrozenError):
        model.commit_kb(Tensor(model.kb.M))


def test_max_steps_and_log_records(quick_config, small_corpus):
    result = train(quick_config.replace(max_steps=3), studies=small_corpus)
    steps = [r for r in result.log if r["kind"] == "step"]
    assert [r["step"] for r in steps] == [1, 2, 3]
    assert all(set(r) >= {"l_tt", "l_vt", "l_vl", "total"} for r in steps)


def test_non_finite_loss_aborts_with_step(quick_config, small_corpus, monkeypatch):
    real = ReportGenModel.loss

    def poisoned(self, batch):
        losses, M = real(self, batch)
        losses.total = float("nan")
        return losses, M

    monkeypatch.setattr(ReportGenModel, "loss", poisoned)
    with pytest.raises(NumericError, match="step 1"):
        train(quick_config, studies=small_corpus)


def test_needs_two_training_studies(quick_config, small_corpus):
    one = [s for s in small_corpus if s.split == "train"][:1]
    with pytest.raises(ContractError):
        train(quick_config, studies=one)
    with pytest.raises(ContractError):
        train(quick_config)


def test_no_kb_run(quick_config, small_corpus):
    result = train(quick_config.replace(kb_size=0, max_steps=2), studies=small_corpus)
    assert result.model.kb is None
    assert np.isfinite(token_cross_entropy(result.model, result.vocab, split_studies(small_corpus)["val"]))
