import json

import numpy as np
import pytest

from kbgen import checkpoint as ckpt_io
from kbgen.cli import main
from kbgen.data import N_LABELS, save_image

from conftest import QUICK


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("KBGEN_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "quick.json"
    path.write_text(json.dumps(QUICK))
    return path


def test_synth_twice_gives_identical_manifests(out_root, capsys):
    assert main(["synth", "--seed", "7", "--n", "500", "--out", "a"]) == 0
    assert "350/50/100" in capsys.readouterr().out
    assert main(["synth", "--seed", "7", "--n", "500", "--out", "b"]) == 0
    assert (out_root / "a" / "manifest.jsonl").read_bytes() == (out_root / "b" / "manifest.jsonl").read_bytes()
    img = sorted((out_root / "a" / "images").iterdir())[17].name
    assert (out_root / "a" / "images" / img).read_bytes() == (out_root / "b" / "images" / img).read_bytes()


def test_synth_single_study_is_an_error(out_root, capsys):
    assert main(["synth", "--n", "1", "--out", "one"]) == 2
    assert "at least 2" in capsys.readouterr().err


def test_train_evaluate_generate(out_root, config_file, quick_run, capsys):
    _, manifest, _ = quick_run
    assert main(["train", str(manifest), "--config", str(config_file), "--set", "epochs=1", "--out", "t"]) == 0
    ckpt = out_root / "t" / "best.ckpt"
    assert ckpt.exists() and ckpt_io.load(ckpt).config.epochs == 1
    capsys.readouterr()

    assert main(["evaluate", str(ckpt), str(manifest), "--out", "e1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("bleu1\t")
    assert main(["evaluate", str(ckpt), str(manifest), "--out", "e2"]) == 0
    for name in ("results_test.jsonl", "examples_test.tsv"):
        assert (out_root / "e1" / name).read_bytes() == (out_root / "e2" / name).read_bytes()

    image = manifest.parent / "images" / "000000.pgm"
    assert main(["generate", str(ckpt), str(image), "--labels", "--logprobs"]) == 0
    out = capsys.readouterr().out.splitlines()
    label_lines = out[-N_LABELS:]
    assert all(0.0 <= float(line.split("\t")[1]) <= 1.0 for line in label_lines)
    assert label_lines[-1].startswith("support device")


def test_evaluate_self_test_scores_one(out_root, quick_run, capsys):
    result, manifest, _ = quick_run
    assert main(["evaluate", str(result.best_path), str(manifest), "--self-test", "--out", "self"]) == 0
    scores = {}
    for line in (out_root / "self" / "results_test.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if "metric" in rec:
            scores[rec["metric"]] = rec["value"]
    assert scores["bleu4"] == 1.0 and scores["ce_f1"] == 1.0 and scores["ce_accuracy"] == 1.0


def test_evaluate_refuses_unfrozen_checkpoint(tmp_path, quick_run, capsys):
    result, manifest, _ = quick_run
    ckpt = ckpt_io.load(result.best_path)
    ckpt.kb_frozen = False
    path = ckpt_io.save(ckpt, tmp_path / "thawed.ckpt")
    assert main(["evaluate", str(path), str(manifest)]) == 2
    assert "not frozen" in capsys.readouterr().err


def test_generate_wrong_size_image(tmp_path, quick_run, capsys):
    result, _, _ = quick_run
    path = tmp_path / "big.pgm"
    save_image(path, np.full((40, 40), 0.1))
    assert main(["generate", str(result.best_path), str(path)]) == 2
    assert main(["generate", str(result.best_path), str(path), "--resize"]) == 0


def test_bad_override_is_reported(quick_run, capsys):
    _, manifest, _ = quick_run
    assert main(["train", str(manifest), "--set", "no_such_field=3"]) == 2
    assert main(["train", str(manifest), "--set", "kb_size=-1"]) == 2


def test_gradcheck_command(capsys, monkeypatch):
    import kbgen.gradsuite as gs
    monkeypatch.setattr(gs, "CASES", {k: gs.CASES[k] for k in ("matmul", "softmax")})
    assert main(["gradcheck", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS\tmatmul" in out and "over 2 seeds" in out


def test_ablate_command(out_root, config_file, quick_run, capsys):
    _, manifest, _ = quick_run
    argv = ["ablate", str(manifest), "--config", str(config_file), "--set", "max_steps=1", "--set", "epochs=1",
            "--arm", "full", "--arm", "no_kb", "kb_size=0", "--seeds", "0", "1", "--split", "val", "--out", "abl"]
    assert main(argv) == 0
    table = (out_root / "abl" / "summary.md").read_text()
    assert "full" in table and "no_kb" in table
    runs = [json.loads(line) for line in (out_root / "abl" / "runs.jsonl").read_text().splitlines()]
    assert len(runs) == 4
