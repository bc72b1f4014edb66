import numpy as np
import pytest

from kbgen.config import TINY, RunConfig
from kbgen.data import generate_corpus

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus_500():
    return generate_corpus(0, 500)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(3, 40)


@pytest.fixture
def tiny_config():
    return RunConfig(**TINY)


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion; printed at session end."""
    def record(criterion: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


QUICK = dict(TINY, d_model=16, kb_size=4, conv_channels=(2, 4, 4), epochs=2, batch_size=8, min_freq=1)


@pytest.fixture(scope="session")
def quick_config():
    return RunConfig(**QUICK)


@pytest.fixture(scope="session")
def quick_run(tmp_path_factory, small_corpus, quick_config):
    """A two-epoch run on the small corpus, written to disk."""
    from kbgen.data import write_manifest
    from kbgen.train import train

    root = tmp_path_factory.mktemp("quick")
    manifest = write_manifest(small_corpus, root / "data")
    result = train(quick_config, studies=small_corpus, out_dir=root / "run")
    return result, manifest, root
