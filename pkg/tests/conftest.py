import pytest

from crossdys.experiment import ExperimentConfig
from crossdys.synth import write_corpus

from oracles import ACCEPTANCE_LINES

FAST_EXP = ExperimentConfig(rounds_grid=[5, 10], selection_rounds=5, max_depth=2)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small synthetic 3-language corpus: 6 speakers and 5 sentences per language."""
    root = tmp_path_factory.mktemp("corpus")
    manifests = write_corpus(root, speakers_per_class=2, sentences=5, seed=11)
    configs = [root / f"config_{lang}.json" for lang in manifests]
    return root, list(manifests.values()), configs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
