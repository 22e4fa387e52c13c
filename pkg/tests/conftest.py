import numpy as np
import pytest

from soundsieve.fixtures import generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The bundled synthetic corpus: 60 normal train clips, 20 + 20 test clips."""
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, seed=0)
    return root


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
