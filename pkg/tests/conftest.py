import numpy as np
import pytest

from matdnn.cli.synth import SyntheticLanguageSpec, gen_synth
from matdnn.frontend import cmvn


@pytest.fixture(scope="session")
def synth():
    """The 3-word, 6-phone, 50-utterance, 2-speaker corpus."""
    return gen_synth(SyntheticLanguageSpec(), 50, seed=0)


@pytest.fixture(scope="session")
def synth_norm(synth):
    return {u: cmvn(s).frames for u, s in synth.features.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines.items()):
            terminalreporter.write_line(line)
