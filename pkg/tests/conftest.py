import numpy as np
import pytest
from hypothesis import settings

from slingshot.game import build_biased_rps

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rps():
    return build_biased_rps()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_profile(rng, counts, margin=0.0):
    out = []
    for d in counts:
        x = rng.dirichlet(np.ones(d))
        if margin:
            x = margin / d + (1.0 - margin) * x
            x /= x.sum()
        out.append(x)
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
