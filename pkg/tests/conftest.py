import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_parents(rng, n, root_prob=0.1):
    """Parent array with parent[i] < i (or -1): a random planar forest in id order."""
    parent = np.full(n, -1, np.int64)
    for i in range(1, n):
        if rng.random() >= root_prob:
            parent[i] = rng.integers(0, i)
    return parent


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as one line each at the end of the session
VERDICTS = {}


@pytest.fixture
def criterion(request):
    seen = []

    def record(number, ok, detail, label=""):
        key = (number, label)
        VERDICTS[key] = (bool(ok), detail)
        seen.append(key)
        return bool(ok)

    yield record
    if not seen:
        VERDICTS[(request.node.name, "")] = (False, "raised before reaching a verdict")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, label), (ok, detail) in sorted(VERDICTS.items(), key=lambda kv: str(kv[0][0]).zfill(3) + kv[0][1]):
        name = f"criterion {number}" + (f" [{label}]" if label else "")
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
