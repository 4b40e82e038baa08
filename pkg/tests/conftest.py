import numpy as np
import pytest

from simce_rec import build_dataset, synthetic_block_pairs
from simce_rec.kernels import available_backends


@pytest.fixture(scope="session")
def small_ds():
    pairs = synthetic_block_pairs(num_users=60, num_items=40, per_user=12, num_blocks=4, seed=3)
    return build_dataset(pairs, seed=3)


@pytest.fixture(scope="session")
def block_ds():
    """20 users x 20 items, four 5x5 blocks; every user likes exactly its block."""
    pairs = [(u, (u // 5) * 5 + k) for u in range(20) for k in range(5)]
    return build_dataset(pairs, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    return available_backends()[request.param]


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Append one acceptance line; printed together at the end of the session."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def _record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
