import numpy as np
import pytest

from stgfn import tensor as T
from stgfn.data import SyntheticSpec, generate_synthetic, stratified_split
from stgfn.training import TrainConfig


@pytest.fixture(autouse=True)
def fresh_tape():
    T.new_tape()
    yield
    T.new_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticSpec(n=60, seed=3, min_turns=2, max_turns=6)).instances


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return stratified_split(small_corpus, (0.6, 0.2, 0.2), seed=0)


@pytest.fixture
def tiny_config():
    return TrainConfig(
        batch_size=8, lr=1e-3, max_epochs=3, d_txt=8, d_hidden=8, seq_len=6, seeds=(42,)
    )


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES[criterion] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (len(k), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
