import pytest

from vflsim.data import SyntheticSpec, generate_synthetic
from vflsim.rng import stream

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return stream(1234, "tests")


@pytest.fixture(scope="session")
def small_ds():
    """Two-party blobs small enough for per-test training."""
    return generate_synthetic(SyntheticSpec(n=300, n_classes=3, dims=(4, 3), informativeness=(1.0, 1.0),
                                            class_separation=3.0, coarse_parties=(), confound=0.0, seed=5))


@pytest.fixture(scope="session")
def three_party_ds():
    return generate_synthetic(SyntheticSpec(n=200, n_classes=3, dims=(4, 3, 2), informativeness=(1.0, 0.5, 0.5),
                                            class_separation=3.0, coarse_parties=(), confound=0.0, seed=6))

