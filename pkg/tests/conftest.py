import numpy as np
import pytest

from cpdp import kinematics as kin

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def arm() -> kin.KinematicChain:
    return kin.default_chain()


def random_poses(chain: kin.KinematicChain, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(chain.angle_lb, chain.angle_ub, size=(n, chain.p_n))


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(num: int, ok: bool, detail: str) -> None:
        line = f"[criterion {num}] {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
