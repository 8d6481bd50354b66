import numpy as np
import pytest

from dualrs import scenes, synthesize_dual, synthesize_gt

ACCEPTANCE = []


def record(criterion: int, ok: bool, detail: str):
    """Log one acceptance line; shown inline and again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE.append((criterion, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    """96x96 texture translating at 2 px per frame readout."""
    stack, cfg = scenes.constant_velocity_scene((96, 96), (2.0, 0.0), seed=3)
    return stack, cfg, synthesize_dual(stack, cfg), synthesize_gt(stack, cfg, 5)


@pytest.fixture(scope="session")
def oracle_scene():
    """The 256x256 constant-velocity scene used by the end-to-end checks."""
    stack, cfg = scenes.constant_velocity_scene((256, 256), (2.0, 0.0), seed=0)
    return stack, cfg, synthesize_dual(stack, cfg), synthesize_gt(stack, cfg, 5)
