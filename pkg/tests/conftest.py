import numpy as np
import pytest

from bsdep_lab.noise import MarkSpace, TimeGrid, sample_ensemble


@pytest.fixture(scope="session")
def grid50():
    return TimeGrid(1.0, 50)


@pytest.fixture(scope="session")
def no_marks():
    return MarkSpace()


@pytest.fixture(scope="session")
def one_mark():
    return MarkSpace.from_pairs([(1.0, 1.0)])


@pytest.fixture(scope="session")
def diffusion_ens(grid50, no_marks):
    return sample_ensemble(grid50, no_marks, 1, 10_000, 2024)


@pytest.fixture(scope="session")
def jump_ens(grid50, one_mark):
    return sample_ensemble(grid50, one_mark, 1, 10_000, 2025)


@pytest.fixture(scope="session")
def small_jump_ens(grid50, one_mark):
    return sample_ensemble(grid50, one_mark, 1, 2_000, 17)


def within_se(values, target, n_se=3.0):
    v = np.asarray(values, dtype=float)
    se = v.std() / np.sqrt(v.size)
    return abs(v.mean() - target) <= n_se * se, v.mean(), se


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one verdict line per acceptance criterion; returns the verdict."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        lines[n] = f"CRITERION {n:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
