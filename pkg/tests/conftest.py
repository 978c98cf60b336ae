import numpy as np
import pytest

from sclab.potentials import double_bump, free, gauss_well_damping

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def bump():
    return double_bump(amp=2.0, sep=2.0, width=1.0)


@pytest.fixture(scope="session")
def damped_bump():
    return double_bump(amp=2.0, sep=2.0, width=1.0,
                       v2_terms=gauss_well_damping(0.8))


@pytest.fixture(scope="session")
def free_1d():
    return free(1)


@pytest.fixture(scope="session")
def free_2d():
    return free(2)


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line per acceptance criterion."""

    def record(num: int, title: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((num, title, bool(ok), detail))
        assert ok, f"criterion {num} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num, title, ok, detail in sorted(_ACCEPTANCE):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {num:2d} [{status}] {title}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)


def fd_gradient(fn, x, eps=1e-6):
    """Central-difference gradient of a scalar field at points (m, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    for j in range(x.shape[1]):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += eps
        xm[:, j] -= eps
        out[:, j] = (fn(xp) - fn(xm)) / (2.0 * eps)
    return out
