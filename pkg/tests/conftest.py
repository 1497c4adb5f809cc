import numpy as np
import pytest

from fourfield.system import MixedState


def scaled_random_state(spaces, amplitude, rng):
    """Random coefficients rescaled so each field peaks at ``amplitude``.

    Piola-mapped coefficients scale with the mesh size, so raw random
    vectors can produce wildly different physical magnitudes per field.
    The displacement is scaled by its gradient, which is what enters F.
    """
    raw = MixedState.from_vector(spaces, rng.standard_normal(sum(spaces.dims)))
    _, gradU, K, P, p = spaces.cells.fields(raw)
    peaks = [np.abs(a).max() for a in (gradU, K, P, p)]
    return MixedState(spaces, *(getattr(raw, f) * amplitude / m for f, m in zip("UKPp", peaks)))


@pytest.fixture
def random_state():
    return scaled_random_state


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def record_criterion(request):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""
    lines = request.config.stash[ACCEPTANCE]

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
