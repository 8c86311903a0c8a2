import numpy as np
import pytest
from hypothesis import strategies as st

from cavitytomo.fock import FieldState


def random_state(rng, dim, rank=None, scale=1.0):
    """Random density matrix; ``scale`` < 1 concentrates weight on low levels."""
    rank = dim if rank is None else rank
    z = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    z *= (scale ** np.arange(dim))[:, None]
    m = z @ z.conj().T
    return FieldState(m / np.trace(m).real)


def random_hermitian(rng, dim):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (z + z.conj().T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
amplitudes = st.builds(
    complex,
    st.floats(-1.2, 1.2, allow_nan=False),
    st.floats(-1.2, 1.2, allow_nan=False),
)


# acceptance verdicts, echoed in the terminal summary so they survive output capture
ACCEPTANCE: list[str] = []


def record_verdict(criterion: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
