import numpy as np
import pytest

from d2oc.density import HorizonData
from d2oc.lti import LtiModel

# (criterion, passed, detail) rows filled by the acceptance tests
ACCEPTANCE_LINES = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    line = f"{name} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


def random_instance(rng, n, m, T, spectral_radius=None, d=1):
    """Random (model, horizon data, x0) with PSD penalty sequence."""
    A = rng.standard_normal((n, n))
    if spectral_radius is not None:
        A *= spectral_radius / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    C = np.eye(n)[: min(d, n)]
    model = LtiModel(A, B, C)
    Qbars, refs = [], []
    for _ in range(T):
        M = rng.standard_normal((n, n))
        Qbars.append(M @ M.T / n)
        refs.append(rng.standard_normal(n))
    M = rng.standard_normal((m, m))
    R = M @ M.T + 0.5 * np.eye(m)
    hd = HorizonData(np.zeros((n, n)), R, Qbars, refs)
    return model, hd, rng.standard_normal(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
