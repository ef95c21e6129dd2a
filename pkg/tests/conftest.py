import math

import numpy as np
import pytest

from lindcal.qdyn import HamiltonianSpec, NoiseSpec

# Reference device values (rad/us, us, K).
W0, W1, W2 = 31420.0, 30470.0, 30050.0
T1_0, T1_1, T1_2 = 100.24, 106.95, 101.45
TEMP_0, TEMP_1, TEMP_2 = 47.96e-3, 54.20e-3, 50.30e-3
J01, J12 = 8.31, 7.42
COLD = 1e-6  # K; photon number underflows to exactly 0


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running fits")


@pytest.fixture
def one_qubit():
    h = HamiltonianSpec.simple([W0])
    return h, NoiseSpec.from_t1([T1_0], [TEMP_0], h.omega_norms())


@pytest.fixture
def two_qubit():
    h = HamiltonianSpec.simple([W0, W1], [J01])
    return h, NoiseSpec.from_t1([T1_0, T1_1], [TEMP_0, TEMP_1], h.omega_norms())


def rel(a, b):
    return abs(a - b) / abs(b)


def pauli_kron(*ops):
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


# -- acceptance reporting ------------------------------------------------------------

_ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


@pytest.fixture
def acceptance():
    """Record a criterion outcome and fail the test when it does not hold."""

    def check(criterion: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        print(f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"{criterion}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[2:])):
        results = _ACCEPTANCE[key]
        ok = all(r[0] for r in results)
        details = "; ".join(d for _, d in results)
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {details}")
