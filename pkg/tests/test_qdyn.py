import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindcal.errors import ConfigurationError, DomainError
from lindcal.qdyn import (
    HBAR,
    K_B,
    CouplingMatrix,
    DensityMatrix,
    FrequencyVector,
    HamiltonianSpec,
    NoiseSpec,
    build_hamiltonian,
    lindblad_rhs,
    thermal_photon_number,
)

from conftest import COLD, J01, TEMP_0, W0, W1, pauli_kron

I = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0 + 0j, -1.0])


def random_rho(rng, n):
    d = 2**n
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = a @ a.conj().T
    return r / np.trace(r)


# -- Hamiltonian ---------------------------------------------------------------


def test_single_qubit_z_hamiltonian():
    h = build_hamiltonian(HamiltonianSpec.simple([2.0]))
    assert np.allclose(h, np.diag([1.0, -1.0]), atol=1e-15)


def test_single_qubit_x_hamiltonian():
    h = build_hamiltonian(HamiltonianSpec((FrequencyVector(3.0, 0, 0),), (), "general"))
    assert np.allclose(h, 1.5 * X, atol=1e-15)
    assert np.allclose(h.imag, 0)


def test_two_qubit_flip_flop_against_kronecker_oracle():
    h = build_hamiltonian(HamiltonianSpec.simple([W0, W1], [J01]))
    oracle = (
        0.5 * W0 * pauli_kron(Z, I)
        + 0.5 * W1 * pauli_kron(I, Z)
        + 0.5 * J01 * (pauli_kron(X, X) + pauli_kron(Y, Y))
    )
    assert np.allclose(h, oracle, atol=1e-12)
    # |01> is index 1, |10> is index 2
    assert h[2, 1] == pytest.approx(J01)
    assert np.max(np.abs(h - h.conj().T)) <= 1e-12


def test_general_coupling_matrix_entries():
    j = np.arange(9, dtype=float).reshape(3, 3) / 10
    spec = HamiltonianSpec((FrequencyVector(wz=1.0), FrequencyVector(wz=2.0)), (CouplingMatrix(j),), "general")
    paulis = (X, Y, Z)
    oracle = 0.5 * pauli_kron(Z, I) + 1.0 * pauli_kron(I, Z)
    for a in range(3):
        for b in range(3):
            oracle = oracle + j[a, b] * pauli_kron(paulis[a], paulis[b])
    assert np.allclose(build_hamiltonian(spec), oracle, atol=1e-12)


def test_three_qubit_chain_couples_neighbours_only():
    h = build_hamiltonian(HamiltonianSpec.simple([1.0, 2.0, 3.0], [0.3, 0.4]))
    idx = {b: i for i, b in enumerate(["000", "001", "010", "011", "100", "101", "110", "111"])}
    assert h[idx["100"], idx["010"]] == pytest.approx(0.3)
    assert h[idx["010"], idx["001"]] == pytest.approx(0.4)
    assert h[idx["100"], idx["001"]] == 0


def test_simple_and_general_modes_agree():
    s = HamiltonianSpec.simple([W0, W1], [J01])
    assert np.array_equal(build_hamiltonian(s), build_hamiltonian(s.as_general()))


def test_flip_flop_matrix_entries():
    c = CouplingMatrix.flip_flop(2.0)
    assert np.allclose(c.j, np.diag([1.0, 1.0, 0.0]))
    assert c.is_flip_flop and c.flip_flop_amplitude == 2.0


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        HamiltonianSpec.simple([1.0, 2.0], [])
    with pytest.raises(ConfigurationError):
        HamiltonianSpec((FrequencyVector(1.0, 0, 1.0),), (), "simple")
    with pytest.raises(ConfigurationError):
        FrequencyVector(0, 0, math.nan)
    with pytest.raises(ConfigurationError):
        NoiseSpec((-0.1,), (0.05,))
    with pytest.raises(ConfigurationError):
        NoiseSpec((0.1,), (0.0,))


# -- photon number -------------------------------------------------------------


def test_photon_number_reference_value():
    n = thermal_photon_number(W0, TEMP_0)
    x = HBAR * W0 * 1e6 / (K_B * TEMP_0)
    assert n == pytest.approx(1 / math.expm1(x), rel=1e-12)
    assert n == pytest.approx(6.76e-3, abs=5e-6)


def test_photon_number_ln2_gives_one():
    t = HBAR * W0 * 1e6 / (K_B * math.log(2))
    assert thermal_photon_number(W0, t) == pytest.approx(1.0, rel=1e-12)


def test_photon_number_cold_limit_and_clamp():
    assert thermal_photon_number(W0, COLD) == 0.0
    assert thermal_photon_number(W0, 1e-4) < 1e-100
    with pytest.raises(DomainError):
        thermal_photon_number(W0, 0.0)
    with pytest.raises(DomainError):
        thermal_photon_number(-1.0, 0.05)


@given(st.floats(1e2, 1e5), st.floats(5e-3, 5.0))
def test_photon_number_inverse_identity(w, t):
    x = HBAR * w * 1e6 / (K_B * t)
    n = thermal_photon_number(w, t)
    assert n * math.expm1(x) == pytest.approx(1.0, abs=1e-10)


@given(st.floats(1e3, 4e4), st.floats(1e-3, 1.0), st.floats(1.01, 3.0))
def test_photon_number_monotone_in_temperature(w, t, f):
    assert thermal_photon_number(w, t * f) >= thermal_photon_number(w, t)


def test_from_t1_round_trip():
    noise = NoiseSpec.from_t1([100.24], [TEMP_0], [W0])
    assert noise.t1([W0])[0] == pytest.approx(100.24, rel=1e-12)


# -- density matrices -----------------------------------------------------------


def test_density_matrix_validation():
    with pytest.raises(DomainError):
        DensityMatrix(np.diag([0.7, 0.7]))
    with pytest.raises(DomainError):
        DensityMatrix(np.array([[0.5, 0.5j], [0.1, 0.5]]))
    rho = DensityMatrix.from_bitstring("10")
    assert rho.populations()[2] == 1
    assert DensityMatrix.maximally_mixed(2).min_eigenvalue() == pytest.approx(0.25)


# -- Lindbladian ---------------------------------------------------------------


def test_rhs_vanishes_on_maximally_mixed_without_noise():
    h = HamiltonianSpec.simple([W0, W1], [J01])
    rhs = lindblad_rhs(DensityMatrix.maximally_mixed(2), h, NoiseSpec((0.0, 0.0), (0.05, 0.05)))
    assert np.max(np.abs(rhs)) < 1e-12


def test_rhs_amplitude_damping_action():
    g = 0.01
    rhs = lindblad_rhs(DensityMatrix.from_bitstring("1"), HamiltonianSpec.simple([W0]), NoiseSpec((g,), (COLD,)))
    assert np.allclose(rhs, np.diag([g, -g]), atol=1e-15)


def test_rhs_thermal_fixed_point():
    g = 0.01
    noise = NoiseSpec((g,), (TEMP_0,))
    n = thermal_photon_number(W0, TEMP_0)
    p1 = n / (2 * n + 1)
    rho = DensityMatrix(np.diag([1 - p1, p1]))
    assert np.max(np.abs(lindblad_rhs(rho, HamiltonianSpec.simple([W0]), noise))) < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_rhs_trace_and_hermiticity(n, seed):
    rng = np.random.default_rng(seed)
    freqs = tuple(FrequencyVector(*rng.normal(size=3)) for _ in range(n))
    couplings = tuple(CouplingMatrix(rng.normal(size=(3, 3))) for _ in range(n - 1))
    h = HamiltonianSpec(freqs, couplings, "general")
    noise = NoiseSpec(tuple(rng.uniform(0, 1, n)), tuple(rng.uniform(1e-5, 1e-4, n)))
    rho = random_rho(rng, n)
    out = lindblad_rhs(rho, h, noise)
    assert abs(np.trace(out)) <= 1e-12
    assert np.max(np.abs(out - out.conj().T)) <= 1e-12
    # general (non-Hermitian) argument: L(A)^dagger == L(A^dagger)
    a = rng.normal(size=rho.shape) + 1j * rng.normal(size=rho.shape)
    assert np.max(np.abs(lindblad_rhs(a, h, noise).conj().T - lindblad_rhs(a.conj().T, h, noise))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_rhs_unitary_limit(n, seed):
    rng = np.random.default_rng(seed)
    h = HamiltonianSpec.simple(list(rng.uniform(0.1, 2, n)), list(rng.uniform(0, 0.5, n - 1)))
    rho = random_rho(rng, n)
    hm = build_hamiltonian(h)
    out = lindblad_rhs(rho, h, NoiseSpec((0.0,) * n, (0.05,) * n))
    assert np.max(np.abs(out - (-1j) * (hm @ rho - rho @ hm))) <= 1e-14
