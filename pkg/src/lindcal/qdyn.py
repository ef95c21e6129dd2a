"""Quantum data types, Hamiltonians and the GKSL generator.

Internal units: time in microseconds, angular frequency in rad/us.
Basis ordering puts qubit 0 in the most significant (leftmost) position, so
``np.kron(op_q0, op_q1)`` acts on the bitstring ``"q0 q1"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
from scipy import constants

from .errors import ConfigurationError, DomainError

HBAR = constants.hbar
K_B = constants.k
RAD_PER_NS = 1.0e3  # rad/ns -> rad/us
PHOTON_EXPONENT_CLAMP = 700.0

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)
# sigma^- = |0><1| drives |1> -> |0>.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def embed(op: np.ndarray, target: int, n_qubits: int) -> np.ndarray:
    """Lift a single-qubit operator onto ``target`` of an ``n_qubits`` register."""
    factors = [op if q == target else I2 for q in range(n_qubits)]
    return reduce(np.kron, factors)


def bitstrings(n_qubits: int) -> list[str]:
    return [format(i, f"0{n_qubits}b") for i in range(2**n_qubits)]


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace state.

    Inputs within 1e-6 of Hermitian/unit trace are accepted and projected so
    both invariants hold to machine precision; larger defects are rejected.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.entries, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ConfigurationError(f"density matrix must be square, got shape {rho.shape}")
        dim = rho.shape[0]
        if dim < 2 or dim & (dim - 1):
            raise ConfigurationError(f"dimension {dim} is not a power of two")
        if not np.all(np.isfinite(rho)):
            raise DomainError("density matrix has non-finite entries")
        herm = np.max(np.abs(rho - rho.conj().T))
        tr = np.trace(rho)
        if herm > 1e-6 or abs(tr - 1) > 1e-6:
            raise DomainError(f"not a valid state: hermiticity defect {herm:.2e}, trace {tr:.6g}")
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        object.__setattr__(self, "entries", _frozen(rho))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.dim.bit_length() - 1

    @classmethod
    def from_bitstring(cls, bits: str) -> "DensityMatrix":
        dim = 2 ** len(bits)
        rho = np.zeros((dim, dim), dtype=complex)
        idx = int(bits, 2)
        rho[idx, idx] = 1.0
        return cls(rho)

    @classmethod
    def ground(cls, n_qubits: int) -> "DensityMatrix":
        return cls.from_bitstring("0" * n_qubits)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        dim = 2**n_qubits
        return cls(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def from_ket(cls, psi: Sequence[complex]) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def is_positive(self, tol: float = 1e-9) -> bool:
        return self.min_eigenvalue() >= -tol

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.entries)).copy()


@dataclass(frozen=True)
class FrequencyVector:
    """Qubit frequency vector (wx, wy, wz) in rad/us."""

    wx: float = 0.0
    wy: float = 0.0
    wz: float = 0.0

    def __post_init__(self) -> None:
        if not all(np.isfinite([self.wx, self.wy, self.wz])):
            raise ConfigurationError("frequency components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.wx, self.wy, self.wz], dtype=float)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class CouplingMatrix:
    """3x3 real coupling tensor J_ab between sigma_a (left qubit) and sigma_b (right qubit)."""

    j: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self) -> None:
        j = np.asarray(self.j, dtype=float)
        if j.shape != (3, 3):
            raise ConfigurationError(f"coupling matrix must be 3x3, got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ConfigurationError("coupling entries must be finite")
        object.__setattr__(self, "j", _frozen(j))

    @classmethod
    def flip_flop(cls, amplitude: float) -> "CouplingMatrix":
        """Coupling J (s0+ s1- + s0- s1+), i.e. Jxx = Jyy = J/2."""
        return cls(np.diag([amplitude / 2.0, amplitude / 2.0, 0.0]))

    @property
    def is_flip_flop(self) -> bool:
        j = self.j
        off = j.copy()
        off[0, 0] = off[1, 1] = 0.0
        return j[0, 0] == j[1, 1] and not np.any(off)

    @property
    def flip_flop_amplitude(self) -> float:
        return float(2.0 * self.j[0, 0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.j))


@dataclass(frozen=True)
class HamiltonianSpec:
    """Linear-chain Hamiltonian: per-qubit frequency vectors plus nearest-neighbour couplings."""

    freqs: tuple[FrequencyVector, ...]
    couplings: tuple[CouplingMatrix, ...] = ()
    mode: str = "general"

    def __post_init__(self) -> None:
        object.__setattr__(self, "freqs", tuple(self.freqs))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        n = len(self.freqs)
        if n not in (1, 2, 3):
            raise ConfigurationError(f"n_qubits must be 1, 2 or 3, got {n}")
        if len(self.couplings) != n - 1:
            raise ConfigurationError(f"{n} qubits on a chain need {n - 1} couplings, got {len(self.couplings)}")
        if self.mode not in ("simple", "general"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "simple":
            if any(f.wx != 0.0 or f.wy != 0.0 for f in self.freqs):
                raise ConfigurationError("simple mode requires wx = wy = 0")
            if not all(c.is_flip_flop for c in self.couplings):
                raise ConfigurationError("simple mode couplings must be pure flip-flop")

    @classmethod
    def simple(cls, omegas: Sequence[float], couplings: Sequence[float] = ()) -> "HamiltonianSpec":
        """z-only frequencies (rad/us) and scalar flip-flop couplings (rad/us)."""
        return cls(
            tuple(FrequencyVector(wz=float(w)) for w in omegas),
            tuple(CouplingMatrix.flip_flop(float(j)) for j in couplings),
            mode="simple",
        )

    @property
    def n_qubits(self) -> int:
        return len(self.freqs)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def omega_norms(self) -> np.ndarray:
        return np.array([f.norm for f in self.freqs])

    def as_general(self) -> "HamiltonianSpec":
        return HamiltonianSpec(self.freqs, self.couplings, mode="general")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-qubit emission rate gamma (1/us) and effective temperature (K)."""

    gamma: tuple[float, ...]
    temperature: tuple[float, ...]

    def __post_init__(self) -> None:
        g = tuple(float(x) for x in self.gamma)
        t = tuple(float(x) for x in self.temperature)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "temperature", t)
        if len(g) != len(t):
            raise ConfigurationError("gamma and temperature must have one entry per qubit")
        if any(not np.isfinite(x) or x < 0 for x in g):
            raise ConfigurationError(f"gamma must be finite and >= 0, got {g}")
        if any(not np.isfinite(x) or x <= 0 for x in t):
            raise ConfigurationError(f"temperature must be finite and > 0, got {t}")

    @property
    def n_qubits(self) -> int:
        return len(self.gamma)

    @classmethod
    def from_t1(cls, t1_us: Sequence[float], temperature: Sequence[float], omega_norms: Sequence[float]) -> "NoiseSpec":
        """Invert T1 = 1 / (gamma (2<n> + 1)) for each qubit."""
        gammas = []
        for t1, temp, w in zip(t1_us, temperature, omega_norms):
            n = thermal_photon_number(w, temp)
            gammas.append(1.0 / (t1 * (2.0 * n + 1.0)))
        return cls(tuple(gammas), tuple(temperature))

    def photon_numbers(self, omega_norms: Sequence[float]) -> np.ndarray:
        return np.array([thermal_photon_number(w, t) for w, t in zip(omega_norms, self.temperature)])

    def t1(self, omega_norms: Sequence[float]) -> np.ndarray:
        n = self.photon_numbers(omega_norms)
        g = np.asarray(self.gamma)
        with np.errstate(divide="ignore"):
            return 1.0 / (g * (2.0 * n + 1.0))


def thermal_photon_number(omega_norm: float, temperature: float) -> float:
    """Bose-Einstein occupation for angular frequency ``omega_norm`` (rad/us) at ``temperature`` (K).

    Returns 0 when hbar*omega/(k_B T) exceeds 700 instead of overflowing.
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    if not omega_norm > 0:
        raise DomainError(f"frequency norm must be positive, got {omega_norm}")
    x = HBAR * omega_norm * 1.0e6 / (K_B * temperature)
    if x > PHOTON_EXPONENT_CLAMP:
        return 0.0
    return float(1.0 / np.expm1(x))


def build_hamiltonian(spec: HamiltonianSpec) -> np.ndarray:
    """H = sum_i (w_i . sigma_i)/2 + sum_pairs sigma_i J sigma_{i+1}, in rad/us."""
    n = spec.n_qubits
    if len(spec.couplings) != n - 1:
        raise ConfigurationError("coupling count does not match qubit count")
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    for q, f in enumerate(spec.freqs):
        local = 0.5 * (f.wx * SX + f.wy * SY + f.wz * SZ)
        h += embed(local, q, n)
    for q, c in enumerate(spec.couplings):
        for a in range(3):
            for b in range(3):
                if c.j[a, b] == 0.0:
                    continue
                factors = [I2] * n
                factors[q] = PAULIS[a]
                factors[q + 1] = PAULIS[b]
                h += c.j[a, b] * reduce(np.kron, factors)
    return 0.5 * (h + h.conj().T)


def _rates(noise: NoiseSpec, omega_norms: Sequence[float] | None) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(noise.gamma, dtype=float)
    if not np.any(g):
        return g, np.zeros_like(g)
    if omega_norms is None:
        raise ConfigurationError("omega_norms required to evaluate thermal rates")
    n = noise.photon_numbers(omega_norms)
    return g * (n + 1.0), g * n


def jump_operators(noise: NoiseSpec, omega_norms: Sequence[float] | None) -> list[tuple[float, np.ndarray]]:
    """(rate, operator) pairs: emission sigma_i^- and absorption sigma_i^+ per qubit."""
    n_q = noise.n_qubits
    down, up = _rates(noise, omega_norms)
    ops = []
    for q in range(n_q):
        if down[q] > 0:
            ops.append((float(down[q]), embed(SIGMA_MINUS, q, n_q)))
        if up[q] > 0:
            ops.append((float(up[q]), embed(SIGMA_PLUS, q, n_q)))
    return ops


def _resolve(h, noise: NoiseSpec, omega_norms):
    if isinstance(h, HamiltonianSpec):
        if h.n_qubits != noise.n_qubits:
            raise ConfigurationError("Hamiltonian and noise disagree on qubit count")
        return build_hamiltonian(h), (h.omega_norms() if omega_norms is None else omega_norms)
    h = np.asarray(h, dtype=complex)
    if h.shape != (2**noise.n_qubits,) * 2:
        raise ConfigurationError(f"Hamiltonian shape {h.shape} does not match {noise.n_qubits} qubits")
    return h, omega_norms


def lindblad_rhs(rho, h, noise: NoiseSpec, omega_norms: Sequence[float] | None = None) -> np.ndarray:
    """dρ/dt = -i[H,ρ] + Σ_i γ_i(<n_i>+1) D[σ_i^-]ρ + γ_i<n_i> D[σ_i^+]ρ.

    ``h`` is either a :class:`HamiltonianSpec` (frequency norms are taken from
    it) or a matrix, in which case ``omega_norms`` feeds the photon numbers.
    """
    r = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    hm, norms = _resolve(h, noise, omega_norms)
    if r.shape != hm.shape:
        raise ConfigurationError(f"state shape {r.shape} does not match Hamiltonian {hm.shape}")
    out = -1j * (hm @ r - r @ hm)
    for rate, a in jump_operators(noise, norms):
        ad = a.conj().T
        ada = ad @ a
        out += rate * (a @ r @ ad - 0.5 * (ada @ r + r @ ada))
    return out


def liouvillian(h, noise: NoiseSpec, omega_norms: Sequence[float] | None = None) -> np.ndarray:
    """Superoperator matrix of :func:`lindblad_rhs` acting on row-major ``rho.reshape(-1)``."""
    hm, norms = _resolve(h, noise, omega_norms)
    dim = hm.shape[0]
    eye = np.eye(dim)
    sup = -1j * (np.kron(hm, eye) - np.kron(eye, hm.T))
    for rate, a in jump_operators(noise, norms):
        ada = a.conj().T @ a
        sup += rate * (np.kron(a, a.conj()) - 0.5 * np.kron(ada, eye) - 0.5 * np.kron(eye, ada.T))
    return sup
