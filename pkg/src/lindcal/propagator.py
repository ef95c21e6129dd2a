"""Master-equation evolution over a delay sweep and the QC1-QC8 circuit channels."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, IntegrationDiverged, PositivityViolation
from .qdyn import (
    I2,
    SX,
    SY,
    DensityMatrix,
    HamiltonianSpec,
    NoiseSpec,
    build_hamiltonian,
    lindblad_rhs,
    liouvillian,
)

__all__ = [
    "TimeGrid",
    "GateOp",
    "ExperimentKind",
    "Trajectory",
    "evolve",
    "run_experiment",
    "populations",
    "simulate_populations",
]


@dataclass(frozen=True)
class TimeGrid:
    """Delay sweep ``t_k = t_start + k t_step``; evolution runs for ``scale_factor * t_k``."""

    t_start: float = 0.0
    t_step: float = 4.0
    n_points: int = 75
    scale_factor: float = 1.0

    def __post_init__(self) -> None:
        if not self.t_step > 0:
            raise ConfigurationError(f"t_step must be positive, got {self.t_step}")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ConfigurationError(f"n_points must be an integer >= 2, got {self.n_points}")
        if not self.scale_factor > 0:
            raise ConfigurationError(f"scale_factor must be positive, got {self.scale_factor}")
        if not self.t_start >= 0:
            raise ConfigurationError(f"t_start must be >= 0, got {self.t_start}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def times(self) -> np.ndarray:
        """Nominal (reported) delay values in us."""
        return self.t_start + self.t_step * np.arange(self.n_points)

    @property
    def evolution_times(self) -> np.ndarray:
        return self.scale_factor * self.times


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_FIXED_GATES = {"X": SX, "Y": SY, "H": _HADAMARD, "I": I2}


@dataclass(frozen=True)
class GateOp:
    """Ideal instantaneous single-qubit gate."""

    label: str
    target: int
    theta: float | None = None

    def __post_init__(self) -> None:
        if self.label == "RY":
            if self.theta is None:
                raise ConfigurationError("RY needs an angle")
        elif self.label not in _FIXED_GATES:
            raise ConfigurationError(f"unknown gate {self.label!r}")
        if self.target < 0:
            raise ConfigurationError("gate target must be non-negative")

    @property
    def matrix(self) -> np.ndarray:
        if self.label == "RY":
            return _ry(self.theta)
        return _FIXED_GATES[self.label]


class ExperimentKind(enum.Enum):
    """Circuit families; value is (circuit tag, CLI name)."""

    T1_11 = ("QC1", "t1")
    T2_ECHO = ("QC2", "t2e")
    T2_STAR = ("QC3", "t2s")
    T1_10 = ("QC4", "t1-10")
    T1_01 = ("QC5", "t1-01")
    T1_IDLE = ("QC6", "t1-idle")
    T2S_HX = ("QC7", "t2s-hx")
    T2S_HI = ("QC8", "t2s-hi")

    @property
    def circuit(self) -> str:
        return self.value[0]

    @property
    def cli_name(self) -> str:
        return self.value[1]

    @classmethod
    def from_name(cls, name: str) -> "ExperimentKind":
        for k in cls:
            if name in (k.name, k.circuit, k.cli_name):
                return k
        raise ConfigurationError(f"unknown experiment kind {name!r}")

    @property
    def is_t1_family(self) -> bool:
        return self in (ExperimentKind.T1_11, ExperimentKind.T1_10, ExperimentKind.T1_01, ExperimentKind.T1_IDLE)

    def gates(self, n_qubits: int) -> tuple[list[GateOp], list[GateOp] | None, list[GateOp]]:
        """(before delay, between the two echo halves or None, after delay)."""
        if n_qubits not in (1, 2, 3):
            raise ConfigurationError(f"n_qubits must be 1, 2 or 3, got {n_qubits}")
        qs = range(n_qubits)
        K = ExperimentKind
        if self is K.T1_11:
            return [GateOp("X", q) for q in qs], None, []
        if self is K.T2_ECHO:
            half_pi = [GateOp("RY", q, math.pi / 2) for q in qs]
            return half_pi, [GateOp("Y", q) for q in qs], list(half_pi)
        if self is K.T2_STAR:
            return [GateOp("H", q) for q in qs], None, [GateOp("H", q) for q in qs]
        if self is K.T1_10:
            return [GateOp("X", 0)], None, []
        if self is K.T1_01:
            return [GateOp("X", n_qubits - 1)], None, []
        if self is K.T1_IDLE:
            return [], None, []
        if self is K.T2S_HX:
            return [GateOp("H", 0)] + [GateOp("X", q) for q in qs if q], None, [GateOp("H", 0)]
        # T2S_HI
        return [GateOp("H", 0)], None, [GateOp("H", 0)]


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    array: np.ndarray  # (n_points, dim, dim)

    def __post_init__(self) -> None:
        a = np.array(self.array, dtype=complex, copy=True)
        if a.ndim != 3 or a.shape[0] != self.grid.n_points or a.shape[1] != a.shape[2]:
            raise ConfigurationError(f"trajectory array shape {a.shape} inconsistent with grid")
        a.setflags(write=False)
        object.__setattr__(self, "array", a)

    @property
    def states(self) -> list[DensityMatrix]:
        return [DensityMatrix(r) for r in self.array]

    @property
    def n_qubits(self) -> int:
        return self.array.shape[1].bit_length() - 1


# -- gate application on row-major vectorised states ---------------------------


def _layer_unitary(ops: list[GateOp], n_qubits: int) -> np.ndarray | None:
    if not ops:
        return None
    per_qubit = [I2] * n_qubits
    for op in ops:
        if op.target >= n_qubits:
            raise ConfigurationError(f"gate target {op.target} outside {n_qubits}-qubit register")
        per_qubit[op.target] = op.matrix @ per_qubit[op.target]
    return reduce(np.kron, per_qubit)


def _conj_super(u: np.ndarray | None) -> np.ndarray | None:
    # vec(U rho U^dag) = (U kron conj(U)) vec(rho) for row-major vec.
    return None if u is None else np.kron(u, u.conj())


def _apply(sup: np.ndarray | None, v: np.ndarray) -> np.ndarray:
    return v if sup is None else sup @ v


# -- delay propagators ----------------------------------------------------------


def _check_finite(mat: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(mat)):
        raise IntegrationDiverged(t)


def rk4_substep(h: HamiltonianSpec, noise: NoiseSpec, step: float) -> float:
    """Fixed RK4 substep: at most ``step`` and at least 50 substeps per fastest oscillation."""
    hm = build_hamiltonian(h)
    ev = np.linalg.eigvalsh(hm)
    rate = float(np.sum(noise.gamma)) * (1.0 + 2.0 * float(np.max(noise.photon_numbers(h.omega_norms()), initial=0.0)))
    w_max = max(float(ev[-1] - ev[0]), rate)
    if w_max <= 0:
        return step
    return min(step, 2 * math.pi / (50.0 * w_max))


def _step_map(sup: np.ndarray, dt: float, method: str, n_sub: int) -> np.ndarray:
    if dt == 0:
        return np.eye(sup.shape[0], dtype=complex)
    if method == "expm":
        return expm(sup * dt)
    # Classical RK4 applied to a linear autonomous ODE is exactly the
    # fourth-order Taylor polynomial of the step map.
    a = sup * (dt / n_sub)
    a2 = a @ a
    m = np.eye(sup.shape[0], dtype=complex) + a + a2 / 2 + a2 @ a / 6 + a2 @ a2 / 24
    return np.linalg.matrix_power(m, n_sub)


def delay_maps(
    h: HamiltonianSpec,
    noise: NoiseSpec,
    grid: TimeGrid,
    method: str = "expm",
    substep: float | None = None,
) -> np.ndarray:
    """Stack of superoperators P_k = exp(L * scale * t_k), shape (n_points, d^2, d^2)."""
    if method not in ("expm", "rk4"):
        raise ConfigurationError(f"unknown integration method {method!r}")
    sup = liouvillian(h, noise)
    step = grid.scale_factor * grid.t_step
    start = grid.scale_factor * grid.t_start
    n_step = n_start = 1
    if method == "rk4":
        sub = substep if substep is not None else rk4_substep(h, noise, step)
        n_step = max(1, math.ceil(step / sub - 1e-12))
        n_start = max(1, math.ceil(start / sub - 1e-12)) if start else 1
    p_step = _trace_preserving(_step_map(sup, step, method, n_step), h.dim)
    p = _trace_preserving(_step_map(sup, start, method, n_start), h.dim)
    out = np.empty((grid.n_points,) + sup.shape, dtype=complex)
    for k in range(grid.n_points):
        _check_finite(p, float(grid.evolution_times[k]))
        out[k] = p
        p = _trace_preserving(p_step @ p, h.dim)
    return out


def _trace_preserving(p: np.ndarray, d: int) -> np.ndarray:
    # Rounding in long products of step maps lets Tr(P rho) drift by ~1e-9
    # on three qubits; push the defect back onto the identity direction.
    diag = np.arange(d) * (d + 1)
    defect = np.zeros(p.shape[1], dtype=complex)
    defect[diag] = 1.0
    defect = defect - p[diag].sum(axis=0)
    p[diag] += defect / d
    return p


def _initial_vec(n_qubits: int) -> np.ndarray:
    v = np.zeros(4**n_qubits, dtype=complex)
    v[0] = 1.0
    return v


def _final_states(
    kind: ExperimentKind,
    h: HamiltonianSpec,
    noise: NoiseSpec,
    grid: TimeGrid,
    method: str,
    substep: float | None,
) -> np.ndarray:
    n = h.n_qubits
    if noise.n_qubits != n:
        raise ConfigurationError(f"noise describes {noise.n_qubits} qubits, Hamiltonian {n}")
    pre, mid, post = kind.gates(n)
    s_pre = _conj_super(_layer_unitary(pre, n))
    s_post = _conj_super(_layer_unitary(post, n))
    v0 = _apply(s_pre, _initial_vec(n))
    maps = delay_maps(h, noise, grid, method, substep)
    if mid is None:
        vs = maps @ v0
    else:
        s_mid = _conj_super(_layer_unitary(mid, n))
        first = maps @ v0
        second = first if s_mid is None else first @ s_mid.T
        vs = np.einsum("kij,kj->ki", maps, second)
    if s_post is not None:
        vs = vs @ s_post.T
    d = 2**n
    rhos = vs.reshape(grid.n_points, d, d)
    bad = ~np.all(np.isfinite(rhos), axis=(1, 2))
    if np.any(bad):
        raise IntegrationDiverged(float(grid.evolution_times[np.argmax(bad)]))
    return rhos


# -- public operations -----------------------------------------------------------


def _rk4_literal(rho: np.ndarray, h: HamiltonianSpec, noise: NoiseSpec, duration: float, n_sub: int) -> np.ndarray:
    hm = build_hamiltonian(h)
    norms = h.omega_norms()
    dt = duration / n_sub

    def f(r):
        return lindblad_rhs(r, hm, noise, norms)

    for _ in range(n_sub):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def evolve(
    rho0: DensityMatrix,
    h: HamiltonianSpec,
    noise: NoiseSpec,
    grid: TimeGrid,
    method: str = "expm",
    substep: float | None = None,
) -> Trajectory:
    """Solve dρ/dt = L ρ and sample ρ at ``grid.evolution_times``.

    ``method="expm"`` propagates with the exact exponential of the
    Liouvillian. ``method="rk4"`` runs explicit fixed-step Runge-Kutta on
    :func:`lindblad_rhs`; it is only practical when the Hamiltonian is slow
    compared with the grid spacing.
    """
    if rho0.dim != h.dim:
        raise ConfigurationError("initial state and Hamiltonian dimensions differ")
    if method == "expm":
        maps = delay_maps(h, noise, grid, "expm")
        rhos = (maps @ rho0.entries.reshape(-1)).reshape(grid.n_points, h.dim, h.dim)
    elif method == "rk4":
        step = grid.scale_factor * grid.t_step
        sub = substep if substep is not None else rk4_substep(h, noise, step)
        rhos = np.empty((grid.n_points, h.dim, h.dim), dtype=complex)
        rho = np.array(rho0.entries)
        t_prev = 0.0
        for k, t in enumerate(grid.evolution_times):
            span = t - t_prev
            if span > 0:
                rho = _rk4_literal(rho, h, noise, span, max(1, math.ceil(span / sub - 1e-12)))
            if not np.all(np.isfinite(rho)):
                raise IntegrationDiverged(float(t))
            rhos[k] = rho
            t_prev = t
    else:
        raise ConfigurationError(f"unknown integration method {method!r}")
    return Trajectory(grid, rhos)


def run_experiment(
    kind: ExperimentKind,
    h: HamiltonianSpec,
    noise: NoiseSpec,
    grid: TimeGrid,
    method: str = "expm",
    substep: float | None = None,
) -> Trajectory:
    """Final (pre-measurement) states of ``kind`` for every delay on ``grid``.

    Each circuit starts in |0...0>, applies its pre-delay gate layer, evolves,
    and applies the post-delay layer. The echo sequence evolves for the delay,
    applies Y on every qubit, then evolves for the same delay again.
    """
    return Trajectory(grid, _final_states(kind, h, noise, grid, method, substep))


def _diag_populations(rhos: np.ndarray) -> np.ndarray:
    p = np.real(np.diagonal(rhos, axis1=1, axis2=2)).copy()
    worst = p.min()
    if worst < -1e-6:
        k = int(np.argmin(p.min(axis=1)))
        raise PositivityViolation(f"population {worst:.3e} at grid index {k}")
    np.clip(p, 0.0, 1.0, out=p)
    p /= p.sum(axis=1, keepdims=True)
    return p


def populations(traj: Trajectory) -> np.ndarray:
    """Bitstring probabilities, shape (n_points, 2^n), qubit 0 leftmost."""
    return _diag_populations(traj.array)


def simulate_populations(
    kind: ExperimentKind,
    h: HamiltonianSpec,
    noise: NoiseSpec,
    grid: TimeGrid,
    method: str = "expm",
) -> np.ndarray:
    """``populations(run_experiment(...))`` without building state objects."""
    return _diag_populations(_final_states(kind, h, noise, grid, method, None))
