"""Shot sampling, readout confusion and calibration-matrix mitigation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigurationError, IncompleteCalibration, InputError, MitigationUnreliable
from .propagator import ExperimentKind, TimeGrid
from .qdyn import bitstrings

log = logging.getLogger(__name__)

CONDITION_LIMIT = 1e3
# Weight of the sum-to-one row appended to the non-negative least-squares system.
_SIMPLEX_WEIGHT = 1e4


@dataclass(frozen=True)
class ConfusionMatrix:
    """Column-stochastic readout map, ``m[i, j] = P(read i | prepared j)``."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.m, dtype=float, copy=True)
        d = m.shape[0]
        if m.ndim != 2 or m.shape != (d, d) or d < 2 or d & (d - 1):
            raise ConfigurationError(f"confusion matrix must be square with power-of-two size, got {m.shape}")
        if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
            raise ConfigurationError("confusion entries must lie in [0, 1]")
        if np.max(np.abs(m.sum(axis=0) - 1)) > 1e-9:
            raise ConfigurationError("confusion matrix columns must sum to 1")
        m = np.clip(m, 0.0, 1.0)
        m /= m.sum(axis=0, keepdims=True)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def n_qubits(self) -> int:
        return self.m.shape[0].bit_length() - 1

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.m))

    @property
    def well_conditioned(self) -> bool:
        return self.condition_number <= CONDITION_LIMIT

    @classmethod
    def identity(cls, n_qubits: int) -> "ConfusionMatrix":
        return cls(np.eye(2**n_qubits))

    @classmethod
    def symmetric(cls, flips: float | Sequence[float], n_qubits: int | None = None) -> "ConfusionMatrix":
        """Independent per-qubit symmetric bit flips, tensor-producted (qubit 0 leftmost)."""
        if np.isscalar(flips):
            if n_qubits is None:
                raise ConfigurationError("n_qubits needed with a scalar flip probability")
            flips = [float(flips)] * n_qubits
        blocks = []
        for f in flips:
            if not 0 <= f < 0.5:
                raise ConfigurationError(f"flip probability must be in [0, 0.5), got {f}")
            blocks.append(np.array([[1 - f, f], [f, 1 - f]]))
        return cls(reduce(np.kron, blocks))


@dataclass(frozen=True)
class ExperimentRecord:
    """Measured or simulated bitstring distributions for one delay sweep.

    ``counts`` is ``None`` only for mitigated records read back from disk,
    where the raw counts are not part of the file.
    """

    kind: ExperimentKind
    grid: TimeGrid
    shots: int
    probs: np.ndarray
    counts: np.ndarray | None = None
    mitigated: bool = False
    seed: int | None = None

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float, copy=True)
        if p.ndim != 2 or p.shape[0] != self.grid.n_points:
            raise ConfigurationError(f"probs shape {p.shape} does not match {self.grid.n_points} grid points")
        d = p.shape[1]
        if d < 2 or d & (d - 1) or d > 8:
            raise ConfigurationError(f"probability rows must have 2, 4 or 8 entries, got {d}")
        if self.shots <= 0:
            raise ConfigurationError("shots must be positive")
        if np.max(np.abs(p.sum(axis=1) - 1)) > 1e-9:
            raise ConfigurationError("probability rows must sum to 1")
        if not self.mitigated and np.any(p < 0):
            raise ConfigurationError("raw probabilities must be non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if self.counts is not None:
            c = np.array(self.counts, dtype=np.int64, copy=True)
            if c.shape != p.shape:
                raise ConfigurationError("counts and probs shapes differ")
            if np.any(c.sum(axis=1) != self.shots):
                raise ConfigurationError("every counts row must sum to shots")
            c.setflags(write=False)
            object.__setattr__(self, "counts", c)

    @property
    def n_qubits(self) -> int:
        return self.probs.shape[1].bit_length() - 1

    @property
    def labels(self) -> list[str]:
        return bitstrings(self.n_qubits)

    @classmethod
    def from_counts(
        cls, kind: ExperimentKind, grid: TimeGrid, counts: np.ndarray, seed: int | None = None
    ) -> "ExperimentRecord":
        counts = np.asarray(counts, dtype=np.int64)
        shots = int(counts[0].sum())
        return cls(kind, grid, shots, counts / shots, counts=counts, seed=seed)


def _rng(seed: int, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise InputError("seed and index must be non-negative")
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _clean_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-9):
        raise InputError(f"negative probability {p.min():.3e}")
    if abs(p.sum() - 1) > 1e-9:
        raise InputError(f"probabilities sum to {p.sum():.12g}")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def sample_counts(probs_row: Sequence[float], shots: int, seed: int, index: int = 0) -> np.ndarray:
    """Multinomial draw of ``shots`` outcomes.

    The Philox counter generator is keyed by ``(seed, index)`` so every row of
    a record can be drawn independently and reproducibly.
    """
    if shots <= 0:
        raise InputError("shots must be positive")
    return _rng(seed, index).multinomial(shots, _clean_probs(probs_row)).astype(np.int64)


def apply_confusion(true_probs: np.ndarray, m: ConfusionMatrix) -> np.ndarray:
    """Readout forward model ``m @ p``; works on a vector or on rows of a matrix."""
    p = np.asarray(true_probs, dtype=float)
    if p.shape[-1] != m.m.shape[0]:
        raise ConfigurationError(f"{p.shape[-1]} outcomes vs confusion size {m.m.shape[0]}")
    out = p @ m.m.T
    return out / out.sum(axis=-1, keepdims=True)


def sample_record(
    kind: ExperimentKind,
    grid: TimeGrid,
    true_probs: np.ndarray,
    shots: int,
    seed: int,
    confusion: ConfusionMatrix | None = None,
) -> ExperimentRecord:
    """Synthetic hardware run: optional readout confusion, then per-row multinomial sampling."""
    p = np.asarray(true_probs, dtype=float)
    if confusion is not None:
        p = apply_confusion(p, confusion)
    counts = np.stack([sample_counts(row, shots, seed, k) for k, row in enumerate(p)])
    return ExperimentRecord(kind, grid, shots, counts / shots, counts=counts, seed=seed)


def _constrained_solve(a: np.ndarray, f: np.ndarray) -> np.ndarray:
    d = a.shape[1]
    aug = np.vstack([a, _SIMPLEX_WEIGHT * np.ones((1, d))])
    rhs = np.append(f, _SIMPLEX_WEIGHT)
    x, _ = nnls(aug, rhs)
    return x / x.sum()


def mitigate_probs(freqs: np.ndarray, m: ConfusionMatrix) -> np.ndarray:
    """Least-squares ``m x ~ f`` over the probability simplex, row by row."""
    cond = m.condition_number
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise MitigationUnreliable(cond)
    f = np.atleast_2d(np.asarray(freqs, dtype=float))
    out = np.empty_like(f)
    for k, row in enumerate(f):
        # The unconstrained solution is already optimal whenever it is feasible.
        x = np.linalg.solve(m.m, row)
        if np.all(x >= 0):
            out[k] = x / x.sum()
        else:
            out[k] = _constrained_solve(m.m, row)
    return out.reshape(np.shape(freqs))


def mitigate(record: ExperimentRecord, m: ConfusionMatrix) -> ExperimentRecord:
    if record.mitigated:
        raise InputError("record is already mitigated")
    if m.m.shape[0] != record.probs.shape[1]:
        raise ConfigurationError("confusion matrix size does not match record")
    return replace(record, probs=mitigate_probs(record.probs, m), mitigated=True)


def estimate_confusion(
    n_qubits: int, prep_counts: Mapping[str, Sequence[int]] | Sequence[Sequence[int]]
) -> ConfusionMatrix:
    """Column j holds the readout frequencies observed after preparing basis state j.

    ``prep_counts`` maps prepared bitstrings to count vectors, or is a list
    ordered by basis index.
    """
    labels = bitstrings(n_qubits)
    if isinstance(prep_counts, Mapping):
        missing = [b for b in labels if b not in prep_counts]
        if missing:
            raise IncompleteCalibration(f"no calibration counts for {missing}")
        cols = [prep_counts[b] for b in labels]
    else:
        cols = list(prep_counts)
        if len(cols) != len(labels):
            raise IncompleteCalibration(f"expected {len(labels)} calibration vectors, got {len(cols)}")
    m = np.zeros((len(labels), len(labels)))
    for j, c in enumerate(cols):
        c = np.asarray(c, dtype=float)
        if c.shape != (len(labels),) or np.any(c < 0) or c.sum() <= 0:
            raise IncompleteCalibration(f"bad calibration counts for state {labels[j]}")
        m[:, j] = c / c.sum()
    cm = ConfusionMatrix(m)
    if not cm.well_conditioned:
        log.warning("estimated confusion matrix is ill-conditioned (cond=%.3g)", cm.condition_number)
    return cm


def calibration_counts(m: ConfusionMatrix, shots: int, seed: int) -> dict[str, np.ndarray]:
    """Simulated calibration run: prepare every basis state and read it out."""
    labels = bitstrings(m.n_qubits)
    return {b: sample_counts(m.m[:, j], shots, seed, j) for j, b in enumerate(labels)}
