"""Parameter packing, least-squares loss, finite-difference gradients and Adam fitting."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, FitFailed, GradientProbeError, LindcalError
from .measurement import ExperimentRecord
from .propagator import ExperimentKind, simulate_populations
from .qdyn import (
    RAD_PER_NS,
    CouplingMatrix,
    FrequencyVector,
    HamiltonianSpec,
    NoiseSpec,
    thermal_photon_number,
)

log = logging.getLogger(__name__)

THREADS_ENV = "LINDBLAD_CALIB_THREADS"
_AXES = "xyz"
HAMILTONIAN_SYMBOLS = {"wx", "wy", "wz", "J"} | {f"J{a}{b}" for a in _AXES for b in _AXES}


# -- parameter layout ------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    name: str
    symbol: str
    qubits: tuple[int, ...]
    unit: str


@dataclass(frozen=True)
class ParameterLayout:
    """Ordered slot schema for ``n_qubits`` in ``simple`` or ``general`` mode.

    Per qubit: (wz) or (wx, wy, wz), then gamma and logT. Couplings follow all
    qubits: one flip-flop J per pair in simple mode, nine J_ab in general mode.
    """

    n_qubits: int
    mode: str = "simple"

    def __post_init__(self) -> None:
        if self.n_qubits not in (1, 2, 3):
            raise ConfigurationError(f"n_qubits must be 1, 2 or 3, got {self.n_qubits}")
        if self.mode not in ("simple", "general"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")

    @property
    def slots(self) -> tuple[Slot, ...]:
        return _layout_slots(self.n_qubits, self.mode)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)

    def __len__(self) -> int:
        return len(self.slots)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"no slot named {name!r} in {self.mode} {self.n_qubits}-qubit layout") from None

    def select(self, symbols: Iterable[str]) -> tuple[str, ...]:
        wanted = set(symbols)
        return tuple(s.name for s in self.slots if s.symbol in wanted or s.name in wanted)


_LAYOUT_CACHE: dict[tuple[int, str], tuple[Slot, ...]] = {}


def _layout_slots(n: int, mode: str) -> tuple[Slot, ...]:
    key = (n, mode)
    if key not in _LAYOUT_CACHE:
        slots = []
        for q in range(n):
            freq_syms = ("wz",) if mode == "simple" else ("wx", "wy", "wz")
            for s in freq_syms:
                slots.append(Slot(f"q{q}.{s}", s, (q,), "rad/us"))
            slots.append(Slot(f"q{q}.gamma", "gamma", (q,), "1/us"))
            slots.append(Slot(f"q{q}.logT", "logT", (q,), "ln(K)"))
        for q in range(n - 1):
            syms = ("J",) if mode == "simple" else tuple(f"J{a}{b}" for a in _AXES for b in _AXES)
            for s in syms:
                slots.append(Slot(f"c{q}{q + 1}.{s}", s, (q, q + 1), "rad/us"))
        _LAYOUT_CACHE[key] = tuple(slots)
    return _LAYOUT_CACHE[key]


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    layout: ParameterLayout

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (len(self.layout),):
            raise ConfigurationError(f"expected {len(self.layout)} values, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mode(self) -> str:
        return self.layout.mode

    @property
    def n_qubits(self) -> int:
        return self.layout.n_qubits

    def unpack(self) -> dict[str, float]:
        return dict(zip(self.layout.names, (float(x) for x in self.values)))

    @classmethod
    def pack(cls, slots: Mapping[str, float], layout: ParameterLayout) -> "ParameterVector":
        missing = [n for n in layout.names if n not in slots]
        if missing:
            raise ConfigurationError(f"missing slots {missing}")
        return cls(np.array([slots[n] for n in layout.names], dtype=float), layout)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.layout.index(name)])

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)

    def replace(self, **updates: float) -> "ParameterVector":
        v = np.array(self.values)
        for k, x in updates.items():
            v[self.layout.index(k.replace("__", "."))] = x
        return ParameterVector(v, self.layout)

    def to_model(self) -> tuple[HamiltonianSpec, NoiseSpec]:
        p = self.unpack()
        n = self.n_qubits
        if self.mode == "simple":
            freqs = tuple(FrequencyVector(wz=p[f"q{q}.wz"]) for q in range(n))
            couplings = tuple(CouplingMatrix.flip_flop(p[f"c{q}{q + 1}.J"]) for q in range(n - 1))
        else:
            freqs = tuple(FrequencyVector(p[f"q{q}.wx"], p[f"q{q}.wy"], p[f"q{q}.wz"]) for q in range(n))
            couplings = tuple(
                CouplingMatrix(np.array([[p[f"c{q}{q + 1}.J{a}{b}"] for b in _AXES] for a in _AXES]))
                for q in range(n - 1)
            )
        h = HamiltonianSpec(freqs, couplings, mode=self.mode)
        noise = NoiseSpec(
            tuple(p[f"q{q}.gamma"] for q in range(n)),
            tuple(math.exp(p[f"q{q}.logT"]) for q in range(n)),
        )
        return h, noise

    @classmethod
    def from_model(cls, h: HamiltonianSpec, noise: NoiseSpec, mode: str | None = None) -> "ParameterVector":
        mode = mode or h.mode
        layout = ParameterLayout(h.n_qubits, mode)
        slots: dict[str, float] = {}
        for q, f in enumerate(h.freqs):
            if mode == "simple":
                if f.wx or f.wy:
                    raise ConfigurationError("transverse frequency components cannot be packed in simple mode")
                slots[f"q{q}.wz"] = f.wz
            else:
                slots[f"q{q}.wx"], slots[f"q{q}.wy"], slots[f"q{q}.wz"] = f.wx, f.wy, f.wz
            slots[f"q{q}.gamma"] = noise.gamma[q]
            slots[f"q{q}.logT"] = math.log(noise.temperature[q])
        for q, c in enumerate(h.couplings):
            if mode == "simple":
                if not c.is_flip_flop:
                    raise ConfigurationError("non flip-flop coupling cannot be packed in simple mode")
                slots[f"c{q}{q + 1}.J"] = c.flip_flop_amplitude
            else:
                for i, a in enumerate(_AXES):
                    for j, b in enumerate(_AXES):
                        slots[f"c{q}{q + 1}.J{a}{b}"] = float(c.j[i, j])
        return cls.pack(slots, layout)

    def to_general(self) -> "ParameterVector":
        h, noise = self.to_model()
        return ParameterVector.from_model(h.as_general(), noise, "general")


# -- identifiability --------------------------------------------------------------

# Population-visible slots per circuit. Relaxation sequences (and the echo,
# which refocuses static z rotations) cannot see Hamiltonian phases, so their
# frequency and coupling slots stay at the claimed values.
_PHASE_BLIND = {
    ExperimentKind.T1_11,
    ExperimentKind.T1_10,
    ExperimentKind.T1_01,
    ExperimentKind.T1_IDLE,
    ExperimentKind.T2_ECHO,
}
# On one qubit the closing rotation of these sequences maps the relaxed
# population onto an unmeasured coherence, so only gamma (2<n> + 1) is visible
# and the temperature has to be held fixed.
_RATE_ONLY_1Q = {
    ExperimentKind.T2_ECHO,
    ExperimentKind.T2_STAR,
    ExperimentKind.T2S_HX,
    ExperimentKind.T2S_HI,
}


def default_free_slots(layout: ParameterLayout, kinds: Iterable[ExperimentKind]) -> tuple[str, ...]:
    """Slots that the given experiments constrain; everything else is frozen."""
    kinds = set(kinds)
    free = set(layout.names)
    if kinds and kinds <= _PHASE_BLIND:
        free = set(layout.select({"gamma", "logT"}))
    if layout.n_qubits == 1 and kinds and kinds <= _RATE_ONLY_1Q:
        free -= set(layout.select({"logT"}))
    return tuple(n for n in layout.names if n in free)


# -- loss ------------------------------------------------------------------------


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _check_records(layout: ParameterLayout, records: Sequence[ExperimentRecord]) -> None:
    for r in records:
        if r.n_qubits != layout.n_qubits:
            raise ConfigurationError(
                f"record {r.kind.name} has {r.n_qubits} qubits but parameters describe {layout.n_qubits}"
            )


def simulate_record(params: ParameterVector, record: ExperimentRecord) -> np.ndarray:
    h, noise = params.to_model()
    return simulate_populations(record.kind, h, noise, record.grid)


def loss_fn(params: ParameterVector, records: Sequence[ExperimentRecord]) -> float:
    """Sum over records, delays and bitstrings of squared population residuals."""
    _check_records(params.layout, records)
    if not records:
        return 0.0
    try:
        h, noise = params.to_model()
        total = 0.0
        for r in records:
            sim = simulate_populations(r.kind, h, noise, r.grid)
            total += float(np.sum((sim - r.probs) ** 2))
    except LindcalError as exc:
        exc.params = params.unpack()
        raise
    return total


def claimed_comparison(claimed: ParameterVector, records: Sequence[ExperimentRecord]) -> float:
    """Loss of the uncalibrated (claimed) parameters against the data."""
    return loss_fn(claimed, records)


# -- gradients --------------------------------------------------------------------


def _probe_steps(x: np.ndarray, rel_step: float) -> np.ndarray:
    return rel_step * np.where(x != 0, np.abs(x), 1.0)


def central_difference(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    rel_step: float = 1e-6,
    mask: np.ndarray | None = None,
    names: Sequence[str] | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Central finite-difference gradient with step ``rel_step * |x_i|`` (``rel_step`` at 0)."""
    x = np.asarray(x, dtype=float)
    idx = np.arange(x.size) if mask is None else np.flatnonzero(mask)
    steps = _probe_steps(x, rel_step)
    probes = []
    for i in idx:
        for sign in (1.0, -1.0):
            xp = x.copy()
            xp[i] += sign * steps[i]
            probes.append(xp)
    if threads > 1 and len(probes) > 2:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(f, probes))
    else:
        vals = [f(p) for p in probes]
    g = np.zeros_like(x)
    for n, i in enumerate(idx):
        fp, fm = vals[2 * n], vals[2 * n + 1]
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise GradientProbeError(names[i] if names is not None else str(i))
        g[i] = (fp - fm) / (2.0 * steps[i])
    return g


def _objective(params: ParameterVector, records: Sequence[ExperimentRecord]) -> Callable[[np.ndarray], float]:
    layout = params.layout

    def f(v: np.ndarray) -> float:
        try:
            return loss_fn(ParameterVector(v, layout), records)
        except (LindcalError, ValueError, ArithmeticError):
            return math.inf

    return f


def gradient(
    params: ParameterVector,
    records: Sequence[ExperimentRecord],
    rel_step: float = 1e-6,
    free: Sequence[str] | None = None,
) -> np.ndarray:
    """d loss / d slot for every (or every ``free``) slot, in physical slot units."""
    _check_records(params.layout, records)
    mask = None
    if free is not None:
        mask = np.zeros(len(params.layout), dtype=bool)
        mask[[params.layout.index(n) for n in free]] = True
    return central_difference(
        _objective(params, records), params.values, rel_step, mask, params.layout.names, _threads()
    )


def richardson_flags(
    params: ParameterVector,
    records: Sequence[ExperimentRecord],
    rel_step: float = 1e-6,
    free: Sequence[str] | None = None,
    rtol: float = 0.01,
) -> tuple[np.ndarray, list[str]]:
    """Gradient plus names of components that move by more than ``rtol`` when the step is halved."""
    g1 = gradient(params, records, rel_step, free)
    g2 = gradient(params, records, rel_step / 2, free)
    scale = np.maximum(np.abs(g1), 1e-12)
    bad = np.abs(g1 - g2) > rtol * scale
    flagged = [n for n, b in zip(params.layout.names, bad) if b]
    if flagged:
        log.warning("finite-difference gradient unstable for %s", flagged)
    return g1, flagged


# -- Adam ------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    alpha: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 300
    restarts: int = 3
    gradient_step: float = 1e-6
    tol: float = 1e-10
    patience: int = 20
    # Step size multiplier applied at each chained restart.
    alpha_decay: float = 0.1
    free: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if self.max_iters < 1 or self.restarts < 1:
            raise ConfigurationError("max_iters and restarts must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("beta1 and beta2 must lie in [0, 1)")
        if not self.gradient_step > 0:
            raise ConfigurationError("gradient_step must be positive")


class AdamState:
    """Bias-corrected Adam moments for a fixed-size parameter vector."""

    def __init__(self, size: int, alpha: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.alpha, self.beta1, self.beta2, self.eps = alpha, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the update to add to the parameters."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return -self.alpha * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class FitResult:
    best_params: ParameterVector
    loss: float
    loss_history: list[float]
    iterations_used: int
    restarts_used: int
    free: tuple[str, ...]
    derived: dict = field(default_factory=dict)

    @property
    def frozen(self) -> tuple[str, ...]:
        return tuple(n for n in self.best_params.layout.names if n not in self.free)


def derived_report(params: ParameterVector) -> dict:
    """Table-style quantities: |w| (rad/ns), T1 (us), T (mK), <n>, gamma; J per pair."""
    h, noise = params.to_model()
    norms = h.omega_norms()
    qubits = []
    for q in range(params.n_qubits):
        w = float(norms[q])
        n = thermal_photon_number(w, noise.temperature[q]) if w > 0 else float("nan")
        g = noise.gamma[q]
        qubits.append(
            {
                "qubit": q,
                "omega_rad_per_ns": w / RAD_PER_NS,
                "gamma_per_us": g,
                "photon_number": n,
                "t1_us": 1.0 / (g * (2 * n + 1)) if g > 0 else float("inf"),
                "temperature_mk": noise.temperature[q] * 1e3,
            }
        )
    pairs = []
    for q, c in enumerate(h.couplings):
        entry = {"pair": [q, q + 1], "j_norm_rad_per_ns": c.norm / RAD_PER_NS}
        if c.is_flip_flop:
            entry["j_rad_per_ns"] = c.flip_flop_amplitude / RAD_PER_NS
        pairs.append(entry)
    return {"qubits": qubits, "couplings": pairs}


def _scales(x: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    s = np.where(x != 0, np.abs(x), 1.0)
    # log T is already a relative coordinate.
    s[[i for i, slot in enumerate(layout.slots) if slot.symbol == "logT"]] = 1.0
    return s


def adam_fit(
    initial: ParameterVector,
    records: Sequence[ExperimentRecord],
    cfg: FitConfig = FitConfig(),
    callback: Callable[[int, float], None] | None = None,
) -> FitResult:
    """Minimise :func:`loss_fn` with Adam on slots scaled by their initial magnitude.

    Restarts chain: each starts from the best point found so far with fresh
    moments and step ``alpha * alpha_decay**r``. The best-ever iterate is
    returned, never merely the last one.
    """
    layout = initial.layout
    _check_records(layout, records)
    free = cfg.free if cfg.free is not None else default_free_slots(layout, (r.kind for r in records))
    mask = np.zeros(len(layout), dtype=bool)
    mask[[layout.index(n) for n in free]] = True
    gamma_idx = np.array([i for i, s in enumerate(layout.slots) if s.symbol == "gamma"], dtype=int)

    scales = _scales(initial.values, layout)
    f = _objective(initial, records)
    threads = _threads()

    best_x = np.array(initial.values)
    best_loss = f(best_x)
    history: list[float] = []
    iters = 0
    restarts_used = 0
    any_finite = math.isfinite(best_loss)

    def scaled(z: np.ndarray) -> float:
        return f(z * scales)

    for r in range(cfg.restarts):
        restarts_used = r + 1
        opt = AdamState(int(mask.sum()), cfg.alpha * cfg.alpha_decay**r, cfg.beta1, cfg.beta2, cfg.eps)
        z = best_x / scales
        run_best = math.inf
        run_hist: list[float] = []
        for _ in range(cfg.max_iters):
            x = z * scales
            cur = f(x)
            if not math.isfinite(cur):
                log.warning("restart %d: non-finite loss, abandoning run", r)
                break
            any_finite = True
            iters += 1
            history.append(cur)
            if callback is not None:
                callback(iters, cur)
            if cur < best_loss or not math.isfinite(best_loss):
                best_loss, best_x = cur, x.copy()
            run_best = min(run_best, cur)
            run_hist.append(run_best)
            if len(run_hist) > cfg.patience and run_hist[-cfg.patience - 1] - run_hist[-1] < cfg.tol:
                break
            try:
                g = central_difference(scaled, z, cfg.gradient_step, mask, layout.names, threads)
            except GradientProbeError as exc:
                log.warning("restart %d: %s", r, exc)
                break
            z = z.copy()
            z[mask] += opt.step(g[mask])
            # Emission rates are projected back onto gamma >= 0.
            z[gamma_idx] = np.maximum(z[gamma_idx], 0.0)
    if not any_finite:
        raise FitFailed(f"every restart diverged; initial parameters {initial.unpack()}")
    best = ParameterVector(best_x, layout)
    return FitResult(best, best_loss, history, iters, restarts_used, tuple(free), derived_report(best))
