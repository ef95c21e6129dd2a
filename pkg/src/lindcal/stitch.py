"""Cross-validation of overlapping subsystem fits and composite-system assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .calibrate import FitResult
from .errors import ConfigurationError, MissingCoupling, NothingToCompare
from .qdyn import RAD_PER_NS, CouplingMatrix, FrequencyVector, HamiltonianSpec, NoiseSpec, thermal_photon_number

# Relative-spread limits. ``None`` reports the spread without gating on it.
DEFAULT_THRESHOLDS: dict[str, float | None] = {
    "omega": 0.01,
    "t1": 0.10,
    "gamma": 0.15,
    "temperature": None,
    "J": 0.25,
}

QUBIT_SYMBOLS = ("omega", "t1", "gamma", "temperature")
UNITS = {"omega": "rad/ns", "t1": "us", "gamma": "1/us", "temperature": "mK", "J": "rad/ns"}


@dataclass(frozen=True)
class SubsystemFit:
    qubit_indices: tuple[int, ...]
    result: FitResult
    label: str = ""

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.qubit_indices)
        object.__setattr__(self, "qubit_indices", idx)
        if not idx:
            raise ConfigurationError("subsystem needs at least one qubit")
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise ConfigurationError(f"subsystem qubits {idx} are not contiguous on the chain")
        if len(idx) != self.result.best_params.n_qubits:
            raise ConfigurationError(f"{len(idx)} device qubits but fit describes {self.result.best_params.n_qubits}")

    @property
    def name(self) -> str:
        return self.label or "q" + "".join(str(i) for i in self.qubit_indices)

    def local(self, device_qubit: int) -> int:
        return self.qubit_indices.index(device_qubit)

    def _is_free(self, *slot_suffixes: str, local: int | None = None, pair: int | None = None) -> bool:
        prefix = f"q{local}." if pair is None else f"c{pair}{pair + 1}."
        names = [n for n in self.result.best_params.layout.names if n.startswith(prefix) and n.split(".")[1] in slot_suffixes]
        return any(n in self.result.free for n in names)

    def qubit_estimates(self, device_qubit: int) -> dict[str, float]:
        """Fitted (non-frozen) per-qubit quantities in table units."""
        q = self.local(device_qubit)
        h, noise = self.result.best_params.to_model()
        w = float(h.omega_norms()[q])
        g = noise.gamma[q]
        temp = noise.temperature[q]
        n = thermal_photon_number(w, temp)
        out = {}
        if self._is_free("wx", "wy", "wz", local=q):
            out["omega"] = w / RAD_PER_NS
        if self._is_free("gamma", "logT", "wx", "wy", "wz", local=q):
            out["t1"] = 1.0 / (g * (2 * n + 1)) if g > 0 else math.inf
        if self._is_free("gamma", local=q):
            out["gamma"] = g
        if self._is_free("logT", local=q):
            out["temperature"] = temp * 1e3
        return out

    def coupling_estimate(self, left: int) -> float | None:
        """Fitted coupling between device qubits ``left`` and ``left + 1`` (rad/ns), if free."""
        if left not in self.qubit_indices or left + 1 not in self.qubit_indices:
            return None
        p = self.local(left)
        if not self._is_free(*_coupling_syms(), pair=p):
            return None
        return _coupling_value(self.result.best_params.to_model()[0].couplings[p]) / RAD_PER_NS


def _coupling_syms() -> tuple[str, ...]:
    return ("J",) + tuple(f"J{a}{b}" for a in "xyz" for b in "xyz")


def _coupling_value(c: CouplingMatrix) -> float:
    return c.flip_flop_amplitude if c.is_flip_flop else c.norm


@dataclass(frozen=True)
class ConsistencyEntry:
    target: str  # "q1" or "c01"
    symbol: str
    estimates: tuple[tuple[str, float], ...]
    spread: float
    threshold: float | None

    @property
    def passed(self) -> bool:
        return self.threshold is None or self.spread <= self.threshold


@dataclass(frozen=True)
class ConsistencyReport:
    entries: tuple[ConsistencyEntry, ...]
    thresholds: Mapping[str, float | None] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def max_spread(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for e in self.entries:
            out[e.symbol] = max(out.get(e.symbol, 0.0), e.spread)
        return out

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "thresholds": dict(self.thresholds),
            "max_spread": self.max_spread(),
            "entries": [
                {
                    "target": e.target,
                    "symbol": e.symbol,
                    "unit": UNITS[e.symbol],
                    "estimates": [{"source": s, "value": v} for s, v in e.estimates],
                    "spread": e.spread,
                    "threshold": e.threshold,
                    "passed": e.passed,
                }
                for e in self.entries
            ],
        }

    def render(self) -> str:
        lines = [f"{'target':<7}{'symbol':<13}{'unit':<8}{'spread':>9}  {'limit':>7}  ok   estimates"]
        for e in self.entries:
            limit = "-" if e.threshold is None else f"{e.threshold:.0%}"
            est = ", ".join(f"{s}={v:.4g}" for s, v in e.estimates)
            lines.append(
                f"{e.target:<7}{e.symbol:<13}{UNITS[e.symbol]:<8}{e.spread:>9.2%}  {limit:>7}  "
                f"{'yes' if e.passed else 'NO ':<4} {est}"
            )
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def relative_spread(values: Sequence[float]) -> float:
    """(max - min) / mean."""
    vals = sorted(values)
    mean = math.fsum(vals) / len(vals)
    if mean == 0:
        return 0.0 if vals[-1] == vals[0] else math.inf
    return (vals[-1] - vals[0]) / abs(mean)


def _ordered(fits: Sequence[SubsystemFit]) -> list[SubsystemFit]:
    return sorted(fits, key=lambda f: (len(f.qubit_indices), f.qubit_indices, f.name))


def consistency_check(
    fits: Sequence[SubsystemFit], thresholds: Mapping[str, float | None] | None = None
) -> ConsistencyReport:
    """Compare every fitted quantity estimated by two or more subsystems."""
    limits = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        unknown = set(thresholds) - set(limits)
        if unknown:
            raise ConfigurationError(f"unknown threshold symbols {sorted(unknown)}")
        limits.update(thresholds)
    fits = _ordered(fits)
    qubits = sorted({q for f in fits for q in f.qubit_indices})
    shared = [q for q in qubits if sum(q in f.qubit_indices for f in fits) >= 2]
    if len(fits) < 2 or not shared:
        raise NothingToCompare("need at least two fits sharing a qubit")
    entries = []
    for q in shared:
        per_symbol: dict[str, list[tuple[str, float]]] = {}
        for f in fits:
            if q in f.qubit_indices:
                for sym, val in f.qubit_estimates(q).items():
                    per_symbol.setdefault(sym, []).append((f.name, val))
        for sym in QUBIT_SYMBOLS:
            est = per_symbol.get(sym, [])
            if len(est) >= 2:
                entries.append(ConsistencyEntry(f"q{q}", sym, tuple(est), relative_spread([v for _, v in est]), limits[sym]))
    for left in qubits:
        est = [(f.name, v) for f in fits if (v := f.coupling_estimate(left)) is not None]
        if len(est) >= 2:
            entries.append(
                ConsistencyEntry(f"c{left}{left + 1}", "J", tuple(est), relative_spread([v for _, v in est]), limits["J"])
            )
    return ConsistencyReport(tuple(entries), limits)


def _combine(values: Sequence[float], weights: Sequence[float]) -> float:
    if len(values) == 1:
        return values[0]
    pairs = sorted(zip(values, weights))
    return math.fsum(v * w for v, w in pairs) / math.fsum(w for _, w in pairs)


def predict_composite(
    fits: Sequence[SubsystemFit],
    target_indices: Sequence[int],
    coupling_source: Mapping[tuple[int, int], SubsystemFit] | None = None,
    weighting: str = "mean",
) -> tuple[HamiltonianSpec, NoiseSpec]:
    """Assemble a parameter set for ``target_indices`` from subsystem estimates.

    Per-qubit frequency components, emission rates and temperatures are
    averaged over every fit containing the qubit (unweighted, or weighted by
    inverse loss with ``weighting="loss"``). Each coupling comes from
    ``coupling_source[(a, a + 1)]`` when given, otherwise from the smallest
    fits covering that pair.
    """
    target = tuple(int(i) for i in target_indices)
    if any(b - a != 1 for a, b in zip(target, target[1:])):
        raise ConfigurationError(f"target {target} is not contiguous")
    if weighting not in ("mean", "loss"):
        raise ConfigurationError(f"unknown weighting {weighting!r}")
    fits = _ordered(fits)
    models: dict[int, tuple[HamiltonianSpec, NoiseSpec]] = {}

    def model(f: SubsystemFit) -> tuple[HamiltonianSpec, NoiseSpec]:
        if id(f) not in models:
            models[id(f)] = f.result.best_params.to_model()
        return models[id(f)]

    def weight(f: SubsystemFit) -> float:
        if weighting == "mean":
            return 1.0
        return 1.0 / max(f.result.loss, 1e-300)

    general = any(f.result.best_params.mode == "general" for f in fits)
    freqs, gammas, temps = [], [], []
    for q in target:
        contrib = [f for f in fits if q in f.qubit_indices]
        if not contrib:
            raise ConfigurationError(f"qubit {q} is not covered by any fit")
        w = [weight(f) for f in contrib]
        fv = [model(f)[0].freqs[f.local(q)] for f in contrib]
        nz = [model(f)[1] for f in contrib]
        freqs.append(
            FrequencyVector(
                _combine([x.wx for x in fv], w), _combine([x.wy for x in fv], w), _combine([x.wz for x in fv], w)
            )
        )
        gammas.append(_combine([n.gamma[f.local(q)] for n, f in zip(nz, contrib)], w))
        temps.append(_combine([n.temperature[f.local(q)] for n, f in zip(nz, contrib)], w))
    couplings = []
    for a in target[:-1]:
        pair = (a, a + 1)
        if coupling_source and pair in coupling_source:
            sources = [coupling_source[pair]]
            if a not in sources[0].qubit_indices or a + 1 not in sources[0].qubit_indices:
                raise MissingCoupling(f"designated fit {sources[0].name} does not contain pair {pair}")
        else:
            covering = [f for f in fits if a in f.qubit_indices and a + 1 in f.qubit_indices]
            if not covering:
                raise MissingCoupling(f"no fit covers pair {pair}")
            smallest = min(len(f.qubit_indices) for f in covering)
            sources = [f for f in covering if len(f.qubit_indices) == smallest]
        mats = [model(f)[0].couplings[f.local(a)].j for f in sources]
        w = [weight(f) for f in sources]
        j = np.array([[_combine([m[r, c] for m in mats], w) for c in range(3)] for r in range(3)])
        couplings.append(CouplingMatrix(j))
    simple = not general and all(f.wx == 0 and f.wy == 0 for f in freqs) and all(c.is_flip_flop for c in couplings)
    h = HamiltonianSpec(tuple(freqs), tuple(couplings), mode="simple" if simple else "general")
    return h, NoiseSpec(tuple(gammas), tuple(temps))
