"""Record CSV, device-config JSON and fit-result JSON formats."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .calibrate import FitResult, ParameterLayout, ParameterVector, derived_report
from .errors import ConfigurationError
from .measurement import ConfusionMatrix, ExperimentRecord
from .propagator import ExperimentKind, TimeGrid
from .qdyn import RAD_PER_NS, CouplingMatrix, FrequencyVector, HamiltonianSpec, NoiseSpec, bitstrings

DEFAULT_READOUT_FLIP = 0.02
DEFAULT_TEMPERATURE_MK = 50.0


def fmt(x: float) -> str:
    return f"{x:.9g}"


# -- record CSV ------------------------------------------------------------------


def record_to_csv(record: ExperimentRecord) -> str:
    g = record.grid
    meta = [
        ("kind", record.kind.name),
        ("n_qubits", str(record.n_qubits)),
        ("shots", str(record.shots)),
        ("seed", "" if record.seed is None else str(record.seed)),
        ("mitigated", "true" if record.mitigated else "false"),
        ("sampled", "false" if record.counts is None and not record.mitigated else "true"),
        ("t_start_us", fmt(g.t_start)),
        ("t_step_us", fmt(g.t_step)),
        ("n_points", str(g.n_points)),
        ("scale_factor", fmt(g.scale_factor)),
    ]
    lines = [f"# {k}={v}" for k, v in meta]
    lines.append(",".join(["t_us"] + record.labels))
    for t, row in zip(g.times, record.probs):
        lines.append(",".join([fmt(t)] + _row_strings(row)))
    return "\n".join(lines) + "\n"


def _row_strings(row: np.ndarray) -> list[str]:
    # Print the largest entry as 1 minus the printed others, so parsed rows sum
    # to 1 within 1e-9 and a second write reproduces the same digits.
    text = [fmt(x) for x in row]
    vals = [float(x) for x in text]
    k = int(np.argmax(vals))
    text[k] = fmt(1.0 - math.fsum(v for i, v in enumerate(vals) if i != k))
    return text


def record_from_csv(text: str) -> ExperimentRecord:
    meta: dict[str, str] = {}
    rows: list[list[float]] = []
    header: list[str] | None = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif header is None:
            header = line.split(",")
        else:
            rows.append([float(x) for x in line.split(",")])
    try:
        kind = ExperimentKind.from_name(meta["kind"])
        n = int(meta["n_qubits"])
        shots = int(meta["shots"])
        grid = TimeGrid(float(meta["t_start_us"]), float(meta["t_step_us"]), int(meta["n_points"]), float(meta["scale_factor"]))
        mitigated = meta["mitigated"] == "true"
        seed = int(meta["seed"]) if meta.get("seed") else None
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad record metadata: {exc}") from None
    if header != ["t_us"] + bitstrings(n):
        raise ConfigurationError(f"unexpected CSV header {header}")
    data = np.array(rows, dtype=float)
    if data.shape != (grid.n_points, 1 + 2**n):
        raise ConfigurationError(f"expected {grid.n_points} rows of {1 + 2**n} columns, got {data.shape}")
    if not np.allclose(data[:, 0], grid.times, rtol=1e-8, atol=1e-9):
        raise ConfigurationError("time column does not match the declared grid")
    probs = data[:, 1:]
    if mitigated or meta.get("sampled", "true") == "false":
        # 9 significant digits keep row sums within the record's 1e-9 tolerance;
        # values are kept verbatim so that write -> read -> write is exact.
        return ExperimentRecord(kind, grid, shots, probs, None, mitigated, seed)
    counts = np.rint(probs * shots).astype(np.int64)
    if np.any(counts.sum(axis=1) != shots):
        raise ConfigurationError("raw probabilities are not multiples of 1/shots")
    return ExperimentRecord(kind, grid, shots, counts / shots, counts, False, seed)


def write_record(path: str | Path, record: ExperimentRecord) -> None:
    Path(path).write_text(record_to_csv(record))


def read_record(path: str | Path) -> ExperimentRecord:
    return record_from_csv(Path(path).read_text())


# -- JSON helpers ------------------------------------------------------------------


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(dump_json(obj))


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


# -- device configuration -------------------------------------------------------------


@dataclass(frozen=True)
class QubitConfig:
    omega: tuple[float, float, float]  # rad/us
    t1_us: float
    t2_us: float | None = None
    temperature_mk: float = DEFAULT_TEMPERATURE_MK
    readout_flip: float = DEFAULT_READOUT_FLIP


@dataclass(frozen=True)
class DeviceConfig:
    """Claimed device parameters. Frequencies are stored internally in rad/us."""

    qubits: tuple[QubitConfig, ...]
    couplings: tuple[np.ndarray, ...] = ()  # 3x3 J matrices, rad/us
    mode: str = "simple"
    names: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        n = len(self.qubits)
        if n < 1:
            raise ConfigurationError("config needs at least one qubit")
        if len(self.couplings) != n - 1:
            raise ConfigurationError(f"{n} qubits need {n - 1} couplings, got {len(self.couplings)}")
        for q in self.qubits:
            if not np.linalg.norm(q.omega) > 0 or not q.t1_us > 0 or not q.temperature_mk > 0:
                raise ConfigurationError("claimed frequency, T1 and temperature must be positive")
            if q.t2_us is not None and not q.t2_us > 0:
                raise ConfigurationError("claimed T2 must be positive")
        if not self.names:
            object.__setattr__(self, "names", tuple(range(n)))

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    def subsystem(self, indices: Sequence[int]) -> "DeviceConfig":
        idx = [self.names.index(i) if i in self.names else -1 for i in indices]
        if any(i < 0 for i in idx) or any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise ConfigurationError(f"subsystem {list(indices)} is not a contiguous part of the device")
        return DeviceConfig(
            tuple(self.qubits[i] for i in idx),
            tuple(self.couplings[i] for i in idx[:-1]),
            self.mode,
            tuple(self.names[i] for i in idx),
        )

    def model(self) -> tuple[HamiltonianSpec, NoiseSpec]:
        freqs = tuple(FrequencyVector(*q.omega) for q in self.qubits)
        couplings = tuple(CouplingMatrix(j) for j in self.couplings)
        h = HamiltonianSpec(freqs, couplings, self.mode)
        temps = [q.temperature_mk * 1e-3 for q in self.qubits]
        noise = NoiseSpec.from_t1([q.t1_us for q in self.qubits], temps, h.omega_norms())
        return h, noise

    def claimed_parameters(self) -> ParameterVector:
        h, noise = self.model()
        return ParameterVector.from_model(h, noise, self.mode)

    def confusion(self) -> ConfusionMatrix:
        return ConfusionMatrix.symmetric([q.readout_flip for q in self.qubits])


def _freq_from(entry: dict, unit_override: str | None) -> tuple[float, float, float]:
    scale = {"rad_per_ns": RAD_PER_NS, "ghz": 2 * math.pi * RAD_PER_NS, "rad_per_us": 1.0}
    for key, unit in (("omega_vector_rad_per_ns", "rad_per_ns"), ("omega_vector_ghz", "ghz"), ("omega_vector_rad_per_us", "rad_per_us")):
        if key in entry:
            vec = [float(x) for x in entry[key]]
            if len(vec) != 3:
                raise ConfigurationError(f"{key} must have three components")
            f = scale[unit_override or unit]
            return (vec[0] * f, vec[1] * f, vec[2] * f)
    for key, unit in (("omega_rad_per_ns", "rad_per_ns"), ("omega_ghz", "ghz"), ("omega_rad_per_us", "rad_per_us")):
        if key in entry:
            return (0.0, 0.0, float(entry[key]) * scale[unit_override or unit])
    raise ConfigurationError("qubit entry needs omega_rad_per_ns, omega_ghz or omega_rad_per_us")


def _coupling_from(entry: dict, unit_override: str | None) -> np.ndarray:
    scale = {"rad_per_ns": RAD_PER_NS, "ghz": 2 * math.pi * RAD_PER_NS, "rad_per_us": 1.0}
    for unit in ("rad_per_ns", "ghz", "rad_per_us"):
        if f"j_matrix_{unit}" in entry:
            m = np.array(entry[f"j_matrix_{unit}"], dtype=float)
            if m.shape != (3, 3):
                raise ConfigurationError("coupling matrix must be 3x3")
            return m * scale[unit_override or unit]
        if f"j_{unit}" in entry:
            return CouplingMatrix.flip_flop(float(entry[f"j_{unit}"]) * scale[unit_override or unit]).j
    raise ConfigurationError("coupling entry needs j_rad_per_ns (or j_ghz / j_matrix_*)")


def config_from_dict(d: dict, unit_override: str | None = None) -> DeviceConfig:
    """Parse a device config; ``unit_override`` reinterprets every frequency key's unit."""
    if unit_override not in (None, "rad_per_ns", "ghz", "rad_per_us"):
        raise ConfigurationError(f"unknown frequency unit {unit_override!r}")
    try:
        qubits_raw = d["qubits"]
        default_t = float(d.get("temperature_guess_mk", DEFAULT_TEMPERATURE_MK))
        default_flip = float(d.get("readout_flip", DEFAULT_READOUT_FLIP))
        qubits = tuple(
            QubitConfig(
                _freq_from(q, unit_override),
                float(q["t1_us"]),
                float(q["t2_us"]) if "t2_us" in q else None,
                float(q.get("temperature_mk", default_t)),
                float(q.get("readout_flip", default_flip)),
            )
            for q in qubits_raw
        )
        couplings = tuple(_coupling_from(c, unit_override) for c in d.get("couplings", []))
        mode = d.get("mode", "simple")
        names = tuple(int(i) for i in d.get("qubit_indices", range(len(qubits))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad device config: {exc!r}") from None
    if "n_qubits" in d and int(d["n_qubits"]) != len(qubits):
        raise ConfigurationError(f"n_qubits={d['n_qubits']} but {len(qubits)} qubit entries")
    if len(names) != len(qubits):
        raise ConfigurationError("qubit_indices length does not match qubits")
    return DeviceConfig(qubits, couplings, mode, names)


def load_config(path: str | Path, unit_override: str | None = None) -> DeviceConfig:
    try:
        data = read_json(path)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return config_from_dict(data, unit_override)


# Claimed values of a five-qubit linear device (first three qubits).
REFERENCE_DEVICE = {
    "n_qubits": 3,
    "mode": "simple",
    "temperature_guess_mk": 50.0,
    "readout_flip": DEFAULT_READOUT_FLIP,
    "qubits": [
        {"omega_rad_per_ns": 31.42, "t1_us": 100.24, "temperature_mk": 47.96},
        {"omega_rad_per_ns": 30.47, "t1_us": 106.95, "temperature_mk": 54.20},
        {"omega_rad_per_ns": 30.05, "t1_us": 101.45, "temperature_mk": 50.30},
    ],
    "couplings": [
        {"pair": [0, 1], "j_rad_per_ns": 8.31e-3},
        {"pair": [1, 2], "j_rad_per_ns": 7.42e-3},
    ],
}


def reference_config() -> DeviceConfig:
    return config_from_dict(REFERENCE_DEVICE)


# -- parameters and fit results ---------------------------------------------------------


def params_to_json(params: ParameterVector, free: Sequence[str] | None = None) -> dict:
    free_set = set(params.layout.names if free is None else free)
    return {
        "n_qubits": params.n_qubits,
        "mode": params.mode,
        "params": [
            {"name": s.name, "value": float(v), "unit": s.unit, "free": s.name in free_set}
            for s, v in zip(params.layout.slots, params.values)
        ],
    }


def params_from_json(d: dict) -> tuple[ParameterVector, tuple[str, ...]]:
    try:
        layout = ParameterLayout(int(d["n_qubits"]), d["mode"])
        values = {p["name"]: float(p["value"]) for p in d["params"]}
        free = tuple(p["name"] for p in d["params"] if p.get("free", True))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad parameter document: {exc!r}") from None
    return ParameterVector.pack(values, layout), free


def fit_to_json(
    result: FitResult,
    qubit_indices: Sequence[int] | None = None,
    records: Sequence[ExperimentRecord] = (),
    claimed: ParameterVector | None = None,
) -> dict:
    doc = params_to_json(result.best_params, result.free)
    doc.update(
        {
            "qubit_indices": list(qubit_indices if qubit_indices is not None else range(result.best_params.n_qubits)),
            "loss": result.loss,
            "iterations_used": result.iterations_used,
            "restarts_used": result.restarts_used,
            "loss_history": list(result.loss_history),
            "derived": result.derived,
            "records": [
                {
                    "kind": r.kind.name,
                    "t_start_us": r.grid.t_start,
                    "t_step_us": r.grid.t_step,
                    "n_points": r.grid.n_points,
                    "scale_factor": r.grid.scale_factor,
                    "shots": r.shots,
                    "mitigated": r.mitigated,
                }
                for r in records
            ],
        }
    )
    if claimed is not None:
        doc["claimed"] = params_to_json(claimed)["params"]
        doc["claimed_derived"] = derived_report(claimed)
    return doc


def fit_from_json(d: dict) -> tuple[FitResult, tuple[int, ...]]:
    params, free = params_from_json(d)
    try:
        result = FitResult(
            params,
            float(d["loss"]),
            [float(x) for x in d.get("loss_history", [])],
            int(d.get("iterations_used", 0)),
            int(d.get("restarts_used", 0)),
            free,
            d.get("derived") or derived_report(params),
        )
        indices = tuple(int(i) for i in d.get("qubit_indices", range(params.n_qubits)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad fit document: {exc!r}") from None
    return result, indices


def _jtxt(entry: dict | None) -> str:
    if entry is None:
        return "-"
    return f"{entry.get('j_rad_per_ns', entry['j_norm_rad_per_ns']):.3e}"


def fit_table(result: FitResult, claimed: ParameterVector | None = None, qubit_indices: Sequence[int] | None = None) -> str:
    """Claimed-versus-fitted table: omega (rad/ns), T1 (us), J (rad/ns), T (mK)."""
    idx = list(qubit_indices if qubit_indices is not None else range(result.best_params.n_qubits))
    fit = result.derived or derived_report(result.best_params)
    ref = derived_report(claimed) if claimed is not None else None
    head = f"{'qubit':<7}{'w claim':>10}{'T1 claim':>10}{'J claim':>11} | {'w fit':>10}{'T1 fit':>10}{'J fit':>11}{'T (mK)':>10}"
    lines = [head, "-" * len(head)]
    for q, row in enumerate(fit["qubits"]):
        j_fit = fit["couplings"][q] if q < len(fit["couplings"]) else None
        if ref is not None:
            c = ref["qubits"][q]
            j_ref = ref["couplings"][q] if q < len(ref["couplings"]) else None
            claim = f"{c['omega_rad_per_ns']:>10.4g}{c['t1_us']:>10.2f}{_jtxt(j_ref):>11}"
        else:
            claim = f"{'-':>10}{'-':>10}{'-':>11}"
        lines.append(
            f"{'q' + str(idx[q]):<7}{claim} | "
            f"{row['omega_rad_per_ns']:>10.4g}{row['t1_us']:>10.2f}{_jtxt(j_fit):>11}{row['temperature_mk']:>10.2f}"
        )
    lines.append(f"loss = {result.loss:.4e}")
    return "\n".join(lines)
