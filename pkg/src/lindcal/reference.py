"""Published per-subsystem estimates for a three-qubit linear chain.

Frequencies and couplings are in rad/ns, relaxation times in us and
temperatures in mK. Each entry lists one subsystem fit; ``j`` is the
coupling between consecutive qubits of that subsystem and ``j_frozen``
marks couplings that were held at their claimed value.
"""

from __future__ import annotations

from .calibrate import FitResult, ParameterVector, derived_report
from .qdyn import RAD_PER_NS, CouplingMatrix, FrequencyVector, HamiltonianSpec, NoiseSpec
from .stitch import SubsystemFit

CLAIMED = {
    "omega": (31.42, 30.47, 30.05),
    "t1": (100.24, 106.95, 101.45),
    "j": (8.31e-3, 7.42e-3),
}

SUBSYSTEM_ESTIMATES = (
    {"label": "1q:0", "qubits": (0,), "omega": (31.42,), "t1": (101.23,), "temp": (47.96,)},
    {"label": "1q:1", "qubits": (1,), "omega": (30.47,), "t1": (108.31,), "temp": (54.20,)},
    {"label": "1q:2", "qubits": (2,), "omega": (30.05,), "t1": (105.92,), "temp": (50.30,)},
    {"label": "2q:01", "qubits": (0, 1), "omega": (31.42, 30.47), "t1": (96.49, 109.62), "temp": (6.62, 65.55), "j": (5.87e-3,)},
    {"label": "2q:12", "qubits": (1, 2), "omega": (30.47, 30.05), "t1": (109.26, 108.31), "temp": (73.63, 6.42), "j": (5.25e-3,)},
    {
        "label": "3q:012",
        "qubits": (0, 1, 2),
        "omega": (31.42, 30.47, 30.05),
        "t1": (98.16, 117.77, 108.08),
        "temp": (50.59, 67.92, 6.37),
        "j": (8.31e-3, 7.42e-3),
        "j_frozen": True,
    },
)


def canned_fit(entry: dict) -> SubsystemFit:
    """Wrap one table row set as a SubsystemFit with every reported slot free."""
    freqs = tuple(FrequencyVector(wz=w * RAD_PER_NS) for w in entry["omega"])
    couplings = tuple(CouplingMatrix.flip_flop(j * RAD_PER_NS) for j in entry.get("j", ()))
    h = HamiltonianSpec(freqs, couplings)
    noise = NoiseSpec.from_t1(list(entry["t1"]), [t * 1e-3 for t in entry["temp"]], h.omega_norms())
    params = ParameterVector.from_model(h, noise, "simple")
    free = tuple(n for n in params.layout.names if not (entry.get("j_frozen") and n.startswith("c")))
    result = FitResult(params, 0.0, [], 0, 0, free, derived_report(params))
    return SubsystemFit(entry["qubits"], result, entry["label"])


def canned_fits() -> list[SubsystemFit]:
    return [canned_fit(e) for e in SUBSYSTEM_ESTIMATES]
