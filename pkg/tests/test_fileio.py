import json

import numpy as np
import pytest

from lindcal.calibrate import FitConfig, ParameterVector, adam_fit
from lindcal.errors import ConfigurationError
from lindcal.fileio import (
    REFERENCE_DEVICE,
    config_from_dict,
    fit_from_json,
    fit_table,
    fit_to_json,
    params_from_json,
    params_to_json,
    record_from_csv,
    record_to_csv,
    reference_config,
)
from lindcal.measurement import ConfusionMatrix, ExperimentRecord, mitigate, sample_record
from lindcal.propagator import ExperimentKind, TimeGrid, simulate_populations


def sampled_record(n=2, shots=8192, scale=1.0):
    cfg = reference_config().subsystem(range(n))
    grid = TimeGrid(scale_factor=scale)
    p = simulate_populations(ExperimentKind.T1_11, *cfg.model(), grid)
    return sample_record(ExperimentKind.T1_11, grid, p, shots, 7, cfg.confusion())


def test_csv_layout():
    text = record_to_csv(sampled_record())
    lines = text.splitlines()
    header = next(l for l in lines if not l.startswith("#"))
    assert header == "t_us,00,01,10,11"
    rows = [l for l in lines if l[0].isdigit()]
    assert len(rows) == 75
    assert rows[1].split(",")[0] == "4"


def test_csv_round_trip_byte_identical():
    for rec in (sampled_record(1), sampled_record(3, shots=1000, scale=1.3)):
        text = record_to_csv(rec)
        back = record_from_csv(text)
        assert record_to_csv(back) == text
        assert np.array_equal(back.counts, rec.counts)
        assert back.grid == rec.grid and back.kind is rec.kind and back.seed == rec.seed


def test_mitigated_and_noiseless_round_trip():
    rec = sampled_record()
    mit = mitigate(rec, ConfusionMatrix.symmetric([0.02, 0.02]))
    text = record_to_csv(mit)
    back = record_from_csv(text)
    assert back.mitigated and back.counts is None
    assert record_to_csv(back) == text
    exact = ExperimentRecord(rec.kind, rec.grid, 8192, simulate_populations(rec.kind, *reference_config().subsystem([0, 1]).model(), rec.grid))
    back = record_from_csv(record_to_csv(exact))
    assert not back.mitigated and back.counts is None
    assert np.allclose(back.probs, exact.probs, atol=1e-9)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda t: t.replace("t_us,00,01,10,11", "t_us,00,10,01,11"),
        lambda t: t.replace("# kind=T1_11", "# kind=T9"),
        lambda t: "\n".join(t.splitlines()[:-1]) + "\n",
        lambda t: t.replace("# t_step_us=4", "# t_step_us=5"),
        lambda t: t.replace("# shots=8192", "# shots=8191"),
    ],
)
def test_csv_rejects_inconsistent_files(mutate):
    with pytest.raises(ConfigurationError):
        record_from_csv(mutate(record_to_csv(sampled_record())))


def test_reference_config_units():
    cfg = reference_config()
    assert cfg.n_qubits == 3
    assert cfg.qubits[0].omega == (0.0, 0.0, 31420.0)
    h, noise = cfg.model()
    assert h.couplings[0].flip_flop_amplitude == pytest.approx(8.31)
    assert noise.t1(h.omega_norms())[1] == pytest.approx(106.95)


def test_config_unit_override_and_keys():
    doc = {"qubits": [{"omega_ghz": 5.0, "t1_us": 80.0}], "temperature_guess_mk": 30}
    cfg = config_from_dict(doc)
    assert cfg.qubits[0].omega[2] == pytest.approx(2 * np.pi * 5e3)
    assert cfg.qubits[0].temperature_mk == 30
    assert config_from_dict(doc, "rad_per_ns").qubits[0].omega[2] == pytest.approx(5e3)
    vec = config_from_dict({"mode": "general", "qubits": [{"omega_vector_rad_per_ns": [0.1, 0.0, 31.0], "t1_us": 90}]})
    assert vec.qubits[0].omega == pytest.approx((100.0, 0.0, 31000.0))


@pytest.mark.parametrize(
    "doc",
    [
        {},
        {"qubits": [{"t1_us": 10}]},
        {"qubits": [{"omega_rad_per_ns": 31.0, "t1_us": -1}]},
        {"qubits": [{"omega_rad_per_ns": 31.0, "t1_us": 90}] * 2},
        {"n_qubits": 2, "qubits": [{"omega_rad_per_ns": 31.0, "t1_us": 90}]},
        {"qubits": [{"omega_rad_per_ns": 31.0, "t1_us": 90, "temperature_mk": 0}]},
    ],
)
def test_config_validation(doc):
    with pytest.raises(ConfigurationError):
        config_from_dict(doc)


def test_subsystem_view():
    sub = reference_config().subsystem([1, 2])
    assert sub.names == (1, 2) and sub.qubits[0].omega[2] == 30470.0
    assert sub.couplings[0][0, 0] == pytest.approx(7.42 / 2)
    with pytest.raises(ConfigurationError):
        reference_config().subsystem([0, 2])


def test_params_json_round_trip():
    p = reference_config().claimed_parameters()
    back, free = params_from_json(json.loads(json.dumps(params_to_json(p, ["q0.gamma"]))))
    assert np.array_equal(back.values, p.values)
    assert free == ("q0.gamma",)


def test_fit_json_round_trip_and_table():
    cfg = reference_config().subsystem([0])
    rec = sample_record(ExperimentKind.T1_11, TimeGrid(), simulate_populations(ExperimentKind.T1_11, *cfg.model(), TimeGrid()), 8192, 3)
    res = adam_fit(cfg.claimed_parameters(), [rec], FitConfig(max_iters=20, restarts=1))
    doc = json.loads(json.dumps(fit_to_json(res, [0], [rec], cfg.claimed_parameters())))
    back, idx = fit_from_json(doc)
    assert idx == (0,)
    assert np.array_equal(back.best_params.values, res.best_params.values)
    assert back.loss == res.loss and back.free == res.free and back.loss_history == res.loss_history
    assert doc["params"][1] == {"name": "q0.gamma", "value": res.best_params["q0.gamma"], "unit": "1/us", "free": True}
    table = fit_table(res, cfg.claimed_parameters())
    assert "T (mK)" in table and "100.24" in table


def test_reference_device_not_mutated():
    before = json.dumps(REFERENCE_DEVICE, sort_keys=True)
    reference_config().subsystem([0, 1])
    assert json.dumps(REFERENCE_DEVICE, sort_keys=True) == before
