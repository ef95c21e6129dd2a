"""Command-line front end: simulate, fit, stitch, plot and mitigate."""

from __future__ import annotations

import argparse
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fileio
from .calibrate import FitConfig, FitResult, ParameterVector, adam_fit
from .errors import (
    ConfigurationError,
    DomainError,
    IncompleteCalibration,
    InputError,
    LindcalError,
    MissingCoupling,
    MitigationUnreliable,
    NothingToCompare,
)
from .measurement import (
    ConfusionMatrix,
    ExperimentRecord,
    calibration_counts,
    estimate_confusion,
    mitigate,
    sample_record,
)
from .propagator import ExperimentKind, TimeGrid, simulate_populations
from .qdyn import bitstrings
from .stitch import DEFAULT_THRESHOLDS, SubsystemFit, consistency_check, predict_composite

log = logging.getLogger("lindcal")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_INCONSISTENT = 4

KIND_NAMES = [k.cli_name for k in ExperimentKind]


class InputMismatch(LindcalError):
    """Inputs are individually valid but disagree with each other."""


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None


def _subsystem(arg: str | None, n: int) -> tuple[int, ...]:
    if arg is None:
        return tuple(range(n))
    try:
        idx = tuple(int(x) for x in arg.split(","))
    except ValueError:
        raise ConfigurationError(f"--subsystem expects comma-separated indices, got {arg!r}") from None
    if len(idx) != n:
        raise ConfigurationError(f"--subsystem lists {len(idx)} qubits but --qubits is {n}")
    return idx


def _config(args: argparse.Namespace) -> fileio.DeviceConfig:
    if args.config is None:
        return fileio.reference_config()
    return fileio.load_config(args.config, args.units)


def _read_records(paths: Sequence[str]) -> list:
    return [fileio.record_from_csv(_read_text(p)) for p in paths]


def _read_calibration(path: str, n_qubits: int) -> ConfusionMatrix:
    doc = fileio.read_json(path) if Path(path).exists() else None
    if doc is None:
        raise ConfigurationError(f"cannot read calibration file {path}")
    if int(doc.get("n_qubits", -1)) != n_qubits:
        raise InputMismatch(f"calibration is for {doc.get('n_qubits')} qubits, records have {n_qubits}")
    return estimate_confusion(n_qubits, doc.get("counts", {}))


# -- simulate ----------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    idx = _subsystem(args.subsystem, args.qubits)
    sub = cfg.subsystem(idx)
    if args.truth:
        truth, _ = fileio.params_from_json(fileio.read_json(args.truth))
        if truth.n_qubits != args.qubits:
            raise InputMismatch(f"truth parameters describe {truth.n_qubits} qubits, --qubits is {args.qubits}")
    else:
        truth = sub.claimed_parameters()
    kind = ExperimentKind.from_name(args.kind)
    grid = TimeGrid(0.0, args.dt_us, args.steps, args.scale)
    h, noise = truth.to_model()
    probs = simulate_populations(kind, h, noise, grid)
    confusion = None if args.no_readout_error or args.noiseless else sub.confusion()
    if args.noiseless:
        record = ExperimentRecord(kind, grid, args.shots, probs, seed=args.seed)
    else:
        record = sample_record(kind, grid, probs, args.shots, args.seed, confusion)
    _emit(fileio.record_to_csv(record), args.out)
    if args.out and args.out != "-":
        sidecar = fileio.params_to_json(truth)
        sidecar["qubit_indices"] = list(idx)
        sidecar["readout_flip"] = None if confusion is None else [q.readout_flip for q in sub.qubits]
        fileio.write_json(args.out + ".truth.json", sidecar)
    if args.calibration_out:
        m = confusion or ConfusionMatrix.identity(args.qubits)
        counts = calibration_counts(m, args.shots, args.seed)
        fileio.write_json(
            args.calibration_out,
            {"n_qubits": args.qubits, "shots": args.shots, "counts": {b: c.tolist() for b, c in counts.items()}},
        )
    return EXIT_OK


# -- fit ---------------------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    records = _read_records(args.records)
    sizes = {r.n_qubits for r in records}
    if len(sizes) != 1:
        raise InputMismatch(f"records disagree on qubit count: {sorted(sizes)}")
    n = sizes.pop()
    cfg = _config(args)
    idx = _subsystem(args.subsystem, n)
    claimed = cfg.subsystem(idx).claimed_parameters()
    if args.calibration:
        m = _read_calibration(args.calibration, n)
        records = [r if r.mitigated else mitigate(r, m) for r in records]
    base = FitConfig()
    fit_cfg = FitConfig(
        alpha=args.alpha if args.alpha is not None else base.alpha,
        max_iters=args.iters if args.iters is not None else base.max_iters,
        restarts=args.restarts if args.restarts is not None else base.restarts,
        free=tuple(args.free.split(",")) if args.free else None,
    )
    if fit_cfg.free is not None:
        unknown = [s for s in fit_cfg.free if s not in claimed.layout.names]
        if unknown:
            raise ConfigurationError(f"unknown slots in --free: {unknown}")
    result = adam_fit(claimed, records, fit_cfg)
    doc = fileio.fit_to_json(result, idx, records, claimed)
    if args.out:
        fileio.write_json(args.out, doc)
    _emit(fileio.fit_table(result, claimed, idx) + "\n", args.table)
    return EXIT_OK


# -- stitch ------------------------------------------------------------------------


def _parse_thresholds(items: Sequence[str]) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for item in items:
        sym, sep, val = item.partition("=")
        if not sep or sym not in DEFAULT_THRESHOLDS:
            raise ConfigurationError(f"--threshold expects SYMBOL=VALUE with SYMBOL in {sorted(DEFAULT_THRESHOLDS)}")
        try:
            out[sym] = None if val.lower() in ("none", "off") else float(val)
        except ValueError:
            raise ConfigurationError(f"bad threshold value {val!r}") from None
    return out


def _load_fit(path: str) -> SubsystemFit:
    result, idx = fileio.fit_from_json(fileio.read_json(path))
    return SubsystemFit(idx, result, Path(path).stem)


def cmd_stitch(args: argparse.Namespace) -> int:
    if len(args.fits) < 2:
        raise InputMismatch("stitch needs at least two fit results")
    fits = [_load_fit(p) for p in args.fits]
    report = consistency_check(fits, _parse_thresholds(args.threshold))
    if args.json_out:
        fileio.write_json(args.json_out, report.to_json())
    _emit(report.render() + "\n", args.out)
    if args.composite:
        target = sorted({q for f in fits for q in f.qubit_indices})
        h, noise = predict_composite(fits, target, weighting=args.weighting)
        doc = fileio.params_to_json(ParameterVector.from_model(h, noise))
        doc["qubit_indices"] = target
        fileio.write_json(args.composite, doc)
    return EXIT_OK if report.passed else EXIT_INCONSISTENT


# -- plot --------------------------------------------------------------------------


def plot_series(record, result: FitResult | None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """(nominal times, record probabilities, model populations or None)."""
    model = None
    if result is not None:
        h, noise = result.best_params.to_model()
        # Curves are evolved for the scaled delays but drawn against nominal times.
        model = simulate_populations(record.kind, h, noise, record.grid)
    return record.grid.times, record.probs, model


def render_svg(record, result: FitResult | None, title: str = "") -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t, data, model = plot_series(record, result)
    with matplotlib.rc_context({"svg.hashsalt": "lindcal", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        colors = plt.get_cmap("tab10").colors
        for j, label in enumerate(bitstrings(record.n_qubits)):
            c = colors[j % len(colors)]
            ax.plot(t, data[:, j], "o", ms=3, mfc="none", color=c, label=f"|{label}> data", gid=f"data-{label}")
            if model is not None:
                ax.plot(t, model[:, j], "-", lw=1.5, color=c, label=f"|{label}> model", gid=f"model-{label}")
        ax.set_xlabel("delay (us)")
        ax.set_ylabel("population")
        ax.set_ylim(-0.02, 1.02)
        n = record.n_qubits
        ax.set_title(title or f"{record.kind.circuit} ({n} qubit{'s' if n > 1 else ''})")
        ax.legend(fontsize=7, ncol=2)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def cmd_plot(args: argparse.Namespace) -> int:
    record = fileio.record_from_csv(_read_text(args.record))
    result = None
    if args.fit:
        doc = fileio.read_json(args.fit)
        result, _ = fileio.fit_from_json(doc)
        if result.best_params.n_qubits != record.n_qubits:
            raise InputMismatch("fit and record describe different qubit counts")
        for meta in doc.get("records", []):
            if meta.get("kind") != record.kind.name:
                continue
            g = TimeGrid(meta["t_start_us"], meta["t_step_us"], meta["n_points"], meta["scale_factor"])
            if g != record.grid:
                raise InputMismatch(f"record grid {record.grid} differs from the fitted grid {g}")
    _emit(render_svg(record, result), args.out)
    return EXIT_OK


# -- mitigate ----------------------------------------------------------------------


def cmd_mitigate(args: argparse.Namespace) -> int:
    record = fileio.record_from_csv(_read_text(args.record))
    m = _read_calibration(args.calibration, record.n_qubits)
    _emit(fileio.record_to_csv(mitigate(record, m)), args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lindcal", description="GKSL calibration of coupled transmon qubits.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", help="device config JSON (default: built-in reference device)")
        sp.add_argument("--units", choices=["rad_per_ns", "ghz", "rad_per_us"], help="override frequency units of the config")
        sp.add_argument("--subsystem", help="comma-separated device qubit indices (default 0..n-1)")

    s = sub.add_parser("simulate", help="shot-sampled synthetic record")
    config_flags(s)
    s.add_argument("--kind", choices=KIND_NAMES, default="t1")
    s.add_argument("--qubits", type=int, default=1, choices=[1, 2, 3])
    s.add_argument("--steps", type=int, default=75)
    s.add_argument("--dt-us", type=float, default=4.0)
    s.add_argument("--shots", type=int, default=8192)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--truth", help="parameter JSON to simulate instead of the claimed values")
    s.add_argument("--no-readout-error", action="store_true")
    s.add_argument("--noiseless", action="store_true", help="write exact populations (no shots, no readout error)")
    s.add_argument("--calibration-out", help="also write simulated calibration counts")
    s.add_argument("--out", help="CSV path (default stdout); a .truth.json sidecar is written next to it")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="Adam least-squares fit of records")
    config_flags(f)
    f.add_argument("records", nargs="+")
    f.add_argument("--calibration", help="calibration counts JSON; records are mitigated first")
    f.add_argument("--alpha", type=float)
    f.add_argument("--iters", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--free", help="comma-separated slot names to fit (default: identifiable slots)")
    f.add_argument("--out", help="fit result JSON")
    f.add_argument("--table", help="write the claimed-vs-fit table here instead of stdout")
    f.set_defaults(func=cmd_fit)

    st = sub.add_parser("stitch", help="consistency check across subsystem fits")
    st.add_argument("fits", nargs="+")
    st.add_argument("--threshold", action="append", default=[], metavar="SYM=VAL")
    st.add_argument("--json-out")
    st.add_argument("--composite", help="write the assembled parameter set here")
    st.add_argument("--weighting", choices=["mean", "loss"], default="mean")
    st.add_argument("--out", help="text report path (default stdout)")
    st.set_defaults(func=cmd_stitch)

    pl = sub.add_parser("plot", help="SVG of record data and fitted model")
    pl.add_argument("record")
    pl.add_argument("--fit")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    mi = sub.add_parser("mitigate", help="readout-error mitigation of a record")
    mi.add_argument("record")
    mi.add_argument("--calibration", required=True)
    mi.add_argument("--out")
    mi.set_defaults(func=cmd_mitigate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except (InputMismatch, InputError, NothingToCompare, MissingCoupling, IncompleteCalibration, MitigationUnreliable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LindcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
