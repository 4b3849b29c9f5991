"""Command-line pipelines: simulate, inject, train, detect, evaluate, sweep.

Exit status is 0 on success, 1 when inputs fail validation (bad flags,
missing or malformed files, schema mismatch, too little training data) and
2 when a computation fails at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cusum, pca
from .config import RunConfig
from .data import SignalKind, load_csv, write_csv
from .detector import Method, load_models, read_events, run, save_models, train, write_events
from .errors import (
    CellwatchError,
    IdentifiabilityError,
    NumericError,
    SimulationError,
    UsageError,
)
from .evaluation import DEFAULT_MAGNITUDES, SweepConfig, nominal_fpr, parse_range, score_run, sweep
from .simulator.anomalies import AnomalySpec, AnomalyType, GroundTruth, inject
from .simulator.cell import CellParams, CellState
from .simulator.fit import fit_params
from .simulator.generate import NoiseConfig, generate_group

logger = logging.getLogger("cellwatch")

RUNTIME_ERRORS = (NumericError, SimulationError, IdentifiabilityError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; bad flags are validation errors here
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_json(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p} is not valid JSON: {exc}") from None


def _config(args) -> RunConfig:
    return RunConfig.load(
        args.config,
        seed=getattr(args, "seed", None),
        variance_threshold=getattr(args, "variance_threshold", None),
        k_multiplier=getattr(args, "k_multiplier", None),
        h_multiplier=getattr(args, "h_multiplier", None),
    )


def _window(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:end seconds, got {text!r}") from None
    return a, b


# -- commands -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    noise = NoiseConfig(cfg.voltage_noise_std, cfg.temperature_noise_std)
    sim = generate_group(
        args.cells, duration=args.duration, seed=cfg.seed, dt=cfg.sample_interval,
        noise=noise, balancing=tuple(args.balancing or ()),
    )
    out = Path(args.out)
    write_csv(sim.dataset, out)
    _write_json(_sidecar(out, ".params.json"), {
        "params": [p.to_dict() for p in sim.params],
        "initial": [{"z": s.z, "v_c": s.v_c, "temp": s.temp} for s in sim.initial],
        "provenance": cfg.provenance(command="simulate", cells=args.cells, duration=args.duration),
    })
    print(f"wrote {out} ({len(sim.dataset)} samples, {args.cells} cells)")
    return 0


def _load_params(path, dataset, targets):
    if path is not None:
        doc = _read_json(path)
        params = [CellParams.from_dict(p) for p in doc["params"]]
        initial = [CellState(**s) for s in doc["initial"]] if "initial" in doc else None
        return params, initial
    # hybrid injection on measured data: identify the target cells only
    params = [CellParams()] * dataset.n_cells
    initial = [CellState(50.0, 0.0, float(dataset.temperatures[0, c])) for c in range(dataset.n_cells)]
    for c in targets:
        fit = fit_params(dataset, c)
        params[c], initial[c] = fit.params, fit.initial
    return params, initial


def cmd_inject(args) -> int:
    cfg = _config(args)
    data = load_csv(args.data, cfg.sample_interval)
    doc = _read_json(args.spec)
    doc.setdefault("duration", cfg.lead_duration_s)
    spec = AnomalySpec.from_dict(doc)
    if spec.anomaly_type.is_sensor_fault and spec.lead_noise_std is None:
        spec = AnomalySpec(**{**spec.__dict__, "lead_noise_std": abs(spec.bias()) * cfg.lead_noise_fraction})
    params, initial = _load_params(args.params, data, spec.target_cells)
    bad = inject(data, spec, params, seed=cfg.seed, initial=initial)
    out = Path(args.out)
    write_csv(bad, out)
    truth_path = Path(args.truth) if args.truth else _sidecar(out, ".truth.json")
    _write_json(truth_path, {
        **GroundTruth.for_dataset(spec, bad).to_dict(),
        "provenance": cfg.provenance(command="inject", data=str(args.data)),
    })
    print(f"wrote {out} and {truth_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data = load_csv(args.data, cfg.sample_interval)
    methods = [Method.PCA, Method.DIRECT] if args.method == "both" else [Method(args.method)]
    kinds = list(SignalKind) if args.kind == "both" else [SignalKind(args.kind)]
    prov = cfg.provenance(command="train", data=str(args.data))
    models = []
    for kind in kinds:
        for method in methods:
            cutoff = cfg.cutoff_pca_hz if method is Method.PCA else cfg.cutoff_direct_hz
            models.append(train(
                data, kind, method, cutoff_hz=cutoff, variance_threshold=cfg.variance_threshold,
                k_multiplier=cfg.k_multiplier, h_multiplier=cfg.h_multiplier, provenance=prov,
            ))
            m = models[-1]
            extra = f" p={m.pca.p}" if m.pca is not None else ""
            print(f"{kind.value}/{method.value}:{extra} h={m.cusum_cal[0].h:.6g}")
            for w in m.warnings:
                print(f"warning: {w}", file=sys.stderr)
    save_models(models, args.out, **prov)
    print(f"wrote {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    models = load_models(args.model)
    data = load_csv(args.data, cfg.sample_interval)
    results = [run(m, data) for m in models]
    out = Path(args.out)
    write_events(results, out)
    rates = {f"{r.kind.value}/{r.method.value}": nominal_fpr(r) for r in results}
    _write_json(_sidecar(out, ".meta.json"), {
        "flagged_pct": rates,
        "models": [m.provenance for m in models],
        "provenance": cfg.provenance(command="detect", data=str(args.data), model=str(args.model)),
    })
    for name, rate in rates.items():
        print(f"{name}: flagged {rate:.2f}% of post-warm-up samples")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    events = read_events(args.events)
    truth = GroundTruth.from_dict(_read_json(args.truth))
    kinds = truth.spec.anomaly_type.affected_kinds
    method = Method(args.method)
    chosen = [e for e in events if e.kind in kinds and e.method in (method, None)]
    if not chosen:
        raise UsageError(f"no {method.value} events for {', '.join(k.value for k in kinds)}")
    report = score_run(chosen, truth)
    doc = {
        "method": method.value,
        "report": report.to_dict(),
        "spec": truth.spec.to_dict(),
        "provenance": cfg.provenance(command="evaluate", events=str(args.events), truth=str(args.truth)),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    types = list(AnomalyType) if args.anomaly == "all" else [AnomalyType(args.anomaly)]
    mags = parse_range(args.theta) if args.theta else list(DEFAULT_MAGNITUDES)
    noise = NoiseConfig(cfg.voltage_noise_std, cfg.temperature_noise_std)
    scfg = SweepConfig(
        lead_duration_s=cfg.lead_duration_s,
        lead_noise_fraction=cfg.lead_noise_fraction,
        cutoff_pca_hz=cfg.cutoff_pca_hz,
        cutoff_direct_hz=cfg.cutoff_direct_hz,
        variance_threshold=cfg.variance_threshold,
        k_multiplier=cfg.k_multiplier,
        h_multiplier=cfg.h_multiplier,
        generator={"noise": noise, "dt": cfg.sample_interval},
    )
    result = sweep(types, mags, args.groups, cfg.seed, config=scfg, jobs=args.jobs)
    out = Path(args.out)
    result.write_csv(out)
    summary = Path(args.summary) if args.summary else _sidecar(out, ".json")
    result.write_summary(summary, **cfg.provenance(command="sweep", jobs_independent=True))
    print(f"wrote {out} and {summary} ({len(result.records)} runs)")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cellwatch", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON RunConfig; flags override its values")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (default 0)")

    sp = sub.add_parser("simulate", help="generate nominal telemetry for one cell group")
    common(sp)
    sp.add_argument("--out", required=True, help="output CSV; cell parameters go to <stem>.params.json")
    sp.add_argument("--cells", type=int, default=11, help="cells in the group (default 11)")
    sp.add_argument("--duration", type=float, default=86400.0, help="seconds to simulate (default 86400)")
    sp.add_argument("--balancing", type=_window, action="append", metavar="START:END",
                    help="balancing window in seconds; repeatable")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("inject", help="splice an anomaly into a telemetry CSV")
    common(sp)
    sp.add_argument("--data", required=True, help="nominal CSV")
    sp.add_argument("--spec", required=True, help="JSON anomaly spec: type, theta, start_t, duration, target_cells")
    sp.add_argument("--params", help="cell parameter JSON from simulate; fitted from the data when omitted")
    sp.add_argument("--out", required=True, help="anomalous CSV")
    sp.add_argument("--truth", help="ground-truth JSON (default <stem>.truth.json)")
    sp.set_defaults(func=cmd_inject)

    sp = sub.add_parser("train", help="train detectors on nominal telemetry")
    common(sp, seed=False)
    sp.add_argument("--data", required=True, help="nominal CSV")
    sp.add_argument("--out", required=True, help="model JSON")
    sp.add_argument("--method", choices=["pca", "direct", "both"], default="both")
    sp.add_argument("--kind", choices=["voltage", "temperature", "both"], default="both")
    sp.add_argument("--variance-threshold", type=float,
                    help=f"cumulative variance for the principal subspace (default {pca.DEFAULT_VARIANCE_THRESHOLD})")
    sp.add_argument("--k-multiplier", type=float, help=f"CUSUM slack in sigma_c (default {cusum.K_MULTIPLIER:g})")
    sp.add_argument("--h-multiplier", type=float, help=f"CUSUM limit in sigma_c (default {cusum.H_MULTIPLIER:g})")
    sp.epilog = (f"Low-pass cutoffs: {cusum.CUTOFF_PCA_HZ * 1e3:g} mHz (PCA), "
                 f"{cusum.CUTOFF_DIRECT_HZ * 1e3:g} mHz (direct); set them in --config.")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("detect", help="run trained detectors over telemetry")
    common(sp, seed=False)
    sp.add_argument("--model", required=True, help="model JSON from train")
    sp.add_argument("--data", required=True, help="telemetry CSV")
    sp.add_argument("--out", required=True, help="events JSON-lines file")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("evaluate", help="score detection events against ground truth")
    common(sp, seed=False)
    sp.add_argument("--events", required=True, help="events file from detect")
    sp.add_argument("--truth", required=True, help="ground-truth JSON from inject")
    sp.add_argument("--method", choices=["pca", "direct"], default="pca", help="which detector's events to score")
    sp.add_argument("--out", help="report JSON (also printed)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="magnitude sweep over simulated groups, both methods")
    common(sp)
    sp.add_argument("--anomaly", default="all", choices=["all"] + [a.value for a in AnomalyType])
    sp.add_argument("--groups", type=int, default=25, help="simulated cell groups (default 25)")
    sp.add_argument("--theta", help="magnitudes as start:stop:step or a comma list (default 0.1:1.0:0.1)")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    sp.add_argument("--out", required=True, help="table CSV")
    sp.add_argument("--summary", help="summary JSON (default <stem>.json)")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CellwatchError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        logger.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
