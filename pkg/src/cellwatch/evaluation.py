"""Performance indices against injected ground truth and magnitude sweeps.

Per run: detection time (DT), recovery time (RT), false-negative rate (FNR),
false-positive rate (FPR) and true tracing rate (TTR). Per sweep cell
(anomaly type x magnitude x method): the means of those over groups, and
the missed-anomaly rate (MAR), the share of runs never flagged inside the
anomaly window.

A run is flagged when any detector watching an affected signal kind is
flagged. When several kinds flag at once the voltage trace is reported.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cusum as cs
from .data import Dataset, SignalKind
from .detector import DetectionEvent, DetectionResult, Method, TrainedModel, run, train_direct_method, train_pca_method
from .errors import UsageError
from .pca import DEFAULT_VARIANCE_THRESHOLD
from .simulator.anomalies import DEFAULT_LEAD_DURATION_S, LEAD_NOISE_FRACTION, AnomalySpec, AnomalyType, GroundTruth, inject
from .simulator.generate import generate_group

logger = logging.getLogger(__name__)

DAY_S = 86400.0
DEFAULT_ONSET_S = 8.33 * 3600.0
DEFAULT_PLANT_DURATION_S = 11.67 * 3600.0
DEFAULT_MAGNITUDES = tuple(round(0.1 * i, 1) for i in range(1, 11))
TABLE_COLUMNS = ("anomaly_type", "theta", "method", "dt_mean_s", "rt_mean_s", "fnr_pct", "mar_pct", "ttr_pct")


@dataclass(frozen=True)
class EvaluationReport:
    """Indices for one run. ``None`` marks a missed detection or a non-applicable index."""

    dt: float | None
    rt: float | None
    fnr: float | None
    fpr: float
    ttr: float | None
    mar: float | None = None

    def __post_init__(self) -> None:
        for name in ("fnr", "fpr", "ttr", "mar"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.dt is not None and self.dt < 0:
            raise ValueError("dt must be non-negative")

    @property
    def missed(self) -> bool:
        return self.dt is None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Stream:
    t: np.ndarray
    flagged: np.ndarray
    traced: np.ndarray
    warmup: np.ndarray


def _as_stream(events) -> _Stream:
    """Merge one or more detector outputs into a single run-level stream."""
    if isinstance(events, DetectionResult):
        results = [events]
    else:
        items = list(events)
        if not items:
            raise UsageError("no detection events")
        if all(isinstance(e, DetectionResult) for e in items):
            results = items
        elif all(isinstance(e, DetectionEvent) for e in items):
            if len({e.method for e in items}) > 1:
                raise UsageError("events mix detection methods; score each method separately")
            results = [DetectionResult.from_events([e for e in items if e.kind is k]) for k in SignalKind
                       if any(e.kind is k for e in items)]
        else:
            raise UsageError("mix of detection results and events")
    t = results[0].t
    for r in results[1:]:
        if r.t.shape != t.shape or not np.array_equal(r.t, t):
            raise UsageError("detector streams are not time-aligned")
    # voltage first so its trace wins when both kinds flag
    results = sorted(results, key=lambda r: r.kind is not SignalKind.VOLTAGE)
    flagged = np.zeros(t.size, dtype=bool)
    traced = np.full(t.size, -1, dtype=np.int64)
    warm = np.zeros(t.size, dtype=bool)
    for r in results:
        take = r.flagged & (traced < 0)
        traced[take] = r.traced_cell[take]
        flagged |= r.flagged
        warm |= r.warmup
    return _Stream(t, flagged, traced, warm)


def score_run(
    events,
    truth: GroundTruth,
    *,
    recoverable: bool | None = None,
    include_warmup: bool = False,
) -> EvaluationReport:
    """Score one run against its ground truth.

    Args:
        events: A :class:`DetectionResult`, several of them (one per signal
            kind, OR-combined), or a flat list of :class:`DetectionEvent`.
        truth: Ground truth aligned sample-by-sample with the events.
        recoverable: Whether RT applies; defaults to sense-lead faults only.
        include_warmup: Count filter warm-up samples in the FPR.

    Raises:
        UsageError: Events and truth are not aligned.
    """
    s = _as_stream(events)
    if s.t.size != truth.t.size or not np.allclose(s.t, truth.t):
        raise UsageError(f"{s.t.size} event samples do not align with {truth.t.size} truth samples")
    spec = truth.spec
    active = truth.anomaly_active
    if recoverable is None:
        recoverable = spec.anomaly_type.is_sensor_fault

    nominal = ~active if include_warmup else ~active & ~s.warmup
    fpr = 100.0 * float(s.flagged[nominal].mean()) if nominal.any() else 0.0
    hits = np.flatnonzero(s.flagged & active)
    if hits.size == 0:
        return EvaluationReport(None, None, None, fpr, None)
    first = int(hits[0])
    dt = float(s.t[first] - spec.start_t)
    after = active & (np.arange(s.t.size) >= first)
    fnr = 100.0 * float((~s.flagged[after]).mean())
    in_window = s.flagged & active
    traced = s.traced[in_window]
    ttr = 100.0 * float(np.isin(traced, spec.target_cells).mean()) if (traced >= 0).any() else None
    rt = None
    if recoverable:
        post = np.flatnonzero((s.t >= spec.end_t) & ~s.flagged)
        if post.size:
            rt = float(s.t[post[0]] - spec.end_t)
    return EvaluationReport(dt, rt, fnr, fpr, ttr)


def nominal_fpr(result: DetectionResult, *, include_warmup: bool = False) -> float:
    """Percentage of samples flagged on anomaly-free data."""
    keep = np.ones(len(result), dtype=bool) if include_warmup else ~result.warmup
    return 100.0 * float(result.flagged[keep].mean()) if keep.any() else 0.0


def max_deviation(nominal: Dataset, anomalous: Dataset, spec: AnomalySpec) -> float:
    """Largest absolute change injected into any affected target signal."""
    out = 0.0
    for kind in spec.anomaly_type.affected_kinds:
        d = np.abs(anomalous.signal(kind)[:, list(spec.target_cells)] - nominal.signal(kind)[:, list(spec.target_cells)])
        out = max(out, float(d.max()) if d.size else 0.0)
    return out


# -- sweep --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    """Protocol shared by every run of a sweep.

    Each group is simulated for ``train_s + test_s`` seconds. Detectors are
    trained on the first part and scored on the second. Faults start
    ``onset_s`` into the test part on one randomly chosen cell. Plant faults
    last ``plant_duration_s`` and sense-lead faults ``lead_duration_s``.
    The detector fields are passed to training unchanged.
    """

    n_cells: int = 11
    train_s: float = DAY_S
    test_s: float = DAY_S
    onset_s: float = DEFAULT_ONSET_S
    plant_duration_s: float = DEFAULT_PLANT_DURATION_S
    lead_duration_s: float = DEFAULT_LEAD_DURATION_S
    n_targets: int = 1
    lead_noise_fraction: float = LEAD_NOISE_FRACTION
    cutoff_pca_hz: float = cs.CUTOFF_PCA_HZ
    cutoff_direct_hz: float = cs.CUTOFF_DIRECT_HZ
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    k_multiplier: float = cs.K_MULTIPLIER
    h_multiplier: float = cs.H_MULTIPLIER
    generator: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.onset_s >= self.test_s:
            raise UsageError("anomaly onset must fall inside the test window")
        if not 1 <= self.n_targets <= self.n_cells:
            raise UsageError("n_targets must be between 1 and n_cells")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = {k: _jsonable(v) for k, v in self.generator.items()}
        return d


def _jsonable(v):
    if hasattr(v, "__dataclass_fields__"):
        return asdict(v)
    return v


@dataclass(frozen=True)
class RunRecord:
    group: int
    group_seed: int
    anomaly_type: AnomalyType
    theta: float
    method: Method
    target_cells: tuple[int, ...]
    report: EvaluationReport


@dataclass(frozen=True)
class NominalRecord:
    """FPR of one method on a group's anomaly-free test window.

    ``kind`` is ``None`` for the run-level flag (either kind flagged).
    """

    group: int
    group_seed: int
    kind: SignalKind | None
    method: Method
    fpr: float


def _nominal_records(group: int, gseed: int, models, test: Dataset) -> list[NominalRecord]:
    out = []
    for method in Method:
        results = [run(models[(kind, method)], test) for kind in SignalKind]
        for r in results:
            out.append(NominalRecord(group, gseed, r.kind, method, nominal_fpr(r)))
        s = _as_stream(results)
        out.append(NominalRecord(group, gseed, None, method, 100.0 * float(s.flagged[~s.warmup].mean())))
    return out


def group_seeds(seed: int, groups: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(groups)]


def _train_all(train: Dataset, cfg: SweepConfig | None = None) -> dict[tuple[SignalKind, Method], TrainedModel]:
    cfg = cfg or SweepConfig()
    chart = dict(k_multiplier=cfg.k_multiplier, h_multiplier=cfg.h_multiplier)
    models = {}
    for kind in SignalKind:
        models[(kind, Method.PCA)] = train_pca_method(
            train, kind, cutoff_hz=cfg.cutoff_pca_hz, variance_threshold=cfg.variance_threshold, **chart
        )
        models[(kind, Method.DIRECT)] = train_direct_method(train, kind, cutoff_hz=cfg.cutoff_direct_hz, **chart)
    return models


def _run_group(args) -> tuple[list[RunRecord], list[NominalRecord]]:
    group, gseed, types, magnitudes, cfg = args
    sim = generate_group(cfg.n_cells, duration=cfg.train_s + cfg.test_s, seed=gseed, **cfg.generator)
    ds = sim.dataset
    split = int(round(cfg.train_s / ds.sample_interval))
    models = _train_all(ds.slice(0, split), cfg)
    rng = np.random.default_rng([gseed, 1])
    targets = tuple(int(c) for c in np.sort(rng.choice(cfg.n_cells, cfg.n_targets, replace=False)))
    start = float(ds.t[split]) + cfg.onset_s
    nominal = _nominal_records(group, gseed, models, ds.slice(split))
    out = []
    for atype in types:
        duration = cfg.lead_duration_s if atype.is_sensor_fault else cfg.plant_duration_s
        for theta in magnitudes:
            spec = AnomalySpec(atype, float(theta), start, duration, targets)
            if atype.is_sensor_fault:
                spec = replace(spec, lead_noise_std=cfg.lead_noise_fraction * abs(spec.bias()))
            test = inject(ds, spec, sim.params, seed=gseed, initial=sim.initial).slice(split)
            truth = GroundTruth.for_dataset(spec, test)
            for method in (Method.PCA, Method.DIRECT):
                results = [run(models[(k, method)], test) for k in atype.affected_kinds]
                out.append(RunRecord(group, gseed, atype, float(theta), method, targets, score_run(results, truth)))
    return out, nominal


@dataclass
class SweepResult:
    records: list[RunRecord]
    seed: int
    groups: int
    config: SweepConfig
    nominal: list[NominalRecord] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return summarize(self.records)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: ("" if row[k] is None else row[k]) for k in TABLE_COLUMNS})

    def summary(self, **provenance) -> dict:
        return {
            "seed": self.seed,
            "groups": self.groups,
            "group_seeds": group_seeds(self.seed, self.groups),
            "runs": len(self.records),
            "missed": sum(r.report.missed for r in self.records),
            "config": self.config.to_dict(),
            "by_type": summarize(self.records, by_theta=False),
            "nominal_fpr": self.nominal_fpr(),
            **provenance,
        }

    def nominal_fpr(self) -> list[dict]:
        """Mean and worst FPR over groups, per method and kind (``"any"`` = run-level)."""
        cells: dict[tuple[str, str], list[float]] = {}
        for r in self.nominal:
            cells.setdefault((r.method.value, "any" if r.kind is None else r.kind.value), []).append(r.fpr)
        return [
            {"method": m, "kind": k, "mean_pct": float(np.mean(v)), "max_pct": float(np.max(v)), "groups": len(v)}
            for (m, k), v in sorted(cells.items())
        ]

    def write_summary(self, path: str | Path, **provenance) -> None:
        Path(path).write_text(json.dumps(self.summary(**provenance), indent=2, sort_keys=True) + "\n")


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(records: Iterable[RunRecord], *, by_theta: bool = True) -> list[dict]:
    """Mean indices per (type, theta, method), or per (type, method) pooled over theta.

    DT, FNR and TTR average detected runs only; RT averages runs that
    recovered. MAR is the percentage of runs never flagged in the window.
    """
    cells: dict[tuple, list[EvaluationReport]] = {}
    for r in records:
        key = (r.anomaly_type.value, r.theta if by_theta else None, r.method.value)
        cells.setdefault(key, []).append(r.report)
    rows = []
    for (atype, theta, method), reps in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0, kv[0][2])):
        rows.append({
            "anomaly_type": atype,
            "theta": theta,
            "method": method,
            "dt_mean_s": _mean(p.dt for p in reps),
            "rt_mean_s": _mean(p.rt for p in reps),
            "fnr_pct": _mean(p.fnr for p in reps),
            "mar_pct": 100.0 * sum(p.missed for p in reps) / len(reps),
            "ttr_pct": _mean(p.ttr for p in reps),
            "fpr_pct": _mean(p.fpr for p in reps),
            "runs": len(reps),
        })
    return rows


def sweep(
    anomaly_types: AnomalyType | Sequence[AnomalyType],
    magnitudes: Sequence[float] = DEFAULT_MAGNITUDES,
    groups: int = 25,
    seed: int = 0,
    *,
    config: SweepConfig | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Inject every (type, magnitude) into every group and score both methods.

    Groups are independent simulations seeded from ``seed``; the result is
    identical for any ``jobs``.
    """
    if isinstance(anomaly_types, (AnomalyType, str)):
        anomaly_types = [anomaly_types]
    types = [AnomalyType(a) for a in anomaly_types]
    mags = [float(m) for m in magnitudes]
    if groups < 1 or not mags or not types:
        raise UsageError("sweep needs at least one group, magnitude and anomaly type")
    if any(not 0.0 <= m <= 1.0 for m in mags):
        raise UsageError("magnitudes must lie in [0, 1]")
    cfg = config or SweepConfig()
    tasks = [(g, s, types, mags, cfg) for g, s in enumerate(group_seeds(seed, groups))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_group, tasks))
    else:
        chunks = [_run_group(t) for t in tasks]
    records = [r for runs, _ in chunks for r in runs]
    nominal = [r for _, noms in chunks for r in noms]
    return SweepResult(records, seed, groups, cfg, nominal)


def parse_range(text: str) -> list[float]:
    """``"0.1:1.0:0.1"`` (inclusive) or a comma list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"bad range {text!r}; expected start:stop:step")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(p) for p in text.split(",") if p.strip()]
