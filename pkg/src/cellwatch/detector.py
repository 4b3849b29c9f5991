"""End-to-end detection pipelines over a telemetry stream.

Two methods share the residual front end:

* PCA method: residual, Z-score, reconstruction RMSE, 4.9 mHz low-pass,
  one-sided CUSUM. A flagged sample is traced to the cell with the largest
  error against the leading one (voltage) or two (temperature) components.
* Direct method: per-cell absolute residual, 8.4 mHz low-pass, two-sided
  CUSUM per cell; the group flag is the OR over cells.

Voltage and temperature run as independent models with independent state.
Flags are not latched: each sample reports the instantaneous chart
comparison.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import cusum as cs
from . import pca as pca_mod
from .data import Dataset, SignalKind, TelemetryFrame
from .errors import InsufficientTrainingError, SchemaError, UsageError
from .residuals import NormalizationParams, fit_normalization, mean_based_residuals, zscores

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_RETRAIN_WINDOW_S = 86400.0


class Method(str, enum.Enum):
    PCA = "pca"
    DIRECT = "direct"


@dataclass(frozen=True)
class TrainedModel:
    kind: SignalKind
    method: Method
    normalization: NormalizationParams
    cusum_cal: tuple[cs.CusumCalibration, ...]
    filter_cutoff_hz: float
    sample_interval: float = 1.0
    pca: pca_mod.PcaModel | None = None
    trained_at: int = 0
    warnings: tuple[str, ...] = ()
    provenance: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        n = self.normalization.n_cells
        if self.method is Method.PCA:
            if self.pca is None or len(self.cusum_cal) != 1:
                raise UsageError("a PCA-method model needs a basis and one calibration")
        elif self.pca is not None or len(self.cusum_cal) != n:
            raise UsageError("a direct-method model has no basis and one calibration per cell")

    @property
    def n_cells(self) -> int:
        return self.normalization.n_cells

    @property
    def alpha(self) -> float:
        return cs.alpha_from_cutoff(self.filter_cutoff_hz, self.sample_interval)

    @property
    def warmup_samples(self) -> int:
        return math.ceil(1.0 / self.alpha)

    @property
    def two_sided(self) -> bool:
        return self.method is Method.DIRECT

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind.value,
            "method": self.method.value,
            "n": self.n_cells,
            "filter_cutoff_hz": self.filter_cutoff_hz,
            "sample_interval": self.sample_interval,
            "trained_at": self.trained_at,
            "warnings": list(self.warnings),
            "normalization": self.normalization.to_dict(),
            "cusum": [c.to_dict() for c in self.cusum_cal],
            "pca": None if self.pca is None else self.pca.to_dict(),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainedModel:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported model schema_version {version!r}; expected {SCHEMA_VERSION}")
        return cls(
            kind=SignalKind(d["kind"]),
            method=Method(d["method"]),
            normalization=NormalizationParams.from_dict(d["normalization"]),
            cusum_cal=tuple(cs.CusumCalibration.from_dict(c) for c in d["cusum"]),
            filter_cutoff_hz=float(d["filter_cutoff_hz"]),
            sample_interval=float(d["sample_interval"]),
            pca=None if d.get("pca") is None else pca_mod.PcaModel.from_dict(d["pca"]),
            trained_at=int(d["trained_at"]),
            warnings=tuple(d.get("warnings", ())),
            provenance=d.get("provenance", {}),
        )


def save_models(models: Iterable[TrainedModel], path: str | Path, **provenance) -> None:
    """Write one or more models (e.g. both signal kinds) to a JSON document."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "models": [m.to_dict() for m in models],
        "provenance": provenance,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_models(path: str | Path) -> list[TrainedModel]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported model file schema_version {doc.get('schema_version')!r}")
    return [TrainedModel.from_dict(m) for m in doc["models"]]


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- training -----------------------------------------------------------------


def _training_warnings(nominal: Dataset) -> tuple[str, ...]:
    if nominal.balancing.any():
        msg = f"training window contains {int(nominal.balancing.sum())} balancing samples"
        logger.warning(msg)
        return (msg,)
    return ()


def _sample_index(nominal: Dataset) -> int:
    return int(round(nominal.t[0] / nominal.sample_interval))


def train_pca_method(
    nominal: Dataset,
    kind: SignalKind,
    *,
    cutoff_hz: float = cs.CUTOFF_PCA_HZ,
    variance_threshold: float = pca_mod.DEFAULT_VARIANCE_THRESHOLD,
    k_multiplier: float = cs.K_MULTIPLIER,
    h_multiplier: float = cs.H_MULTIPLIER,
    provenance: Mapping | None = None,
) -> TrainedModel:
    """Fit normalisation, principal subspace and CUSUM constants on nominal data.

    The chart is calibrated on the filtered nominal RMSE sequence.

    Raises:
        InsufficientTrainingError: Fewer samples than cells.
    """
    n = nominal.n_cells
    if len(nominal) < n:
        raise InsufficientTrainingError(f"need at least {n} training samples, got {len(nominal)}")
    x = mean_based_residuals(nominal.signal(kind))
    norm = fit_normalization(x, kind)
    z = zscores(x, norm)
    model = pca_mod.train(z.T, kind, variance_threshold)
    alpha = cs.alpha_from_cutoff(cutoff_hz, nominal.sample_interval)
    y = cs.filter_series(pca_mod.score(model, z), alpha)
    cal = cs.calibrate(y, k_multiplier, h_multiplier)
    return TrainedModel(
        kind=kind,
        method=Method.PCA,
        normalization=norm,
        cusum_cal=(cal,),
        filter_cutoff_hz=cutoff_hz,
        sample_interval=nominal.sample_interval,
        pca=model,
        trained_at=_sample_index(nominal),
        warnings=_training_warnings(nominal),
        provenance=dict(provenance or {}),
    )


def train_direct_method(
    nominal: Dataset,
    kind: SignalKind,
    *,
    cutoff_hz: float = cs.CUTOFF_DIRECT_HZ,
    k_multiplier: float = cs.K_MULTIPLIER,
    h_multiplier: float = cs.H_MULTIPLIER,
    provenance: Mapping | None = None,
) -> TrainedModel:
    """Per-cell chart constants on the filtered absolute residuals."""
    n = nominal.n_cells
    if len(nominal) < n:
        raise InsufficientTrainingError(f"need at least {n} training samples, got {len(nominal)}")
    x = mean_based_residuals(nominal.signal(kind))
    norm = fit_normalization(x, kind)
    alpha = cs.alpha_from_cutoff(cutoff_hz, nominal.sample_interval)
    y = cs.filter_series(np.abs(x), alpha)
    cals = tuple(cs.calibrate(y[:, j], k_multiplier, h_multiplier) for j in range(n))
    return TrainedModel(
        kind=kind,
        method=Method.DIRECT,
        normalization=norm,
        cusum_cal=cals,
        filter_cutoff_hz=cutoff_hz,
        sample_interval=nominal.sample_interval,
        trained_at=_sample_index(nominal),
        warnings=_training_warnings(nominal),
        provenance=dict(provenance or {}),
    )


def train(nominal: Dataset, kind: SignalKind, method: Method = Method.PCA, **kwargs) -> TrainedModel:
    if method is Method.PCA:
        return train_pca_method(nominal, kind, **kwargs)
    kwargs.pop("variance_threshold", None)
    return train_direct_method(nominal, kind, **kwargs)


# -- streaming ----------------------------------------------------------------


@dataclass
class DetectorState:
    """Mutable per-stream state for one model."""

    filter_state: np.ndarray | None = None
    charts: list[cs.CusumState] = field(default_factory=list)
    samples_seen: int = 0
    flagged: bool = False
    traced_cell: int | None = None

    @classmethod
    def fresh(cls, model: TrainedModel) -> DetectorState:
        return cls(charts=[cs.CusumState() for _ in model.cusum_cal])


@dataclass(frozen=True)
class DetectionEvent:
    t: float
    kind: SignalKind
    flagged: bool
    score: float
    traced_cell: int | None = None
    warmup: bool = False
    method: Method | None = None

    def to_dict(self) -> dict:
        d = {
            "t": self.t,
            "kind": self.kind.value,
            "flagged": self.flagged,
            "score": self.score,
            "traced_cell": self.traced_cell,
            "warmup": self.warmup,
        }
        if self.method is not None:
            d["method"] = self.method.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DetectionEvent:
        return cls(
            float(d["t"]), SignalKind(d["kind"]), bool(d["flagged"]), float(d["score"]),
            None if d.get("traced_cell") is None else int(d["traced_cell"]), bool(d.get("warmup", False)),
            None if d.get("method") is None else Method(d["method"]),
        )


def _check_frame(model: TrainedModel, frame: TelemetryFrame) -> np.ndarray:
    sig = frame.signal(model.kind)
    if sig.size != model.n_cells:
        raise UsageError(f"frame has {sig.size} cells, model expects {model.n_cells}")
    return sig


def _advance_filter(state: DetectorState, model: TrainedModel, x: np.ndarray) -> np.ndarray:
    if state.filter_state is None:
        y = np.array(x, dtype=float)
    else:
        y = model.alpha * x + (1.0 - model.alpha) * state.filter_state
    state.filter_state = y
    return y


def detect_step_pca(model: TrainedModel, state: DetectorState, frame: TelemetryFrame) -> DetectionEvent:
    if model.method is not Method.PCA:
        raise UsageError("detect_step_pca needs a PCA-method model")
    sig = _check_frame(model, frame)
    z = zscores(mean_based_residuals(sig[None, :]), model.normalization)
    rmse = pca_mod.score(model.pca, z)
    y = _advance_filter(state, model, np.asarray(rmse, dtype=float))
    chart = cs.cusum_step(state.charts[0], model.cusum_cal[0], float(y[0]), two_sided=False)
    state.charts[0] = chart
    state.flagged = chart.flagged
    state.traced_cell = int(pca_mod.trace(model.pca, z)[0]) if chart.flagged else None
    warm = state.samples_seen < model.warmup_samples
    state.samples_seen += 1
    return DetectionEvent(frame.t, model.kind, chart.flagged, float(y[0]), state.traced_cell, warm, Method.PCA)


def detect_step_direct(model: TrainedModel, state: DetectorState, frame: TelemetryFrame) -> DetectionEvent:
    if model.method is not Method.DIRECT:
        raise UsageError("detect_step_direct needs a direct-method model")
    sig = _check_frame(model, frame)
    x = np.abs(mean_based_residuals(sig[None, :])[0])
    y = _advance_filter(state, model, x)
    stat = 0.0
    flagged = False
    for j, cal in enumerate(model.cusum_cal):
        chart = cs.cusum_step(state.charts[j], cal, float(y[j]), two_sided=True)
        state.charts[j] = chart
        flagged = flagged or chart.flagged
        stat = max(stat, max(chart.c_plus, chart.c_minus) / cal.h)
    state.flagged = flagged
    state.traced_cell = None
    warm = state.samples_seen < model.warmup_samples
    state.samples_seen += 1
    return DetectionEvent(frame.t, model.kind, flagged, stat, None, warm, Method.DIRECT)


def detect_step(model: TrainedModel, state: DetectorState, frame: TelemetryFrame) -> DetectionEvent:
    if model.method is Method.PCA:
        return detect_step_pca(model, state, frame)
    return detect_step_direct(model, state, frame)


# -- batch --------------------------------------------------------------------


@dataclass
class DetectionResult:
    """Column-oriented event stream for one model over one dataset.

    ``traced_cell`` is -1 where no cell is traced.
    """

    kind: SignalKind
    method: Method
    t: np.ndarray
    flagged: np.ndarray
    score: np.ndarray
    traced_cell: np.ndarray
    warmup: np.ndarray
    statistic: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def events(self) -> list[DetectionEvent]:
        return [
            DetectionEvent(
                float(self.t[i]), self.kind, bool(self.flagged[i]), float(self.score[i]),
                None if self.traced_cell[i] < 0 else int(self.traced_cell[i]), bool(self.warmup[i]),
                self.method,
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_events(cls, events: list[DetectionEvent], method: Method | None = None) -> DetectionResult:
        if not events:
            raise UsageError("no events")
        if len({e.kind for e in events}) != 1:
            raise UsageError("events mix signal kinds")
        return cls(
            kind=events[0].kind,
            method=method or events[0].method or Method.PCA,
            t=np.array([e.t for e in events]),
            flagged=np.array([e.flagged for e in events], dtype=bool),
            score=np.array([e.score for e in events]),
            traced_cell=np.array([-1 if e.traced_cell is None else e.traced_cell for e in events]),
            warmup=np.array([e.warmup for e in events], dtype=bool),
            statistic=np.array([e.score for e in events]),
        )


def run(model: TrainedModel, dataset: Dataset, state: DetectorState | None = None) -> DetectionResult:
    """Process a whole dataset; identical to stepping frame by frame.

    ``state`` is advanced in place when given, so successive calls continue
    one stream.
    """
    if dataset.n_cells != model.n_cells:
        raise UsageError(f"dataset has {dataset.n_cells} cells, model expects {model.n_cells}")
    state = state if state is not None else DetectorState.fresh(model)
    x = mean_based_residuals(dataset.signal(model.kind))
    k = x.shape[0]
    traced = np.full(k, -1, dtype=np.int64)
    if model.method is Method.PCA:
        z = zscores(x, model.normalization)
        raw = pca_mod.score(model.pca, z)
        y = cs.filter_series(raw, model.alpha, state.filter_state)
        charts = cs.cusum_series(y, list(model.cusum_cal), False, state.charts)
        flagged = charts.flagged
        hit = np.flatnonzero(flagged)
        if hit.size:
            traced[hit] = pca_mod.trace(model.pca, z[hit])
        score = y
        statistic = charts.c_plus / model.cusum_cal[0].h
        state.filter_state = y[-1:].copy()
    else:
        y = cs.filter_series(np.abs(x), model.alpha, state.filter_state)
        charts = cs.cusum_series(y, list(model.cusum_cal), True, state.charts)
        flagged = charts.flagged.any(axis=1)
        h = np.array([c.h for c in model.cusum_cal])
        score = np.max(np.maximum(charts.c_plus, charts.c_minus) / h, axis=1)
        statistic = score
        state.filter_state = y[-1].copy()
    warm = (state.samples_seen + np.arange(k)) < model.warmup_samples
    state.charts = charts.final
    state.samples_seen += k
    state.flagged = bool(flagged[-1])
    state.traced_cell = None if traced[-1] < 0 else int(traced[-1])
    return DetectionResult(model.kind, model.method, dataset.t.copy(), flagged, score, traced, warm, statistic)


def write_events(results: Iterable[DetectionResult], path: str | Path) -> None:
    """JSON lines, one object per sample per kind, ordered by time then kind."""
    results = list(results)
    with Path(path).open("w") as fh:
        streams = [r.events() for r in results]
        for row in zip(*streams):
            for ev in row:
                fh.write(json.dumps(ev.to_dict()) + "\n")


def read_events(path: str | Path) -> list[DetectionEvent]:
    with Path(path).open() as fh:
        return [DetectionEvent.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- balancing ----------------------------------------------------------------


@dataclass
class PolicyOutcome:
    models: dict[SignalKind, TrainedModel]
    retrained: list[SignalKind]
    warnings: list[str]


def apply_balancing_policy(
    models: Mapping[SignalKind, TrainedModel],
    event_end: int,
    post_event_nominal: Dataset,
    *,
    window_s: float = DEFAULT_RETRAIN_WINDOW_S,
) -> PolicyOutcome:
    """Retrain voltage models on the post-balancing window; keep temperature models.

    Balancing shifts relative SoC and hence the voltage cell-to-cell pattern,
    while the electro-thermal characteristics are unchanged.

    Args:
        models: Current models keyed by signal kind.
        event_end: Sample index at which the balancing event ended.
        post_event_nominal: Nominal data starting at or after ``event_end``.
        window_s: Length of post-event data used for retraining. Shorter
            post-event data defers the retrain and keeps the stale model.
    """
    out = dict(models)
    retrained: list[SignalKind] = []
    warnings: list[str] = []
    start = _sample_index(post_event_nominal)
    if start < event_end:
        raise UsageError(f"post-event data starts at sample {start}, before event end {event_end}")
    need = int(round(window_s / post_event_nominal.sample_interval))
    for kind, model in models.items():
        if kind is not SignalKind.VOLTAGE:
            continue
        if len(post_event_nominal) < need:
            msg = (
                f"voltage model retrain deferred: {len(post_event_nominal)} post-event samples, "
                f"need {need}; model is stale"
            )
            logger.warning(msg)
            warnings.append(msg)
            continue
        window = post_event_nominal.slice(0, need)
        kwargs = dict(cutoff_hz=model.filter_cutoff_hz,
                      k_multiplier=model.cusum_cal[0].k_multiplier,
                      h_multiplier=model.cusum_cal[0].h_multiplier,
                      provenance=model.provenance)
        if model.method is Method.PCA:
            new = train_pca_method(window, kind, variance_threshold=model.pca.variance_threshold, **kwargs)
        else:
            new = train_direct_method(window, kind, **kwargs)
        out[kind] = replace(new, trained_at=start)
        retrained.append(kind)
    return PolicyOutcome(out, retrained, warnings)
