"""Cell-group anomaly detection from mean-based residuals, PCA and CUSUM."""

from .data import Dataset, SignalKind, TelemetryFrame, load_csv, write_csv
from .detector import (
    DetectionEvent,
    DetectionResult,
    DetectorState,
    Method,
    TrainedModel,
    detect_step,
    load_models,
    run,
    save_models,
    train,
)
from .errors import CellwatchError
from .evaluation import EvaluationReport, score_run, sweep

__version__ = "0.1.0"

__all__ = [
    "CellwatchError",
    "Dataset",
    "DetectionEvent",
    "DetectionResult",
    "DetectorState",
    "EvaluationReport",
    "Method",
    "SignalKind",
    "TelemetryFrame",
    "TrainedModel",
    "detect_step",
    "load_csv",
    "load_models",
    "run",
    "save_models",
    "score_run",
    "sweep",
    "train",
    "write_csv",
]
