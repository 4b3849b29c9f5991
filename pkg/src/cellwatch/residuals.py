"""Mean-based residuals and training-calibrated Z-scores.

Residuals are taken against the instantaneous group mean, which includes
any anomalous cell: a deviation ``d`` on one cell shows up as
``d * (1 - 1/n)`` on that cell and ``-d/n`` on every other cell.

The pooled standard deviation uses the sample convention (``ddof=1``) over
all ``k * n`` training entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SignalKind
from .errors import DegenerateGroupError, DegenerateTrainingError, InsufficientTrainingError, UsageError


@dataclass(frozen=True)
class ResidualVector:
    values: np.ndarray
    kind: SignalKind
    t: float = 0.0


@dataclass(frozen=True)
class NormalizationParams:
    per_cell_mean: np.ndarray
    pooled_std: float
    kind: SignalKind

    def __post_init__(self) -> None:
        if not self.pooled_std > 0:
            raise DegenerateTrainingError(f"pooled_std must be positive, got {self.pooled_std}")

    @property
    def n_cells(self) -> int:
        return self.per_cell_mean.size

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "per_cell_mean": self.per_cell_mean.tolist(),
            "pooled_std": self.pooled_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationParams:
        return cls(np.asarray(d["per_cell_mean"], dtype=float), float(d["pooled_std"]), SignalKind(d["kind"]))


def mean_based_residuals(signals: np.ndarray) -> np.ndarray:
    """Subtract the group mean from each row of ``signals`` (shape ``(..., n)``)."""
    x = np.asarray(signals, dtype=float)
    if x.shape[-1] < 2:
        raise DegenerateGroupError(f"a cell group needs at least 2 cells, got {x.shape[-1]}")
    # shift by one cell first: identical cells give exact zeros and a large
    # common offset does not eat into the float precision of the residual
    d = x - x[..., :1]
    return d - d.mean(axis=-1, keepdims=True)


def mbr(signal, kind: SignalKind = SignalKind.VOLTAGE, t: float = 0.0) -> ResidualVector:
    """Mean-based residual of a single frame signal."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise UsageError("mbr expects a 1-D per-cell vector")
    return ResidualVector(mean_based_residuals(x), kind, t)


def fit_normalization(training_residuals, kind: SignalKind = SignalKind.VOLTAGE) -> NormalizationParams:
    """Per-cell means and the pooled sample std of a ``(k, n)`` residual matrix."""
    r = np.asarray(training_residuals, dtype=float)
    if r.ndim != 2:
        raise UsageError("training residuals must be a (samples, cells) matrix")
    if r.shape[0] < 2:
        raise InsufficientTrainingError(f"need at least 2 training samples, got {r.shape[0]}")
    std = float(np.std(r, ddof=1))
    if np.ptp(r) == 0 or not std > 0:
        raise DegenerateTrainingError("training residuals have zero variance")
    return NormalizationParams(r.mean(axis=0), std, kind)


def zscores(residuals: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Vectorised Z-score for residual rows of shape ``(..., n)``."""
    r = np.asarray(residuals, dtype=float)
    if r.shape[-1] != params.n_cells:
        raise UsageError(f"expected {params.n_cells} cells, got {r.shape[-1]}")
    return (r - params.per_cell_mean) / params.pooled_std


def zscore(r: ResidualVector, p: NormalizationParams) -> np.ndarray:
    if r.kind is not p.kind:
        raise UsageError(f"residual kind {r.kind.value} does not match normalization kind {p.kind.value}")
    return zscores(r.values, p)
