"""Principal subspace of nominal Z-scores: training, reconstruction, scoring, tracing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SignalKind
from .errors import InsufficientTrainingError, NumericError, UsageError

DEFAULT_VARIANCE_THRESHOLD = 0.90
TRACING_COMPONENTS = {SignalKind.VOLTAGE: 1, SignalKind.TEMPERATURE: 2}
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class PcaModel:
    """Truncated left singular basis of the training Z-score matrix.

    Attributes:
        basis: ``(n, p)`` columns spanning the principal subspace used for
            detection.
        tracing_basis: ``(n, p_trace)`` leading columns used for tracing.
        singular_values: All ``n`` singular values, nonincreasing.
    """

    basis: np.ndarray
    tracing_basis: np.ndarray
    singular_values: np.ndarray
    kind: SignalKind
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD

    @property
    def n_cells(self) -> int:
        return self.basis.shape[0]

    @property
    def p(self) -> int:
        return self.basis.shape[1]

    @property
    def p_trace(self) -> int:
        return self.tracing_basis.shape[1]

    def explained_variance(self) -> np.ndarray:
        """Cumulative variance fraction after each component."""
        s2 = self.singular_values**2
        return np.cumsum(s2) / s2.sum()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.n_cells,
            "p": self.p,
            "p_trace": self.p_trace,
            "variance_threshold": self.variance_threshold,
            "basis": self.basis.tolist(),
            "tracing_basis": self.tracing_basis.tolist(),
            "singular_values": self.singular_values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PcaModel:
        basis = np.asarray(d["basis"], dtype=float).reshape(d["n"], d["p"])
        tracing = np.asarray(d["tracing_basis"], dtype=float).reshape(d["n"], d["p_trace"])
        return cls(
            basis=basis,
            tracing_basis=tracing,
            singular_values=np.asarray(d["singular_values"], dtype=float),
            kind=SignalKind(d["kind"]),
            variance_threshold=float(d.get("variance_threshold", DEFAULT_VARIANCE_THRESHOLD)),
        )


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def components_for_threshold(singular_values: np.ndarray, threshold: float) -> int:
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0:
        return 1
    cum = np.cumsum(s2) / total
    return max(1, int(np.searchsorted(cum, threshold, side="left")) + 1)


def train(
    zscores: np.ndarray,
    kind: SignalKind,
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD,
) -> PcaModel:
    """Fit the principal subspace.

    Args:
        zscores: ``(n, k)`` matrix, one column per training sample.
        kind: Signal the model is bound to; selects the tracing depth.
        variance_threshold: Cumulative variance fraction (squared singular
            values) the detection basis must reach.
    """
    x = np.asarray(zscores, dtype=float)
    if x.ndim != 2:
        raise UsageError("zscores must be an (n, k) matrix")
    n, k = x.shape
    if k < n:
        raise InsufficientTrainingError(f"need at least n={n} training samples, got {k}")
    if not np.isfinite(x).all():
        raise NumericError("training matrix contains non-finite values")
    if not 0 < variance_threshold <= 1:
        raise UsageError("variance_threshold must be in (0, 1]")
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    u = _fix_signs(u)
    p = min(components_for_threshold(s, variance_threshold), n)
    p_trace = min(TRACING_COMPONENTS[kind], n)
    return PcaModel(
        basis=np.ascontiguousarray(u[:, :p]),
        tracing_basis=np.ascontiguousarray(u[:, :p_trace]),
        singular_values=s,
        kind=kind,
        variance_threshold=variance_threshold,
    )


def _check_len(model: PcaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.n_cells:
        raise UsageError(f"expected {model.n_cells} cells, got {z.shape[-1]}")
    return z


def reconstruct(model: PcaModel, z) -> np.ndarray:
    """Orthogonal projection onto the principal subspace; rows of ``z`` are samples."""
    z = _check_len(model, z)
    return (z @ model.basis) @ model.basis.T


def score(model: PcaModel, z):
    """RMSE between ``z`` and its reconstruction (scalar, or one per row)."""
    z = _check_len(model, z)
    err = z - reconstruct(model, z)
    out = np.sqrt(np.mean(err * err, axis=-1))
    return float(out) if out.ndim == 0 else out


def tracing_errors(model: PcaModel, z) -> np.ndarray:
    z = _check_len(model, z)
    tb = model.tracing_basis
    return np.abs(z - (z @ tb) @ tb.T)


def trace(model: PcaModel, z):
    """Index of the cell with the largest tracing error; lowest index wins ties.

    Errors within round-off of the maximum count as ties, so the result does
    not depend on the last bits of the projection.
    """
    z = _check_len(model, z)
    err = tracing_errors(model, z)
    tol = _TIE_RTOL * (1.0 + np.max(np.abs(z), axis=-1, keepdims=True))
    out = np.argmax(err >= err.max(axis=-1, keepdims=True) - tol, axis=-1)
    return int(out) if np.ndim(out) == 0 else out
