"""Low-pass smoothing and tabular CUSUM charts for scalar detection statistics.

The analog cutoff ``f_c`` is mapped to a smoothing coefficient by the RC
discretisation ``alpha = dt / (tau + dt)`` with ``tau = 1 / (2 pi f_c)``.
At 1 Hz this gives about 0.0299 for 4.9 mHz and 0.0501 for 8.4 mHz.
The filter state is seeded with the first input, so a constant stream
passes through unchanged from the first sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateCalibrationError, NumericError, UsageError

CUTOFF_PCA_HZ = 4.9e-3
CUTOFF_DIRECT_HZ = 8.4e-3
K_MULTIPLIER = 4.0
H_MULTIPLIER = 5.0


def alpha_from_cutoff(cutoff_hz: float, dt: float = 1.0) -> float:
    if cutoff_hz <= 0 or dt <= 0:
        raise UsageError("cutoff and sample interval must be positive")
    tau = 1.0 / (2.0 * math.pi * cutoff_hz)
    return dt / (tau + dt)


@dataclass
class LowPassFilter:
    alpha: float
    cutoff_hz: float | None = None
    state: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise UsageError(f"alpha must be in (0, 1], got {self.alpha}")

    @classmethod
    def from_cutoff(cls, cutoff_hz: float, dt: float = 1.0) -> LowPassFilter:
        return cls(alpha_from_cutoff(cutoff_hz, dt), cutoff_hz)


def filter_step(f: LowPassFilter, x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise NumericError(f"non-finite filter input {x!r}")
    if f.state is None:
        f.state = x
    else:
        f.state = f.alpha * x + (1.0 - f.alpha) * f.state
    return f.state


def filter_series(x, alpha: float, state=None) -> np.ndarray:
    """Filter each column of ``x`` (1-D or ``(k, m)``); ``state`` continues a stream."""
    arr = np.asarray(x, dtype=float)
    if not np.isfinite(arr).all():
        raise NumericError("non-finite filter input")
    two_d = arr[:, None] if arr.ndim == 1 else arr
    m = two_d.shape[1]
    y0 = np.full(m, np.nan) if state is None else np.asarray(state, dtype=float).reshape(m)
    out = _kernels.lowpass(np.ascontiguousarray(two_d), float(alpha), y0)
    return out[:, 0] if arr.ndim == 1 else out


@dataclass(frozen=True)
class CusumCalibration:
    """Chart constants derived from nominal training statistics."""

    mu_c: float
    sigma_c: float
    k_multiplier: float = K_MULTIPLIER
    h_multiplier: float = H_MULTIPLIER

    def __post_init__(self) -> None:
        if not self.sigma_c > 0:
            raise DegenerateCalibrationError(f"sigma_c must be positive, got {self.sigma_c}")
        if not self.h_multiplier > self.k_multiplier > 0:
            raise UsageError("need h_multiplier > k_multiplier > 0")

    @property
    def k(self) -> float:
        return self.k_multiplier * self.sigma_c

    @property
    def h(self) -> float:
        return self.h_multiplier * self.sigma_c

    def to_dict(self) -> dict:
        return {
            "mu_c": self.mu_c,
            "sigma_c": self.sigma_c,
            "k": self.k,
            "h": self.h,
            "k_multiplier": self.k_multiplier,
            "h_multiplier": self.h_multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CusumCalibration:
        return cls(
            float(d["mu_c"]),
            float(d["sigma_c"]),
            float(d.get("k_multiplier", K_MULTIPLIER)),
            float(d.get("h_multiplier", H_MULTIPLIER)),
        )


@dataclass
class CusumState:
    c_plus: float = 0.0
    c_minus: float = 0.0
    flagged: bool = False


def calibrate(training_y, k_multiplier: float = K_MULTIPLIER, h_multiplier: float = H_MULTIPLIER) -> CusumCalibration:
    """Mean and sample std of a nominal thresholding sequence."""
    y = np.asarray(training_y, dtype=float).ravel()
    if y.size < 2:
        raise DegenerateCalibrationError("need at least two training values")
    sigma = float(np.std(y, ddof=1))
    if np.ptp(y) == 0 or not sigma > 0:
        raise DegenerateCalibrationError("training sequence has zero variance")
    return CusumCalibration(float(np.mean(y)), sigma, k_multiplier, h_multiplier)


def cusum_step(state: CusumState, cal: CusumCalibration, y: float, two_sided: bool = False) -> CusumState:
    d = float(y) - cal.mu_c
    c_plus = max(0.0, state.c_plus + d - cal.k)
    c_minus = max(0.0, state.c_minus - d - cal.k)
    flagged = c_plus > cal.h or (two_sided and c_minus > cal.h)
    return CusumState(c_plus, c_minus, flagged)


@dataclass
class ChartArrays:
    c_plus: np.ndarray
    c_minus: np.ndarray
    flagged: np.ndarray
    final: list[CusumState] = field(default_factory=list)


def cusum_series(y, cals: CusumCalibration | list[CusumCalibration], two_sided: bool = False, states=None) -> ChartArrays:
    """Run one chart per column of ``y``; equivalent to repeated :func:`cusum_step`."""
    arr = np.asarray(y, dtype=float)
    one_d = arr.ndim == 1
    two_d = arr[:, None] if one_d else arr
    cal_list = [cals] if isinstance(cals, CusumCalibration) else list(cals)
    m = two_d.shape[1]
    if len(cal_list) != m:
        raise UsageError(f"{len(cal_list)} calibrations for {m} charts")
    states = states or [CusumState() for _ in range(m)]
    mu = np.array([c.mu_c for c in cal_list])
    slack = np.array([c.k for c in cal_list])
    limit = np.array([c.h for c in cal_list])
    cp0 = np.array([s.c_plus for s in states], dtype=float)
    cm0 = np.array([s.c_minus for s in states], dtype=float)
    cp, cm, flags = _kernels.cusum(np.ascontiguousarray(two_d), mu, slack, limit, bool(two_sided), cp0, cm0)
    if len(two_d):
        final = [CusumState(float(cp[-1, j]), float(cm[-1, j]), bool(flags[-1, j])) for j in range(m)]
    else:
        final = list(states)
    if one_d:
        cp, cm, flags = cp[:, 0], cm[:, 0], flags[:, 0]
    return ChartArrays(cp, cm, flags, final)
