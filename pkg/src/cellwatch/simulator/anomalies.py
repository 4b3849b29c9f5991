"""Anomaly parameterisation and injection into nominal telemetry.

Plant faults (internal short, voltage dropout, air-flow restriction) are
injected the hybrid way: the target cell is simulated twice from the same
initial state, once nominal and once faulted, and the difference is added
to the measured signal. Measurement noise and any unmodelled behaviour in
the input therefore survive unchanged. Because the plant state does not
snap back, the difference keeps evolving after the fault window closes.

Sense-lead faults only touch the recorded signal inside the window.

Magnitude maps (``theta`` in [0, 1]):

* short / dropout: ``R_sc = exp(9 (1 - 0.6 theta)^2) - 1`` ohms
* air flow: ``b = (1 - theta) b_nominal``
* loose leads: bias ``theta * 30 mV`` or ``theta * 3 degC`` with noise at
  10 % of the bias, unless given explicitly.

A dropout uses the short-circuit branch electrically but adds no heat.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset, SignalKind
from ..errors import UsageError, ValidationError
from .cell import CellParams, CellState
from .generate import run_plant

LEAD_VOLTAGE_PER_THETA = 0.030
LEAD_TEMPERATURE_PER_THETA = 3.0
LEAD_NOISE_FRACTION = 0.10
DEFAULT_LEAD_DURATION_S = 1800.0


class AnomalyType(str, enum.Enum):
    ISC = "isc"
    VOLTAGE_DROPOUT = "voltage_dropout"
    AIR_FLOW = "air_flow"
    LOOSE_VOLTAGE_LEAD = "loose_voltage_lead"
    LOOSE_TEMP_LEAD = "loose_temp_lead"

    @property
    def affected_kinds(self) -> tuple[SignalKind, ...]:
        return _AFFECTED[self]

    @property
    def is_sensor_fault(self) -> bool:
        return self in (AnomalyType.LOOSE_VOLTAGE_LEAD, AnomalyType.LOOSE_TEMP_LEAD)


_AFFECTED = {
    AnomalyType.ISC: (SignalKind.VOLTAGE, SignalKind.TEMPERATURE),
    AnomalyType.VOLTAGE_DROPOUT: (SignalKind.VOLTAGE,),
    AnomalyType.AIR_FLOW: (SignalKind.TEMPERATURE,),
    AnomalyType.LOOSE_VOLTAGE_LEAD: (SignalKind.VOLTAGE,),
    AnomalyType.LOOSE_TEMP_LEAD: (SignalKind.TEMPERATURE,),
}


@dataclass(frozen=True)
class AnomalySpec:
    anomaly_type: AnomalyType
    magnitude: float
    start_t: float
    duration: float
    target_cells: tuple[int, ...]
    lead_bias: float | None = None
    lead_noise_std: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "anomaly_type", AnomalyType(self.anomaly_type))
        object.__setattr__(self, "target_cells", tuple(int(c) for c in self.target_cells))
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValidationError(f"magnitude must be in [0, 1], got {self.magnitude}")
        if not self.target_cells:
            raise ValidationError("at least one target cell is required")
        if self.duration < 0:
            raise ValidationError("duration must be non-negative")

    @property
    def end_t(self) -> float:
        return self.start_t + self.duration

    def bias(self) -> float:
        if self.lead_bias is not None:
            return self.lead_bias
        if self.anomaly_type is AnomalyType.LOOSE_VOLTAGE_LEAD:
            return self.magnitude * LEAD_VOLTAGE_PER_THETA
        if self.anomaly_type is AnomalyType.LOOSE_TEMP_LEAD:
            return self.magnitude * LEAD_TEMPERATURE_PER_THETA
        return 0.0

    def noise_std(self) -> float:
        if self.lead_noise_std is not None:
            return self.lead_noise_std
        return abs(self.bias()) * LEAD_NOISE_FRACTION

    def active(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.start_t) & (t < self.end_t)

    def to_dict(self) -> dict:
        return {
            "type": self.anomaly_type.value,
            "theta": self.magnitude,
            "start_t": self.start_t,
            "duration": self.duration,
            "target_cells": list(self.target_cells),
            "lead_bias": self.lead_bias,
            "lead_noise_std": self.lead_noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AnomalySpec:
        try:
            return cls(
                anomaly_type=AnomalyType(d["type"]),
                magnitude=float(d["theta"]),
                start_t=float(d["start_t"]),
                duration=float(d["duration"]),
                target_cells=tuple(d["target_cells"]),
                lead_bias=d.get("lead_bias"),
                lead_noise_std=d.get("lead_noise_std"),
            )
        except KeyError as exc:
            raise ValidationError(f"anomaly spec is missing field {exc}") from None


def short_resistance(theta: float) -> float:
    """Shunt resistance in ohms for a short of magnitude ``theta``."""
    return math.exp(9.0 * (1.0 - 0.6 * theta) ** 2) - 1.0


@dataclass(frozen=True)
class EffectiveParams:
    r_sc: float = math.inf
    b: float | None = None
    voltage_offset: float = 0.0
    temperature_offset: float = 0.0


def anomaly_params(
    spec: AnomalySpec,
    nominal: CellParams,
    t: float,
    rng: np.random.Generator | None = None,
) -> EffectiveParams:
    """Fault parameters in force at time ``t`` (nominal outside the window)."""
    if not bool(spec.active(t)):
        return EffectiveParams(b=nominal.b)
    kind = spec.anomaly_type
    if kind in (AnomalyType.ISC, AnomalyType.VOLTAGE_DROPOUT):
        return EffectiveParams(r_sc=short_resistance(spec.magnitude), b=nominal.b)
    if kind is AnomalyType.AIR_FLOW:
        return EffectiveParams(b=(1.0 - spec.magnitude) * nominal.b)
    rng = rng or np.random.default_rng()
    offset = spec.bias() + (rng.normal(0.0, spec.noise_std()) if spec.noise_std() > 0 else 0.0)
    if kind is AnomalyType.LOOSE_VOLTAGE_LEAD:
        return EffectiveParams(b=nominal.b, voltage_offset=offset)
    return EffectiveParams(b=nominal.b, temperature_offset=offset)


def infer_initial_state(dataset: Dataset, params: CellParams, cell: int) -> CellState:
    """Initial state from the first sample, assuming a relaxed diffusion branch."""
    v0 = float(dataset.voltages[0, cell])
    z0 = (v0 + float(dataset.current[0]) * params.r0 - params.ocv_intercept) / params.ocv_slope
    return CellState(float(np.clip(z0, 0.0, 100.0)), 0.0, float(dataset.temperatures[0, cell]))


@dataclass
class GroundTruth:
    spec: AnomalySpec
    anomaly_active: np.ndarray
    t: np.ndarray = field(repr=False)

    @property
    def target_cells(self) -> tuple[int, ...]:
        return self.spec.target_cells

    @classmethod
    def for_dataset(cls, spec: AnomalySpec, dataset: Dataset) -> GroundTruth:
        return cls(spec, spec.active(dataset.t), dataset.t.copy())

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "t0": float(self.t[0]),
            "sample_interval": float(self.t[1] - self.t[0]) if self.t.size > 1 else 1.0,
            "anomaly_active": self.anomaly_active.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GroundTruth:
        active = np.asarray(d["anomaly_active"], dtype=bool)
        t = d["t0"] + d["sample_interval"] * np.arange(active.size)
        return cls(AnomalySpec.from_dict(d["spec"]), active, t)


def inject(
    nominal: Dataset,
    spec: AnomalySpec,
    params: list[CellParams],
    seed: int = 0,
    initial: list[CellState] | None = None,
) -> Dataset:
    """Return a copy of ``nominal`` with the anomaly spliced into the target cells.

    Args:
        nominal: Measured (or generated) nominal telemetry.
        spec: Fault description.
        params: Per-cell model parameters, one entry per cell.
        seed: Seeds the sense-lead noise.
        initial: Plant state at the first sample per cell; inferred from the
            first measurement when omitted.

    Raises:
        UsageError: A target cell is out of range or ``params`` has the
            wrong length.
    """
    n = nominal.n_cells
    if len(params) != n:
        raise UsageError(f"{len(params)} parameter sets for {n} cells")
    bad = [c for c in spec.target_cells if not 0 <= c < n]
    if bad:
        raise UsageError(f"target cells {bad} outside [0, {n})")
    active = spec.active(nominal.t)
    targets = list(spec.target_cells)
    volts = np.array(nominal.voltages)
    temps = np.array(nominal.temperatures)
    kind = spec.anomaly_type

    if kind.is_sensor_fault:
        rng = np.random.default_rng(seed)
        k_win = int(active.sum())
        for c in targets:
            offset = spec.bias() + (rng.normal(0.0, spec.noise_std(), k_win) if spec.noise_std() > 0 else 0.0)
            if kind is AnomalyType.LOOSE_VOLTAGE_LEAD:
                volts[active, c] += offset
            else:
                temps[active, c] += offset
        return nominal.replace(voltages=volts, temperatures=temps)

    if not active.any():
        return nominal.replace(voltages=volts, temperatures=temps)
    cell_params = [params[c] for c in targets]
    if initial is None:
        init = [infer_initial_state(nominal, params[c], c) for c in targets]
    else:
        init = [initial[c] for c in targets]
    k, m = len(nominal), len(targets)
    base_b = np.array([p.b for p in cell_params])
    r_sc = np.full((k, m), np.inf)
    b = np.broadcast_to(base_b, (k, m)).copy()
    if kind is AnomalyType.AIR_FLOW:
        b[active] = (1.0 - spec.magnitude) * base_b
    else:
        r_sc[active] = short_resistance(spec.magnitude)
    short_heat = np.full(m, kind is AnomalyType.ISC)
    args = (cell_params, init, nominal.current, nominal.ambient, nominal.fan, nominal.sample_interval)
    v_nom, t_nom, _, _, _ = run_plant(*args)
    v_bad, t_bad, _, _, _ = run_plant(*args, r_sc=r_sc, b=b, short_heat=short_heat)
    onward = nominal.t >= spec.start_t
    for j, c in enumerate(targets):
        if kind in (AnomalyType.ISC, AnomalyType.VOLTAGE_DROPOUT):
            volts[onward, c] += v_bad[onward, j] - v_nom[onward, j]
        if kind in (AnomalyType.ISC, AnomalyType.AIR_FLOW):
            temps[onward, c] += t_bad[onward, j] - t_nom[onward, j]
    return nominal.replace(voltages=volts, temperatures=temps)
