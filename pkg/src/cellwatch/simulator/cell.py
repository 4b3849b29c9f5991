"""Thevenin 1RC cell with a shunt short-circuit branch and a lumped thermal model.

State of charge ``z`` is in percent and capacity ``q`` in ampere-hours, so
the coulomb-counting rate is ``-I_b / (36 q)``. Current is positive on
discharge. The thermal sink ``b (T - T_amb) F`` only cools when ``b < 0``
and vanishes entirely while the fan is off.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from ..errors import SimulationError, ValidationError

OCV_INTERCEPT = 3.5
OCV_SLOPE = 0.007


@dataclass(frozen=True)
class CellParams:
    """Electrical and thermal parameters of one (parallel-equivalent) cell.

    Attributes:
        r0: Ohmic resistance [ohm].
        r1: Polarisation resistance [ohm].
        c1: Polarisation capacitance [F].
        q: Capacity [Ah].
        a: Thermal dissipation coefficient [degC/J].
        b: Thermal inertia coefficient [1/s]; negative.
        ocv_slope: OCV gradient [V per SoC percent].
        ocv_intercept: OCV at zero SoC [V].
    """

    r0: float = 0.6e-3
    r1: float = 0.4e-3
    c1: float = 1.5e5
    q: float = 111.0
    a: float = 4.0e-4
    b: float = -2.5e-4
    ocv_slope: float = OCV_SLOPE
    ocv_intercept: float = OCV_INTERCEPT

    def __post_init__(self) -> None:
        for name in ("r0", "r1", "c1", "q"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.b < 0:
            raise ValidationError(f"b must be negative for the fan to cool, got {self.b}")

    def ocv(self, z: float) -> float:
        return self.ocv_intercept + self.ocv_slope * z

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CellParams:
        return cls(**{k: float(v) for k, v in d.items()})

    def with_(self, **changes) -> CellParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class CellState:
    z: float
    v_c: float
    temp: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.z <= 100.0:
            raise SimulationError(f"state of charge {self.z:.3f}% outside [0, 100]")


def terminal_voltage(params: CellParams, state: CellState, i_cell: float, r_sc: float = math.inf) -> tuple[float, float]:
    """Terminal voltage and short-circuit current for the present state."""
    open_v = params.ocv(state.z) - state.v_c - i_cell * params.r0
    if math.isinf(r_sc):
        return open_v, 0.0
    if r_sc < 0:
        raise ValidationError("r_sc must be non-negative")
    i_sc = open_v / (params.r0 + r_sc)
    return i_sc * r_sc, i_sc


def step_electrical(
    params: CellParams,
    state: CellState,
    i_cell: float,
    r_sc: float = math.inf,
    dt: float = 1.0,
) -> tuple[CellState, float, float]:
    """Advance SoC and diffusion voltage by one explicit Euler step.

    Returns:
        ``(next_state, v_terminal, i_sc)`` where the voltage and short current
        are evaluated at the current (pre-step) state.

    Raises:
        SimulationError: The next SoC leaves [0, 100].
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    v, i_sc = terminal_voltage(params, state, i_cell, r_sc)
    i_b = i_cell + i_sc
    z = state.z - i_b / (36.0 * params.q) * dt
    v_c = state.v_c + (-state.v_c / (params.r1 * params.c1) + i_b / params.c1) * dt
    if not 0.0 <= z <= 100.0:
        raise SimulationError(f"state of charge {z:.3f}% outside [0, 100]")
    return CellState(z, v_c, state.temp), v, i_sc


def heat_rate(params: CellParams, state: CellState, i_cell: float, i_sc: float, r_sc: float) -> float:
    short = 0.0 if math.isinf(r_sc) else i_sc * i_sc * r_sc
    return i_cell * i_cell * params.r0 + short + state.v_c * state.v_c / params.r1


def step_thermal(
    params: CellParams,
    state: CellState,
    i_cell: float,
    i_sc: float,
    r_sc: float,
    t_amb: float,
    fan: int,
    dt: float = 1.0,
) -> CellState:
    """One Euler step of the lumped thermal model; electrical state is kept."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    dtemp = params.a * heat_rate(params, state, i_cell, i_sc, r_sc) + params.b * (state.temp - t_amb) * fan
    return CellState(state.z, state.v_c, state.temp + dtemp * dt)


def step(
    params: CellParams,
    state: CellState,
    i_cell: float,
    t_amb: float,
    fan: int,
    r_sc: float = math.inf,
    dt: float = 1.0,
) -> tuple[CellState, float, float]:
    """Combined electrical + thermal step; heat uses the pre-step state."""
    nxt, v, i_sc = step_electrical(params, state, i_cell, r_sc, dt)
    hot = step_thermal(params, state, i_cell, i_sc, r_sc, t_amb, fan, dt)
    return CellState(nxt.z, nxt.v_c, hot.temp), v, i_sc
