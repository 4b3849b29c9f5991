"""Synthetic nominal telemetry for a group of series-connected cells."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..data import Dataset
from ..errors import SimulationError, ValidationError
from .cell import CellParams, CellState

BALANCING_SHUNT_OHM = 100.0


@dataclass(frozen=True)
class CellSpread:
    """Cell-to-cell variation: relative std for parameters, absolute for initial state."""

    r0: float = 0.02
    r1: float = 0.05
    c1: float = 0.05
    q: float = 0.01
    a: float = 0.20
    b: float = 0.20
    soc: float = 0.5
    temp: float = 0.2

    def __post_init__(self) -> None:
        if any(v < 0 for v in vars(self).values()):
            raise ValidationError("spreads must be non-negative")

    @classmethod
    def none(cls) -> CellSpread:
        return cls(0, 0, 0, 0, 0, 0, 0, 0)


@dataclass(frozen=True)
class NoiseConfig:
    voltage_std: float = 0.4e-3
    temperature_std: float = 0.03


@dataclass(frozen=True)
class DriveCycle:
    """Piecewise-constant locomotive duty with idle, motoring and regen segments.

    The segment sign is steered to keep the group SoC inside
    ``[soc_low, soc_high]`` so long windows stay charge-neutral.
    """

    i_max: float = 150.0
    mean_segment_s: float = 60.0
    min_segment_s: float = 10.0
    max_segment_s: float = 300.0
    p_idle: float = 0.1
    jitter_std: float = 2.0
    soc_low: float = 35.0
    soc_high: float = 75.0
    mean_mission_s: float = 3600.0
    mean_rest_s: float = 0.0
    min_intensity: float = 0.4

    def generate(self, duration: float, dt: float, rng: np.random.Generator, q: float, z0: float) -> np.ndarray:
        k = int(round(duration / dt))
        out = np.empty(k)
        z = z0
        i = 0
        mission_end = 0
        resting = True
        intensity = 1.0
        while i < k:
            if i >= mission_end:
                resting = not resting if self.mean_rest_s > 0 else False
                mean = self.mean_rest_s if resting else self.mean_mission_s
                mission_end = i + max(1, int(rng.exponential(mean) / dt))
                intensity = rng.uniform(self.min_intensity, 1.0)
            seg = int(np.clip(rng.exponential(self.mean_segment_s), self.min_segment_s, self.max_segment_s) / dt)
            seg = max(1, min(seg, k - i, mission_end - i))
            u = rng.random()
            level = rng.uniform(0.1, 1.0) * self.i_max * intensity
            if resting or u < self.p_idle:
                level = 0.0
            else:
                # discharge bias decays as SoC approaches the low bound
                frac = (z - self.soc_low) / (self.soc_high - self.soc_low)
                p_dis = float(np.clip(0.2 + 0.6 * frac, 0.05, 0.95))
                if rng.random() >= p_dis:
                    level = -0.8 * level
            out[i:i + seg] = level
            z -= level * seg * dt / (36.0 * q)
            i += seg
        if self.jitter_std > 0:
            out += rng.normal(0.0, self.jitter_std, k)
        return out


@dataclass(frozen=True)
class Ambient:
    mean: float = 22.0
    amplitude: float = 4.0
    walk_std: float = 0.002

    def generate(self, duration: float, dt: float, rng: np.random.Generator) -> np.ndarray:
        k = int(round(duration / dt))
        t = np.arange(k) * dt
        phase = rng.uniform(0, 2 * math.pi)
        walk = np.cumsum(rng.normal(0.0, self.walk_std, k))
        return self.mean + self.amplitude * np.sin(2 * math.pi * t / 86400.0 + phase) + walk


@dataclass(frozen=True)
class FanControl:
    """Cooling fan schedule.

    By default the fan runs continuously, which keeps the group in a
    stationary thermal regime. With ``always_on=False`` a hysteresis
    thermostat switches it on the rise of a reference cell above ambient.
    """

    always_on: bool = True
    on_delta: float = 1.0
    off_delta: float = 0.4


@dataclass
class SimulatedGroup:
    """A generated dataset with the ground-truth plant behind it."""

    dataset: Dataset
    params: list[CellParams]
    initial: list[CellState]
    soc: np.ndarray
    true_voltages: np.ndarray
    true_temperatures: np.ndarray
    r_sc: np.ndarray = field(repr=False)


def sample_cell_params(
    n_cells: int, base: CellParams, spread: CellSpread, rng: np.random.Generator
) -> list[CellParams]:
    out = []
    for _ in range(n_cells):
        draws = {
            name: getattr(base, name) * (1.0 + getattr(spread, name) * rng.standard_normal())
            for name in ("r0", "r1", "c1", "q", "a", "b")
        }
        out.append(base.with_(**draws))
    return out


def _param_arrays(params: list[CellParams]) -> dict[str, np.ndarray]:
    return {
        name: np.array([getattr(p, name) for p in params], dtype=float)
        for name in ("r0", "r1", "c1", "q", "a", "b", "ocv_slope", "ocv_intercept")
    }


def run_plant(
    params: list[CellParams],
    initial: list[CellState],
    current: np.ndarray,
    ambient: np.ndarray,
    fan: np.ndarray,
    dt: float = 1.0,
    r_sc: np.ndarray | None = None,
    b: np.ndarray | None = None,
    short_heat: np.ndarray | None = None,
    check_soc: bool = True,
):
    """Simulate cells sharing one current/ambient/fan trace.

    Returns ``(v, temp, soc, v_c, i_sc)`` arrays of shape ``(k, m)`` holding
    the pre-step values at each sample.
    """
    k, m = current.size, len(params)
    pa = _param_arrays(params)
    r_sc = np.full((k, m), np.inf) if r_sc is None else np.ascontiguousarray(r_sc, dtype=float)
    b = np.broadcast_to(pa["b"], (k, m)).copy() if b is None else np.ascontiguousarray(b, dtype=float)
    short_heat = np.ones(m, dtype=np.bool_) if short_heat is None else np.asarray(short_heat, dtype=np.bool_)
    v, temp, soc, vc, isc = _kernels.simulate_cells(
        np.ascontiguousarray(current, dtype=float), r_sc,
        np.ascontiguousarray(ambient, dtype=float), np.ascontiguousarray(fan, dtype=np.float64), float(dt),
        pa["r0"], pa["r1"], pa["c1"], pa["q"], pa["a"], b, pa["ocv_slope"], pa["ocv_intercept"],
        np.array([s.z for s in initial]), np.array([s.v_c for s in initial]), np.array([s.temp for s in initial]),
        short_heat,
    )
    if check_soc and soc.size and (soc.min() < 0.0 or soc.max() > 100.0):
        raise SimulationError("state of charge left [0, 100] during simulation")
    return v, temp, soc, vc, isc


def generate_group(
    n_cells: int = 11,
    base_params: CellParams | None = None,
    cell_spread: CellSpread | None = None,
    drive_cycle: DriveCycle | np.ndarray | None = None,
    duration: float = 86400.0,
    seed: int = 0,
    *,
    dt: float = 1.0,
    noise: NoiseConfig | None = None,
    ambient: Ambient | None = None,
    fan_control: FanControl | None = None,
    initial_soc: float = 55.0,
    balancing: tuple[tuple[float, float], ...] = (),
    balancing_tolerance: float = 0.05,
    params: list[CellParams] | None = None,
) -> SimulatedGroup:
    """Simulate a group and record noisy measurements.

    ``seed`` drives four independent streams: cell parameters, duty cycle,
    ambient profile and sensor noise. Passing ``params`` skips the parameter
    draw so several runs can share one physical group.

    ``balancing`` lists ``(start_t, end_t)`` windows during which every cell
    more than ``balancing_tolerance`` percent above the group minimum SoC
    (sampled at the window start) is bled through a 100 ohm shunt.
    """
    if n_cells < 2:
        raise ValidationError("a cell group needs at least 2 cells")
    if duration <= 0:
        raise ValidationError("duration must be positive")
    base_params = base_params or CellParams()
    cell_spread = cell_spread or CellSpread()
    noise = noise or NoiseConfig()
    ambient = ambient or Ambient()
    fan_control = fan_control or FanControl()
    ss = np.random.SeedSequence(seed)
    rng_params, rng_drive, rng_amb, rng_noise, rng_init = (np.random.default_rng(s) for s in ss.spawn(5))

    if params is None:
        params = sample_cell_params(n_cells, base_params, cell_spread, rng_params)
    elif len(params) != n_cells:
        raise ValidationError(f"{len(params)} parameter sets for {n_cells} cells")
    k = int(round(duration / dt))
    if isinstance(drive_cycle, np.ndarray):
        current = np.asarray(drive_cycle, dtype=float)
        if current.size != k:
            raise ValidationError(f"drive cycle has {current.size} samples, expected {k}")
    else:
        current = (drive_cycle or DriveCycle()).generate(duration, dt, rng_drive, base_params.q, initial_soc)
    t_amb = ambient.generate(duration, dt, rng_amb)
    temp0 = t_amb[0] + 0.5
    if fan_control.always_on:
        fan = np.ones(k, dtype=np.int8)
    else:
        fan = _kernels.thermostat(
            current, t_amb, float(dt), base_params.r0, base_params.r1, base_params.c1,
            base_params.a, base_params.b, temp0, fan_control.on_delta, fan_control.off_delta,
        )

    z_init = initial_soc + cell_spread.soc * rng_init.standard_normal(n_cells)
    t_init = temp0 + cell_spread.temp * rng_init.standard_normal(n_cells)
    initial = [CellState(float(z), 0.0, float(tc)) for z, tc in zip(z_init, t_init)]

    t = np.arange(k) * dt
    r_sc = np.full((k, n_cells), np.inf)
    flags = np.zeros(k, dtype=np.int8)
    if balancing:
        # SoC at each window start decides which cells bleed; needs a plain run first
        _, _, soc_plain, _, _ = run_plant(params, initial, current, t_amb, fan, dt)
        for start, end in balancing:
            win = (t >= start) & (t <= end)
            if not win.any():
                raise ValidationError(f"balancing window ({start}, {end}) outside the simulated span")
            i0 = int(np.flatnonzero(win)[0])
            soc_now = soc_plain[i0]
            bleed = soc_now > soc_now.min() + balancing_tolerance
            r_sc[np.ix_(win, bleed)] = BALANCING_SHUNT_OHM
            flags[win] = 1
            # later windows must see the post-bleed SoC
            _, _, soc_plain, _, _ = run_plant(params, initial, current, t_amb, fan, dt, r_sc=r_sc)

    v, temp, soc, _, _ = run_plant(params, initial, current, t_amb, fan, dt, r_sc=r_sc)
    v_meas = v + rng_noise.normal(0.0, noise.voltage_std, v.shape) if noise.voltage_std > 0 else v.copy()
    t_meas = temp + rng_noise.normal(0.0, noise.temperature_std, temp.shape) if noise.temperature_std > 0 else temp.copy()
    ds = Dataset(
        t=t, current=current, ambient=t_amb, fan=fan, balancing=flags,
        voltages=v_meas, temperatures=t_meas, sample_interval=dt,
    )
    return SimulatedGroup(ds, list(params), initial, soc, v, temp, r_sc)


def generate_nominal(
    n_cells: int = 11,
    base_params: CellParams | None = None,
    cell_spread: CellSpread | None = None,
    drive_cycle: DriveCycle | np.ndarray | None = None,
    duration: float = 86400.0,
    seed: int = 0,
    **kwargs,
) -> Dataset:
    """Nominal telemetry only; see :func:`generate_group` for the keyword options."""
    return generate_group(n_cells, base_params, cell_spread, drive_cycle, duration, seed, **kwargs).dataset
