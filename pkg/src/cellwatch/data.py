"""Telemetry containers and the CSV interchange format.

The on-disk layout is one header line followed by one row per sample::

    t,current,ambient,fan,balancing,V_1,...,V_n,T_1,...,T_n

Floats are written with ``%.17g`` so a write/read cycle is lossless.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    EmptyDatasetError,
    FormatError,
    RowError,
    SequencingError,
    ValidationError,
)

BASE_COLUMNS = ("t", "current", "ambient", "fan", "balancing")
FLOAT_FMT = "%.17g"
# relative slack on the sample spacing check
_DT_RTOL = 1e-6


class SignalKind(str, enum.Enum):
    VOLTAGE = "voltage"
    TEMPERATURE = "temperature"


@dataclass(frozen=True)
class TelemetryFrame:
    """One sample of a cell group.

    ``current`` is positive on discharge. ``voltages`` and ``temperatures``
    hold one entry per cell, in volts and degrees Celsius.
    """

    t: float
    current: float
    voltages: np.ndarray
    temperatures: np.ndarray
    ambient: float
    fan: int
    balancing: int = 0

    def __post_init__(self) -> None:
        v = np.asarray(self.voltages, dtype=float)
        tc = np.asarray(self.temperatures, dtype=float)
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "temperatures", tc)
        if v.ndim != 1 or v.shape != tc.shape:
            raise ValidationError("voltages and temperatures must be equal-length vectors")
        if v.size < 2:
            raise ValidationError(f"a cell group needs at least 2 cells, got {v.size}")
        if self.fan not in (0, 1):
            raise ValidationError(f"fan must be 0 or 1, got {self.fan!r}")

    @property
    def n_cells(self) -> int:
        return self.voltages.size

    def signal(self, kind: SignalKind) -> np.ndarray:
        return self.voltages if kind is SignalKind.VOLTAGE else self.temperatures


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable telemetry for a single cell group.

    Per-cell signals are ``(k, n)`` arrays. Balancing events are closed
    ``(start_t, end_t)`` intervals covering the flagged samples.
    """

    t: np.ndarray
    current: np.ndarray
    ambient: np.ndarray
    fan: np.ndarray
    balancing: np.ndarray
    voltages: np.ndarray
    temperatures: np.ndarray
    sample_interval: float = 1.0
    balancing_events: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self) -> None:
        for name in ("t", "current", "ambient"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        for name in ("fan", "balancing"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=np.int8))
        for name in ("voltages", "temperatures"):
            object.__setattr__(self, name, _frozen(np.atleast_2d(getattr(self, name))))
        k = self.t.size
        if k == 0:
            raise EmptyDatasetError("dataset has no frames")
        for name in ("current", "ambient", "fan", "balancing"):
            if getattr(self, name).shape != (k,):
                raise ValidationError(f"column {name!r} has {getattr(self, name).size} rows, expected {k}")
        if self.voltages.shape != self.temperatures.shape or self.voltages.shape[0] != k:
            raise ValidationError("voltage/temperature matrices must both be (frames, cells)")
        if self.voltages.shape[1] < 2:
            raise ValidationError("a cell group needs at least 2 cells")
        if not np.isin(self.fan, (0, 1)).all() or not np.isin(self.balancing, (0, 1)).all():
            raise ValidationError("fan and balancing flags must be 0 or 1")
        if self.sample_interval <= 0:
            raise ValidationError("sample_interval must be positive")
        _check_spacing(self.t, self.sample_interval)
        events = self.balancing_events or _events_from_flags(self.t, self.balancing)
        object.__setattr__(self, "balancing_events", tuple((float(a), float(b)) for a, b in events))
        _check_events(self.balancing_events, float(self.t[0]), float(self.t[-1]))

    @property
    def n_cells(self) -> int:
        return self.voltages.shape[1]

    def __len__(self) -> int:
        return self.t.size

    def signal(self, kind: SignalKind) -> np.ndarray:
        return self.voltages if kind is SignalKind.VOLTAGE else self.temperatures

    def frame(self, i: int) -> TelemetryFrame:
        return TelemetryFrame(
            t=float(self.t[i]),
            current=float(self.current[i]),
            voltages=self.voltages[i],
            temperatures=self.temperatures[i],
            ambient=float(self.ambient[i]),
            fan=int(self.fan[i]),
            balancing=int(self.balancing[i]),
        )

    @property
    def frames(self) -> list[TelemetryFrame]:
        return list(iter(self))

    def __iter__(self) -> Iterator[TelemetryFrame]:
        for i in range(len(self)):
            yield self.frame(i)

    def slice(self, start: int, stop: int | None = None) -> Dataset:
        """Sub-range of frames by index; balancing events are re-derived."""
        sl = np.s_[start:stop]
        return Dataset(
            t=self.t[sl],
            current=self.current[sl],
            ambient=self.ambient[sl],
            fan=self.fan[sl],
            balancing=self.balancing[sl],
            voltages=self.voltages[sl],
            temperatures=self.temperatures[sl],
            sample_interval=self.sample_interval,
        )

    def replace(self, **changes) -> Dataset:
        fields = dict(
            t=self.t,
            current=self.current,
            ambient=self.ambient,
            fan=self.fan,
            balancing=self.balancing,
            voltages=self.voltages,
            temperatures=self.temperatures,
            sample_interval=self.sample_interval,
        )
        fields.update(changes)
        return Dataset(**fields)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.sample_interval == other.sample_interval
            and self.balancing_events == other.balancing_events
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("t", "current", "ambient", "fan", "balancing", "voltages", "temperatures")
            )
        )

    @classmethod
    def from_frames(cls, frames: Sequence[TelemetryFrame], sample_interval: float = 1.0) -> Dataset:
        if not frames:
            raise EmptyDatasetError("dataset has no frames")
        return cls(
            t=[f.t for f in frames],
            current=[f.current for f in frames],
            ambient=[f.ambient for f in frames],
            fan=[f.fan for f in frames],
            balancing=[f.balancing for f in frames],
            voltages=np.stack([f.voltages for f in frames]),
            temperatures=np.stack([f.temperatures for f in frames]),
            sample_interval=sample_interval,
        )


def _check_spacing(t: np.ndarray, dt: float) -> None:
    if t.size < 2:
        return
    d = np.diff(t)
    bad = np.flatnonzero(np.abs(d - dt) > _DT_RTOL * dt)
    if bad.size:
        i = int(bad[0]) + 1
        raise SequencingError(
            f"sample {i} at t={t[i]!r} follows t={t[i - 1]!r}; expected spacing {dt!r}",
        )


def _events_from_flags(t: np.ndarray, flags: np.ndarray) -> list[tuple[float, float]]:
    f = np.concatenate(([0], flags.astype(np.int8), [0]))
    edges = np.diff(f)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return [(float(t[a]), float(t[b])) for a, b in zip(starts, stops)]


def _check_events(events, t0: float, t1: float) -> None:
    prev_end = -math.inf
    for start, end in events:
        if end < start or start < t0 or end > t1:
            raise ValidationError(f"balancing event ({start}, {end}) outside [{t0}, {t1}]")
        if start <= prev_end:
            raise ValidationError("balancing events overlap")
        prev_end = end


def header(n_cells: int) -> list[str]:
    return (
        list(BASE_COLUMNS)
        + [f"V_{i}" for i in range(1, n_cells + 1)]
        + [f"T_{i}" for i in range(1, n_cells + 1)]
    )


def _parse_header(cols: list[str]) -> int:
    cols = [c.strip() for c in cols]
    nb = len(BASE_COLUMNS)
    if tuple(cols[:nb]) != BASE_COLUMNS or (len(cols) - nb) % 2:
        raise FormatError(f"header must start with {','.join(BASE_COLUMNS)} followed by V_i and T_i columns")
    n = (len(cols) - nb) // 2
    if n < 2 or cols != header(n):
        raise FormatError(f"malformed cell columns in header: {','.join(cols[nb:])}")
    return n


def load_csv(path: str | Path, sample_interval: float | None = None) -> Dataset:
    """Read a telemetry CSV file.

    Args:
        path: File to read.
        sample_interval: Expected spacing in seconds. Inferred from the first
            two timestamps when omitted (1 s for single-row files).

    Raises:
        FormatError: Missing or malformed header.
        RowError: Wrong field count or unparsable value; message carries the
            1-based line number.
        SequencingError: Timestamps are not evenly spaced and increasing.
        EmptyDatasetError: Header present but no data rows.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        n = _parse_header(cols)
        width = len(cols)
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise RowError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                vals = [float(x) for x in row]
            except ValueError as exc:
                raise RowError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise RowError(f"{path}:{lineno}: non-finite value")
            if vals[3] not in (0.0, 1.0) or vals[4] not in (0.0, 1.0):
                raise RowError(f"{path}:{lineno}: fan/balancing must be 0 or 1")
            if rows:
                prev = rows[-1][0]
                step = sample_interval if sample_interval is not None else (
                    vals[0] - prev if len(rows) == 1 else rows[1][0] - rows[0][0]
                )
                if step <= 0 or abs(vals[0] - prev - step) > _DT_RTOL * step:
                    raise SequencingError(f"{path}:{lineno}: t={vals[0]!r} does not follow t={prev!r}")
            rows.append(vals)
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    a = np.asarray(rows)
    if sample_interval is None:
        sample_interval = float(a[1, 0] - a[0, 0]) if len(a) > 1 else 1.0
    nb = len(BASE_COLUMNS)
    return Dataset(
        t=a[:, 0],
        current=a[:, 1],
        ambient=a[:, 2],
        fan=a[:, 3],
        balancing=a[:, 4],
        voltages=a[:, nb:nb + n],
        temperatures=a[:, nb + n:],
        sample_interval=sample_interval,
    )


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` in the interchange layout.

    Raises:
        ValidationError: Any non-finite value in the dataset.
        OSError: The path cannot be written.
    """
    cols = [
        dataset.t[:, None],
        dataset.current[:, None],
        dataset.ambient[:, None],
        dataset.fan[:, None].astype(float),
        dataset.balancing[:, None].astype(float),
        dataset.voltages,
        dataset.temperatures,
    ]
    table = np.hstack(cols)
    if not np.isfinite(table).all():
        raise ValidationError("dataset contains non-finite values; refusing to serialize")
    nb = len(BASE_COLUMNS)
    fmt = [FLOAT_FMT, FLOAT_FMT, FLOAT_FMT, "%d", "%d"] + [FLOAT_FMT] * (table.shape[1] - nb)
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header(dataset.n_cells)) + "\n")
        np.savetxt(fh, table, fmt=fmt, delimiter=",")
