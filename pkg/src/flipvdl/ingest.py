"""Recording I/O, unit conversion and analysis-window extraction.

A recording holds 16 impedance-planimetry diameter channels, the distal
pressure trace and the bag volume.  Files on disk use clinical units
(mm, mmHg, mL); every numerical routine downstream works in SI.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

N_SENSORS = 16
GRID_SIZE = 16
MMHG_TO_PA = 133.322
DEFAULT_SPACING_CM = 1.0
VOLUME_TOLERANCE = 0.02

HEADER = (
    ["time_s"]
    + [f"d{i:02d}_mm" for i in range(1, N_SENSORS + 1)]
    + ["p_distal_mmhg", "volume_ml"]
)


class RecordingError(ValueError):
    """Raised for malformed or physically invalid recordings."""


class WindowError(ValueError):
    """Raised when an analysis window cannot be built."""


@dataclass(frozen=True)
class FlipRecording:
    """Diameter, distal pressure and bag volume series.

    ``units`` is ``"clinical"`` (mm, mmHg, mL, cm) or ``"si"``
    (m, Pa, m^3, m).  ``diameters`` has shape (16, T).
    """

    time: np.ndarray
    diameters: np.ndarray
    distal_pressure: np.ndarray
    bag_volume: np.ndarray
    sensor_spacing: float = DEFAULT_SPACING_CM
    units: str = "clinical"

    def __post_init__(self):
        validate_recording(self)

    @property
    def n_samples(self) -> int:
        return self.time.shape[0]

    @property
    def length(self) -> float:
        """Span between the first and last sensor, in the recording's units."""
        return (N_SENSORS - 1) * self.sensor_spacing

    def sensor_positions(self) -> np.ndarray:
        return np.arange(N_SENSORS) * self.sensor_spacing


def validate_recording(rec: FlipRecording) -> None:
    t = np.asarray(rec.time)
    d = np.asarray(rec.diameters)
    if rec.units not in ("clinical", "si"):
        raise RecordingError(f"unknown unit system {rec.units!r}")
    if t.ndim != 1:
        raise RecordingError("time must be one-dimensional")
    if d.ndim != 2 or d.shape[0] != N_SENSORS:
        raise RecordingError(
            f"expected {N_SENSORS} diameter channels, got shape {d.shape}"
        )
    n = t.shape[0]
    for name in ("diameters", "distal_pressure", "bag_volume"):
        arr = np.asarray(getattr(rec, name))
        if arr.shape[-1] != n:
            raise RecordingError(f"{name} has {arr.shape[-1]} samples, time has {n}")
    if n < 2:
        raise RecordingError("a recording needs at least two samples")
    if not np.all(np.diff(t) > 0):
        raise RecordingError("time must be strictly increasing")
    if not np.all(np.isfinite(d)):
        raise RecordingError("diameters contain NaN or inf")
    if np.any(d <= 0):
        raise RecordingError("diameters must be strictly positive")
    if not (np.all(np.isfinite(rec.distal_pressure)) and np.all(np.isfinite(rec.bag_volume))):
        raise RecordingError("pressure or volume contains NaN or inf")
    if rec.sensor_spacing <= 0:
        raise RecordingError("sensor spacing must be positive")


def parse_recording(path, sensor_spacing: float = DEFAULT_SPACING_CM) -> FlipRecording:
    """Read a recording CSV (clinical units) and validate it."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise RecordingError(f"{path}: empty file") from None
        if header != HEADER:
            n_diam = sum(1 for h in header if h.startswith("d") and h.endswith("_mm"))
            if n_diam != N_SENSORS:
                raise RecordingError(
                    f"{path}: expected {N_SENSORS} diameter columns, found {n_diam}"
                )
            raise RecordingError(f"{path}: malformed header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise RecordingError(
                    f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise RecordingError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise RecordingError(f"{path}: no samples")
    data = np.array(rows, dtype=float)
    return FlipRecording(
        time=data[:, 0],
        diameters=data[:, 1 : 1 + N_SENSORS].T.copy(),
        distal_pressure=data[:, 1 + N_SENSORS],
        bag_volume=data[:, 2 + N_SENSORS],
        sensor_spacing=sensor_spacing,
        units="clinical",
    )


def write_recording(rec: FlipRecording, path) -> None:
    """Write a recording in the clinical CSV schema with round-trip precision."""
    rec = from_si(rec) if rec.units == "si" else rec
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for k in range(rec.n_samples):
            row = [rec.time[k], *rec.diameters[:, k], rec.distal_pressure[k], rec.bag_volume[k]]
            writer.writerow([repr(float(v)) for v in row])


def to_si(rec: FlipRecording) -> FlipRecording:
    if rec.units == "si":
        return rec
    return replace(
        rec,
        diameters=np.asarray(rec.diameters) * 1e-3,
        distal_pressure=np.asarray(rec.distal_pressure) * MMHG_TO_PA,
        bag_volume=np.asarray(rec.bag_volume) * 1e-6,
        sensor_spacing=rec.sensor_spacing * 1e-2,
        units="si",
    )


def from_si(rec: FlipRecording) -> FlipRecording:
    if rec.units == "clinical":
        return rec
    return replace(
        rec,
        diameters=np.asarray(rec.diameters) * 1e3,
        distal_pressure=np.asarray(rec.distal_pressure) / MMHG_TO_PA,
        bag_volume=np.asarray(rec.bag_volume) * 1e6,
        sensor_spacing=rec.sensor_spacing * 1e2,
        units="clinical",
    )


def diameter_to_area(d):
    return np.pi * np.asarray(d) ** 2 / 4.0


def area_to_diameter(a):
    return np.sqrt(4.0 * np.asarray(a) / np.pi)


def reference_area(volume: float, length: float) -> float:
    """Area of the bag if it were a perfect cylinder of the given length."""
    if volume <= 0 or length <= 0:
        raise ValueError(f"volume and length must be positive, got {volume}, {length}")
    return volume / length


@dataclass
class AnalysisWindow:
    """One contraction interval, non-dimensionalised and gridded.

    ``alpha_grid`` and ``pd_series`` are the fixed-size (16 x 16, 16)
    versions used by the network; ``times``, ``area`` and ``pd`` keep the
    native sampling for the inverse solver.
    """

    t_start: float
    t_end: float
    alpha_grid: np.ndarray
    pd_series: np.ndarray
    volume: float
    duration: float
    times: np.ndarray
    area: np.ndarray
    pd: np.ndarray
    length: float
    area_scale: float
    meta: dict = field(default_factory=dict)

    @property
    def alpha(self) -> np.ndarray:
        return self.area / self.area_scale

    @property
    def positions(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.area.shape[0])

    def grid_times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, GRID_SIZE)


def _interp_rows(t_new, t, values):
    return np.stack([np.interp(t_new, t, row) for row in np.atleast_2d(values)])


def resample_time(values, t, t_new):
    """Linearly resample each row of ``values`` from times ``t`` to ``t_new``."""
    values = np.asarray(values, dtype=float)
    out = _interp_rows(t_new, t, values)
    return out if values.ndim == 2 else out[0]


def select_window(rec: FlipRecording, t_start: float, t_end: float, fit) -> AnalysisWindow:
    """Cut ``[t_start, t_end]`` out of a recording and non-dimensionalise it.

    ``fit`` is a :class:`flipvdl.calibrate.TubeLawFit`; its area scale turns
    areas into the non-dimensional ``alpha``.
    """
    if not t_end > t_start:
        raise WindowError(f"degenerate window [{t_start}, {t_end}]")
    si = to_si(rec)
    t = si.time
    eps = 1e-9 * max(1.0, abs(t[-1]))
    if t_start < t[0] - eps or t_end > t[-1] + eps:
        raise WindowError(
            f"window [{t_start}, {t_end}] outside recording [{t[0]}, {t[-1]}]"
        )
    t_start = max(t_start, t[0])
    t_end = min(t_end, t[-1])

    inside = (t > t_start + eps) & (t < t_end - eps)
    times = np.concatenate([[t_start], t[inside], [t_end]])
    area = diameter_to_area(si.diameters)
    area_w = resample_time(area, t, times)
    # keep exact samples where the window edge coincides with a sample
    area_w[:, 1:-1] = area[:, inside]
    pd_w = np.interp(times, t, si.distal_pressure)
    pd_w[1:-1] = si.distal_pressure[inside]

    vol = np.interp(times, t, si.bag_volume)
    vol[1:-1] = si.bag_volume[inside]
    mean_vol = float(np.mean(vol))
    if mean_vol <= 0:
        raise WindowError("bag volume must be positive inside the window")
    deviation = float(np.max(np.abs(vol - mean_vol))) / mean_vol
    if deviation > VOLUME_TOLERANCE:
        warnings.warn(
            f"bag volume varies by {100 * deviation:.1f}% inside the window",
            stacklevel=2,
        )

    grid_t = np.linspace(t_start, t_end, GRID_SIZE)
    alpha_grid = resample_time(area_w, times, grid_t) / fit.area_scale
    pd_series = np.interp(grid_t, times, pd_w)
    return AnalysisWindow(
        t_start=float(t_start),
        t_end=float(t_end),
        alpha_grid=alpha_grid,
        pd_series=pd_series,
        volume=mean_vol,
        duration=float(t_end - t_start),
        times=times,
        area=area_w,
        pd=pd_w,
        length=si.length,
        area_scale=fit.area_scale,
        meta={"volume_deviation": deviation},
    )
