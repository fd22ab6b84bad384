"""Discrete mechanics parameters and EGJ work metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .calibrate import TubeLawFit
from .ingest import AnalysisWindow, area_to_diameter, diameter_to_area
from .inverse import MechanicsState

EGJ_THRESHOLD = 0.6
A1 = float(diameter_to_area(3e-3))
A2 = float(diameter_to_area(22e-3))


class EgjDetectionError(ValueError):
    pass


@dataclass(frozen=True)
class PrimaryParams:
    k_over_ao: float
    po_minus_k: float
    p_max: float
    t_max: float
    volume: float
    theta_max: float

    @classmethod
    def names(cls) -> list:
        return [f.name for f in fields(cls)]

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    @classmethod
    def from_array(cls, values) -> "PrimaryParams":
        return cls(*(float(v) for v in values))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WorkMetrics:
    egjw: float
    egjrow1: float
    egjrow2: float
    egjrow3: float

    @classmethod
    def names(cls) -> list:
        return [f.name for f in fields(cls)]

    def as_array(self) -> np.ndarray:
        return np.array([self.egjw, self.egjrow1, self.egjrow2, self.egjrow3])


@dataclass(frozen=True)
class EgjRegion:
    """Index bounds are inclusive sensor indices and native time indices."""

    x1: float
    x2: float
    t1: float
    t2: float
    a1: float = A1
    a2: float = A2
    i1: int = 0
    i2: int = 0
    k1: int = 0
    k2: int = 0

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.t1 < self.t2 and self.a1 < self.a2):
            raise ValueError(f"degenerate EGJ region {self}")


def _opening_interval(mean_diameter):
    # lowest diameter, then the largest one that follows it
    k1 = int(np.argmin(mean_diameter[:-1]))
    k2 = k1 + 1 + int(np.argmax(mean_diameter[k1 + 1 :]))
    return k1, k2


def locate_egj(window: AnalysisWindow, state: MechanicsState | None = None, bounds=None,
               threshold: float = EGJ_THRESHOLD) -> EgjRegion:
    """Find the distal narrowing and its opening interval.

    ``bounds`` (inclusive sensor indices) overrides automatic detection.
    """
    area = window.area if state is None else state.area
    times = window.times
    diam = area_to_diameter(area)
    mean_d = diam.mean(axis=1)
    n = mean_d.size
    if bounds is None:
        body = mean_d[: n // 2].mean()
        narrow = mean_d < threshold * body
        if not narrow[-1]:
            raise EgjDetectionError(
                "no distal narrowing below "
                f"{threshold:.0%} of the body diameter; pass manual bounds"
            )
        i1 = n - 1
        while i1 > 0 and narrow[i1 - 1]:
            i1 -= 1
        i2 = n - 1
        if i1 == i2:
            i1 = max(i2 - 1, 0)
    else:
        i1, i2 = (int(b) for b in bounds)
        if not 0 <= i1 < i2 < n:
            raise EgjDetectionError(f"invalid manual EGJ bounds {bounds}")
    k1, k2 = _opening_interval(diam[i1 : i2 + 1].mean(axis=0))
    x = window.positions
    return EgjRegion(float(x[i1]), float(x[i2]), float(times[k1]), float(times[k2]),
                     i1=i1, i2=i2, k1=k1, k2=k2)


def compute_egjw(pressure, area, x, t, region: EgjRegion) -> float:
    """Trapezoidal ``integral P dA/dt dx dt`` over the EGJ region (Joules)."""
    pressure = np.asarray(pressure, dtype=float)
    area = np.asarray(area, dtype=float)
    if region.i2 >= area.shape[0] or region.k2 >= area.shape[1]:
        raise ValueError("EGJ region lies outside the solved domain")
    sl = (slice(region.i1, region.i2 + 1), slice(region.k1, region.k2 + 1))
    tt = np.asarray(t, dtype=float)[sl[1]]
    xx = np.asarray(x, dtype=float)[sl[0]]
    a = area[sl]
    if tt.size < 2:
        return 0.0
    dadt = np.gradient(a, tt, axis=1)
    integrand = pressure[sl] * dadt
    return float(np.trapezoid(np.trapezoid(integrand, tt, axis=1), xx))


def egjrow_closed_form(theta_hat, fit: TubeLawFit, length, a1=A1, a2=A2) -> float:
    if not theta_hat > 0:
        raise ValueError(f"theta estimate must be positive, got {theta_hat}")
    return length * (fit.k_over_ao * (a2**2 - a1**2) / (2.0 * theta_hat) + fit.po_minus_k * (a2 - a1))


def theta_estimates(theta, region: EgjRegion) -> tuple:
    """Spatial median over EGJ sensors, then value at t1 / median / minimum over [t1, t2]."""
    th = np.median(np.asarray(theta)[region.i1 : region.i2 + 1], axis=0)
    span = th[region.k1 : region.k2 + 1]
    return float(th[region.k1]), float(np.median(span)), float(np.min(span))


def compute_egjrow(theta, fit: TubeLawFit, region: EgjRegion) -> tuple:
    length = region.x2 - region.x1
    return tuple(egjrow_closed_form(h, fit, length, region.a1, region.a2)
                 for h in theta_estimates(theta, region))


def work_metrics(window: AnalysisWindow, state: MechanicsState, fit: TubeLawFit,
                 region: EgjRegion | None = None) -> tuple:
    region = region or locate_egj(window, state)
    egjw = compute_egjw(state.pressure, state.area, window.positions, state.times, region)
    rows = compute_egjrow(state.theta_native, fit, region)
    return WorkMetrics(egjw, *rows), region


def discrete_params(window: AnalysisWindow, state: MechanicsState, fit: TubeLawFit) -> PrimaryParams:
    return PrimaryParams(
        k_over_ao=fit.k_over_ao,
        po_minus_k=fit.po_minus_k,
        p_max=float(np.max(window.pd)),
        t_max=window.duration,
        volume=window.volume,
        theta_max=float(np.max(state.theta_native)),
    )


def metrics_record(params: PrimaryParams, work: WorkMetrics) -> dict:
    """Flat per-window record in the published JSON layout."""
    return {
        "egjw_j": work.egjw,
        "egjrow1_j": work.egjrow1,
        "egjrow2_j": work.egjrow2,
        "egjrow3_j": work.egjrow3,
        "p_max_pa": params.p_max,
        "t_max_s": params.t_max,
        "theta_max": params.theta_max,
        "volume_m3": params.volume,
        "k_over_ao": params.k_over_ao,
        "po_minus_k": params.po_minus_k,
    }
