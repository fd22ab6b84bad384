"""Tube-law calibration from relaxed-state pressure/area pairs.

With the wall relaxed the tube law reduces to a straight line,
``P = (K/A_o) A_r + (P_o - K)``, so stiffness and offset follow from a
least-squares fit over the pressure minima of several bag fills.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import FlipRecording, reference_area, to_si

RHO = 1000.0
MU = 1.0e-3
WAVE_SPEED = 0.03
MIN_PLATEAU_S = 1.0
PLATEAU_TOL_ML = 0.5


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationPoint:
    time: float | None
    area: float
    pressure: float


@dataclass(frozen=True)
class TubeLawFit:
    """Linear tube law ``P = k_over_ao * A / theta + po_minus_k`` plus scales.

    All values are SI.  ``length`` is the measured segment length and is
    needed for the friction parameter.
    """

    k_over_ao: float
    po_minus_k: float
    r_squared: float
    support_points: tuple = ()
    length: float = 0.15
    rho: float = RHO
    mu: float = MU
    c: float = WAVE_SPEED
    nonphysical: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.k_over_ao > 0:
            # negative slopes are kept for inspection but cannot scale areas
            if not self.nonphysical:
                raise CalibrationError(f"k_over_ao must be positive, got {self.k_over_ao}")

    @property
    def pressure_scale(self) -> float:
        return self.rho * self.c**2

    @property
    def area_scale(self) -> float:
        return self.pressure_scale / abs(self.k_over_ao)

    @property
    def gamma(self) -> float:
        return 8 * np.pi * self.mu * self.length / (self.rho**2 * self.c**3) * self.k_over_ao

    @property
    def time_scale(self) -> float:
        return self.length / self.c

    @property
    def fit_id(self) -> str:
        payload = json.dumps(self.to_json(include_id=False), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def pressure(self, area, theta=1.0):
        return self.k_over_ao * np.asarray(area) / theta + self.po_minus_k

    def to_json(self, include_id: bool = True) -> dict:
        out = {
            "k_over_ao_pa_per_m2": self.k_over_ao,
            "po_minus_k_pa": self.po_minus_k,
            "r2": self.r_squared,
            "c_m_per_s": self.c,
            "rho": self.rho,
            "mu": self.mu,
            "gamma": self.gamma,
            "length_m": self.length,
            "nonphysical": self.nonphysical,
            "support_points": [asdict(p) for p in self.support_points],
        }
        if include_id:
            out["fit_id"] = self.fit_id
        return out

    @classmethod
    def from_json(cls, data: dict) -> "TubeLawFit":
        return cls(
            k_over_ao=float(data["k_over_ao_pa_per_m2"]),
            po_minus_k=float(data["po_minus_k_pa"]),
            r_squared=float(data.get("r2", 1.0)),
            support_points=tuple(CalibrationPoint(**p) for p in data.get("support_points", [])),
            length=float(data.get("length_m", 0.15)),
            rho=float(data.get("rho", RHO)),
            mu=float(data.get("mu", MU)),
            c=float(data.get("c_m_per_s", WAVE_SPEED)),
            nonphysical=bool(data.get("nonphysical", False)),
        )


def find_plateaus(volume_ml, time, tol_ml=PLATEAU_TOL_ML, min_duration=MIN_PLATEAU_S):
    """Return ``(start, stop)`` index pairs of constant-volume runs."""
    volume_ml = np.asarray(volume_ml, dtype=float)
    breaks = np.flatnonzero(np.abs(np.diff(volume_ml)) > tol_ml) + 1
    edges = np.concatenate([[0], breaks, [volume_ml.size]])
    runs = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a >= 2 and time[b - 1] - time[a] >= min_duration:
            runs.append((int(a), int(b)))
    return runs


def find_pressure_minima(rec: FlipRecording, min_duration=MIN_PLATEAU_S) -> list:
    """Lowest distal pressure of every bag-volume plateau, with its ``A_r``.

    Pressures are returned in Pa, areas in m^2.
    """
    si = to_si(rec)
    runs = find_plateaus(si.bag_volume * 1e6, si.time, min_duration=min_duration)
    if len(runs) < 2:
        raise CalibrationError(
            f"calibration needs at least 2 volume plateaus, found {len(runs)}"
        )
    points = []
    for a, b in runs:
        k = a + int(np.argmin(si.distal_pressure[a:b]))
        a_r = reference_area(float(np.mean(si.bag_volume[a:b])), si.length)
        points.append(CalibrationPoint(float(si.time[k]), a_r, float(si.distal_pressure[k])))
    return points


def fit_tube_law(points, length=0.15, rho=RHO, mu=MU, c=WAVE_SPEED) -> TubeLawFit:
    """Ordinary least squares of pressure on reference area."""
    pts = [p if isinstance(p, CalibrationPoint) else CalibrationPoint(None, *p) for p in points]
    if len(pts) < 2:
        raise CalibrationError("need at least two calibration points")
    x = np.array([p.area for p in pts], dtype=float)
    y = np.array([p.pressure for p in pts], dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if np.ptp(x) <= 1e-12 * abs(xm):
        raise CalibrationError("all reference areas are identical; the fit is rank deficient")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    sst = np.sum((y - ym) ** 2)
    r2 = 1.0 if sst == 0 else float(np.clip(1.0 - np.sum(resid**2) / sst, 0.0, 1.0))
    nonphysical = not slope > 0
    if nonphysical:
        warnings.warn(f"non-physical (non-positive) stiffness slope {slope:.4g}", stacklevel=2)
    return TubeLawFit(
        k_over_ao=float(slope),
        po_minus_k=float(intercept),
        r_squared=r2,
        support_points=tuple(pts),
        length=length,
        rho=rho,
        mu=mu,
        c=c,
        nonphysical=nonphysical,
    )


def calibrate_recording(rec: FlipRecording, **kwargs) -> TubeLawFit:
    si = to_si(rec)
    return fit_tube_law(find_pressure_minima(si), length=si.length, **kwargs)
