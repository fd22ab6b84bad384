"""Forward flexible-tube simulator, synthetic cohorts and data augmentation.

The forward solver integrates the closed-tube mass and momentum balances
for a prescribed activation field.  Area is stored on the sensor nodes
(half control volumes at both ends) and flow rate on the midpoints, so the
simulated sensor readings are the state itself and the trapezoidal volume
is conserved to round-off.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.interpolate import PchipInterpolator

from .calibrate import TubeLawFit
from .ingest import (
    GRID_SIZE,
    N_SENSORS,
    AnalysisWindow,
    FlipRecording,
    area_to_diameter,
    from_si,
    resample_time,
    select_window,
    write_recording,
)
from .metrics import PrimaryParams

PHENOTYPES = (
    "normal-peristaltic",
    "absent-contractility",
    "tight-egj",
    "spastic",
    "weak-peristaltic",
)
PERISTALTIC = {"normal-peristaltic": 1, "weak-peristaltic": 1, "tight-egj": 1,
               "absent-contractility": 0, "spastic": 0}
DISEASE_GROUP = {
    "normal-peristaltic": "Normal",
    "absent-contractility": "Type I achalasia",
    "tight-egj": "EGJ outflow obstruction",
    "spastic": "Distal esophageal spasm",
    "weak-peristaltic": "Ineffective esophageal motility",
}
# (low, high) draws per phenotype: amplitude, wave speed cm/s, EGJ tone, relaxation peak
PRESETS = {
    "normal-peristaltic": dict(amplitude=(0.55, 0.8), wave_speed=(2.5, 4.0), egj_tone=(0.08, 0.16), relaxation=(1.0, 1.4)),
    "weak-peristaltic": dict(amplitude=(0.2, 0.35), wave_speed=(2.5, 4.0), egj_tone=(0.12, 0.22), relaxation=(1.0, 1.1)),
    "tight-egj": dict(amplitude=(0.5, 0.75), wave_speed=(2.5, 4.0), egj_tone=(0.06, 0.12), relaxation=(1.0, 1.0)),
    "spastic": dict(amplitude=(0.5, 0.8), wave_speed=(2.5, 4.0), egj_tone=(0.1, 0.2), relaxation=(1.0, 1.0)),
    "absent-contractility": dict(amplitude=(0.02, 0.06), wave_speed=(2.5, 4.0), egj_tone=(0.08, 0.2), relaxation=(1.0, 1.0)),
}
PHYSICS_RANGES = dict(k_over_ao=(0.8e7, 2.0e7), po_minus_k=(-3000.0, -1000.0), volume_ml=(40.0, 70.0))
EGJ_SENSORS = 4
SAMPLE_RATE = 10.0


@njit(cache=True)
def _theta_at(coef, breaks, tau, out):
    # piecewise cubic in time, one polynomial per node and interval
    m = breaks.size
    j = np.searchsorted(breaks, tau, side="right") - 1
    j = min(max(j, 0), m - 2)
    dt = min(max(tau - breaks[j], 0.0), breaks[j + 1] - breaks[j])
    for i in range(coef.shape[2]):
        out[i] = ((coef[0, j, i] * dt + coef[1, j, i]) * dt + coef[2, j, i]) * dt + coef[3, j, i]


@njit(cache=True)
def _integrate(coef, breaks, out_tau, alpha, weights, p0, phi, h, cfl, fixed_dtau):
    """Symplectic-Euler sub-stepping between output times.

    Sub-steps are uniform inside each output interval so that the scheme
    stays symplectic; their size follows the current Courant limit.

    Momentum on midpoints first (friction implicit), then mass on nodes.
    ``info`` = (status, steps, max drift, tau, step, courant) with status
    0 ok, 1 fixed step unstable, 2 non-finite or collapsed state.
    """
    n_nodes = alpha.size
    n = n_nodes - 1
    n_out = out_tau.size
    alpha_out = np.empty((n_nodes, n_out))
    p_out = np.empty((n_nodes, n_out))
    q_out = np.empty((n, n_out))
    info = np.zeros(6)
    th = np.empty(n_nodes)
    q = np.zeros(n)
    p = np.empty(n_nodes)
    conv = np.empty(n_nodes)
    mass0 = 0.0
    for i in range(n_nodes):
        mass0 += weights[i] * alpha[i]
    _theta_at(coef, breaks, 0.0, th)
    for i in range(n_nodes):
        alpha_out[i, 0] = alpha[i]
        p_out[i, 0] = alpha[i] / th[i] + p0
    q_out[:, 0] = 0.0
    tau = 0.0
    steps = 0
    drift = 0.0
    for k in range(1, n_out):
        target = out_tau[k]
        t_left = tau
        interval = target - t_left
        n_sub = 1
        sub = 0
        while sub < n_sub:
            tau = t_left + sub * (interval / n_sub)
            _theta_at(coef, breaks, tau, th)
            speed = 0.0
            for j in range(n):
                a_mid = 0.5 * (alpha[j] + alpha[j + 1])
                tmin = min(th[j], th[j + 1])
                c = abs(q[j]) / a_mid + np.sqrt(max(a_mid, 0.0) / tmin)
                if not c <= speed:
                    speed = c
            if fixed_dtau > 0:
                courant = fixed_dtau * speed / h
                if not courant <= 1.0:
                    info[0] = 1
                    info[5] = courant
                    return alpha_out, p_out, q_out, info
                want = fixed_dtau
            else:
                want = cfl * h / speed
            if sub == 0 or interval / n_sub > want:
                # (re)plan the remaining interval with uniform steps
                remaining = target - tau
                k_left = max(1, int(np.ceil(remaining / want - 1e-9)))
                t_left = tau
                interval = remaining
                n_sub = k_left
                sub = 0
            step = interval / n_sub
            for i in range(n_nodes):
                p[i] = alpha[i] / th[i] + p0
            conv[0] = 0.0
            conv[n] = 0.0
            for i in range(1, n):
                qn = 0.5 * (q[i] + q[i - 1])
                conv[i] = qn * qn / alpha[i]
            for j in range(n):
                a_mid = 0.5 * (alpha[j] + alpha[j + 1])
                rhs = -(conv[j + 1] - conv[j]) / h - a_mid * (p[j + 1] - p[j]) / h
                q[j] = (q[j] + step * rhs) / (1.0 + step * phi / a_mid)
            ok = True
            total = 0.0
            for i in range(n_nodes):
                left = q[i - 1] if i > 0 else 0.0
                right = q[i] if i < n else 0.0
                alpha[i] -= step * (right - left) / weights[i]
                if not alpha[i] > 0.0 or not np.isfinite(alpha[i]):
                    ok = False
                total += weights[i] * alpha[i]
            sub += 1
            tau = t_left + sub * step
            steps += 1
            d = abs(total - mass0) / mass0
            if d > drift:
                drift = d
            if not ok:
                info[0] = 2
                info[3] = tau
                info[4] = step
                return alpha_out, p_out, q_out, info
        tau = target
        _theta_at(coef, breaks, target, th)
        for i in range(n_nodes):
            alpha_out[i, k] = alpha[i]
            p_out[i, k] = alpha[i] / th[i] + p0
        for j in range(n):
            q_out[j, k] = q[j]
    info[1] = steps
    info[2] = drift
    return alpha_out, p_out, q_out, info


class ForwardSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Phenotype:
    name: str
    contraction_amplitude: float = 0.6
    wave_speed: float = 3.0
    egj_tone: float = 0.2
    relaxation_peak: float = 1.0
    band_width: float = 0.12
    egj_sensors: int = EGJ_SENSORS

    def __post_init__(self):
        if self.name not in PHENOTYPES:
            raise ValueError(f"unknown phenotype {self.name!r}")
        if not 0 < self.contraction_amplitude <= 1:
            raise ValueError("contraction amplitude must lie in (0, 1]")
        if not 0 < self.egj_tone <= 1:
            raise ValueError("EGJ tone must lie in (0, 1]")
        if self.relaxation_peak < 1:
            raise ValueError("relaxation peak must be >= 1")
        if self.wave_speed <= 0:
            raise ValueError("wave speed must be positive")

    @property
    def peristaltic(self) -> int:
        return PERISTALTIC[self.name]

    def duration(self, length_m: float = 0.15) -> float:
        """Time for the band to cross the body, in seconds."""
        return round(100.0 * length_m / self.wave_speed, 6)


def draw_phenotype(name: str, rng) -> Phenotype:
    pr = PRESETS[name]
    return Phenotype(
        name=name,
        contraction_amplitude=float(rng.uniform(*pr["amplitude"])),
        wave_speed=float(rng.uniform(*pr["wave_speed"])),
        egj_tone=float(rng.uniform(*pr["egj_tone"])),
        relaxation_peak=float(rng.uniform(*pr["relaxation"])),
        band_width=float(rng.uniform(0.1, 0.14)),
    )


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def theta_field(ph: Phenotype, n_space: int = N_SENSORS, n_time: int = GRID_SIZE) -> np.ndarray:
    """Prescribed activation on (sensor, normalised time) nodes."""
    chi = np.linspace(0.0, 1.0, n_space)[:, None]
    s = np.linspace(0.0, 1.0, n_time)[None, :]
    n_egj = ph.egj_sensors
    egj_start = chi[n_space - n_egj, 0]
    a, w = ph.contraction_amplitude, ph.band_width
    theta = np.ones((n_space, n_time))

    if ph.name == "spastic":
        pulse = np.exp(-((s - 0.5) ** 2) / (2 * 0.12**2))
        shape = 0.85 + 0.15 * np.cos(np.pi * chi / egj_start)
        body = 1.0 - a * pulse * shape
    elif ph.name == "absent-contractility":
        ripple = np.sin(2 * np.pi * (chi / egj_start)) * np.sin(np.pi * s)
        body = 1.0 - a * (0.5 + 0.5 * ripple)
    else:
        start = -2.5 * w
        center = start + (egj_start - start) * s
        body = 1.0 - a * np.exp(-((chi - center) ** 2) / (2 * w**2))
    theta[: n_space - n_egj] = np.broadcast_to(body, theta.shape)[: n_space - n_egj]

    if ph.name in ("normal-peristaltic", "weak-peristaltic", "spastic"):
        opening = _smoothstep((s - 0.75) / 0.22)
        if ph.name == "normal-peristaltic":
            level = ph.relaxation_peak
        elif ph.name == "weak-peristaltic":
            level = 0.5 * (1.0 + ph.egj_tone) * ph.relaxation_peak
        else:
            level = 0.5 * (1.0 + ph.egj_tone)
        egj = ph.egj_tone + (level - ph.egj_tone) * opening
    else:
        egj = np.full_like(s, ph.egj_tone)
    theta[n_space - n_egj :] = egj
    return theta


@dataclass
class ForwardResult:
    times: np.ndarray
    alpha: np.ndarray
    pressure: np.ndarray
    q: np.ndarray
    recording: FlipRecording
    fit: TubeLawFit
    volume: float
    max_step_drift: float = 0.0
    n_steps: int = 0
    window: AnalysisWindow | None = None

    @property
    def area(self) -> np.ndarray:
        return self.alpha * self.fit.area_scale


def _equilibrium(theta0, mass, weights):
    # uniform pressure, alpha = theta * (p - p0)
    head = mass / float(np.sum(weights * theta0))
    return theta0 * head


def forward_solve(theta, fit: TubeLawFit, volume: float, duration: float, *,
                  theta_times=None, sample_rate: float = SAMPLE_RATE, n_samples: int | None = None,
                  cfl: float = 0.5, dtau: float | None = None, alpha0=None,
                  make_window: bool = True) -> ForwardResult:
    """Integrate the closed tube under a prescribed activation field.

    ``theta`` has shape (16, n_cols) with columns at ``theta_times``
    (default: evenly spaced over ``[0, duration]``) and is interpolated in
    time with monotone cubics; kinks in the forcing would ring the
    (nearly undamped) pressure waves.  The state starts in static equilibrium with the
    first column unless ``alpha0`` is given.  Without ``dtau`` the sub-step
    is chosen from the characteristic speed ``|u| + sqrt(alpha/theta)`` so
    that the Courant number stays at ``cfl``; a fixed ``dtau`` that breaks
    the stability limit raises :class:`ForwardSolverError`.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("activation must be strictly positive")
    n_nodes = theta.shape[0]
    n = n_nodes - 1
    h = 1.0 / n
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta_times is None:
        theta_times = np.linspace(0.0, duration, theta.shape[1])
    if theta.shape[1] == 1:
        theta = np.repeat(theta, 2, axis=1)
        theta_times = [0.0, duration]
    t_scale = fit.time_scale
    theta_tau = np.asarray(theta_times, dtype=float) / t_scale

    if n_samples is None:
        m = max(1, math.ceil(duration * sample_rate / (GRID_SIZE - 1)))
        n_samples = (GRID_SIZE - 1) * m + 1
    times = np.linspace(0.0, duration, n_samples)
    out_tau = times / t_scale

    weights = np.full(n_nodes, h)
    weights[[0, -1]] = 0.5 * h
    mass = volume / (fit.length * fit.area_scale)
    p0 = fit.po_minus_k / fit.pressure_scale
    phi = fit.gamma

    spline = PchipInterpolator(theta_tau, theta, axis=1, extrapolate=True)
    coef = np.ascontiguousarray(spline.c)
    if alpha0 is None:
        alpha = _equilibrium(theta[:, 0].copy(), mass, weights)
    else:
        alpha = np.array(alpha0, dtype=float)
    alpha_out, p_out, q_out, info = _integrate(
        coef, np.ascontiguousarray(spline.x), out_tau, alpha, weights,
        p0, phi, h, cfl, -1.0 if dtau is None else float(dtau),
    )
    status, steps, drift, tau_fail, step_fail, courant = info
    if status == 1:
        raise ForwardSolverError(
            f"step size dtau={dtau:g} violates the stability limit (Courant number {courant:.3g} > 1)"
        )
    if status == 2:
        raise ForwardSolverError(
            f"forward solve diverged at tau={tau_fail:.4g} with step size {step_fail:.3g}"
        )
    steps = int(steps)

    pressure = p_out * fit.pressure_scale
    area = alpha_out * fit.area_scale
    rec = FlipRecording(
        time=times,
        diameters=area_to_diameter(area),
        distal_pressure=pressure[-1].copy(),
        bag_volume=np.full(n_samples, float(volume)),
        sensor_spacing=fit.length / (n_nodes - 1),
        units="si",
    )
    result = ForwardResult(times, alpha_out, pressure, q_out, rec, fit, float(volume), drift, steps)
    if make_window:
        result.window = select_window(rec, 0.0, duration, fit)
    return result


def true_fit(k_over_ao: float, po_minus_k: float, length: float = 0.15) -> TubeLawFit:
    return TubeLawFit(k_over_ao=k_over_ao, po_minus_k=po_minus_k, r_squared=1.0, length=length)


@dataclass
class Session:
    """Multi-fill synthetic recording plus the contraction window of every fill."""

    recording: FlipRecording
    windows: list
    fit: TubeLawFit
    volumes: list
    results: list = field(default_factory=list)


def simulate_session(ph: Phenotype, fit: TubeLawFit, volumes_ml, rest_s: float = 1.5,
                     ramp_s: float = 1.0, sample_rate: float = SAMPLE_RATE) -> Session:
    """Fills of constant volume, each: rest, ramp in, contraction, ramp out, rest.

    The activation is exactly 1 during the rest phases, which is where the
    relaxed tube law holds.
    """
    duration = ph.duration(fit.length)
    m = max(1, math.ceil(duration * sample_rate / (GRID_SIZE - 1)))
    dt = duration / ((GRID_SIZE - 1) * m)
    n_rest = max(2, round(rest_s / dt))
    n_ramp = max(1, round(ramp_s / dt))
    field_w = theta_field(ph)
    t_win0 = (n_rest + n_ramp) * dt
    total = (2 * n_rest + 2 * n_ramp) * dt + duration
    win_times = t_win0 + np.linspace(0.0, duration, GRID_SIZE)
    ones = np.ones((field_w.shape[0], 1))
    cols = [ones, ones, field_w, ones, ones]
    col_t = [np.array([0.0]), np.array([n_rest * dt]), win_times,
             np.array([t_win0 + duration + n_ramp * dt]), np.array([total])]
    theta = np.concatenate(cols, axis=1)
    theta_t = np.concatenate(col_t)
    n_samples = round(total / dt) + 1

    parts, windows, results = [], [], []
    offset = 0.0
    for v in volumes_ml:
        res = forward_solve(theta, fit, v * 1e-6, total, theta_times=theta_t,
                            n_samples=n_samples, make_window=False)
        rec = res.recording
        parts.append(replace(rec, time=rec.time + offset))
        windows.append((offset + t_win0, offset + t_win0 + duration))
        results.append(res)
        offset += total + dt
    rec = FlipRecording(
        time=np.concatenate([p.time for p in parts]),
        diameters=np.concatenate([p.diameters for p in parts], axis=1),
        distal_pressure=np.concatenate([p.distal_pressure for p in parts]),
        bag_volume=np.concatenate([p.bag_volume for p in parts]),
        sensor_spacing=parts[0].sensor_spacing,
        units="si",
    )
    return Session(rec, windows, fit, list(volumes_ml), results)


@dataclass
class CohortSample:
    sample_id: str
    phenotype: Phenotype
    fit: TubeLawFit
    theta_field: np.ndarray
    recording: FlipRecording
    window: AnalysisWindow
    params: PrimaryParams
    labels: dict
    subject: str
    timestamp: float = 0.0
    window_bounds: tuple = (0.0, 0.0)
    augmented: bool = False
    source: str = ""


def sample_rng(seed: int, index: int, stream: int = 0):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


def _entries(spec):
    out = []
    for item in spec:
        if isinstance(item, dict):
            ph, count = item["phenotype"], int(item.get("count", 1))
            visits = int(item.get("visits", 1))
        else:
            ph, count = item[0], int(item[1])
            visits = 1
        if count < 1:
            raise ValueError("phenotype counts must be >= 1")
        if isinstance(ph, str) and ph not in PHENOTYPES:
            raise ValueError(f"unknown phenotype {ph!r}")
        out.append((ph, count, visits))
    return out


def generate_cohort(spec, seed: int, fills_ml=None, sample_rate: float = SAMPLE_RATE) -> list:
    """Synthetic labelled windows.

    ``spec`` is a list of ``(phenotype, count)`` pairs or dicts with
    ``phenotype``, ``count`` and optional ``visits``; a phenotype is a
    name (parameters drawn from its preset ranges) or a :class:`Phenotype`.
    Each sample's random stream is keyed by ``(seed, index)``.  With
    ``fills_ml`` every sample is a multi-fill session whose last fill holds
    the analysis window; otherwise the recording is the window alone.
    """
    entries = _entries(spec)
    if not entries:
        raise ValueError("cohort spec is empty")
    samples = []
    index = 0
    subject_no = 0
    for ph_spec, count, visits in entries:
        for _ in range(count):
            subject_no += 1
            srng = sample_rng(seed, subject_no, stream=1)
            k = float(srng.uniform(*PHYSICS_RANGES["k_over_ao"]))
            pk = float(srng.uniform(*PHYSICS_RANGES["po_minus_k"]))
            vol_ml = float(srng.uniform(*PHYSICS_RANGES["volume_ml"]))
            fit = true_fit(k, pk)
            for visit in range(visits):
                rng = sample_rng(seed, index)
                ph = draw_phenotype(ph_spec, rng) if isinstance(ph_spec, str) else ph_spec
                samples.append(_make_sample(ph, fit, vol_ml, index, subject_no, visit, fills_ml, sample_rate))
                index += 1
    return samples


def _make_sample(ph, fit, vol_ml, index, subject_no, visit, fills_ml, sample_rate):
    field_w = theta_field(ph)
    if fills_ml:
        session = simulate_session(ph, fit, list(fills_ml) + [vol_ml], sample_rate=sample_rate)
        rec = session.recording
        bounds = session.windows[-1]
    else:
        res = forward_solve(field_w, fit, vol_ml * 1e-6, ph.duration(fit.length),
                            sample_rate=sample_rate, make_window=False)
        rec = res.recording
        bounds = (0.0, float(rec.time[-1]))
    window = select_window(rec, *bounds, fit)
    params = PrimaryParams(
        k_over_ao=fit.k_over_ao,
        po_minus_k=fit.po_minus_k,
        p_max=float(np.max(window.pd)),
        t_max=window.duration,
        volume=window.volume,
        theta_max=float(np.max(field_w)),
    )
    labels = {"phenotype": ph.name, "disease": DISEASE_GROUP[ph.name], "peristalsis": ph.peristaltic}
    return CohortSample(
        sample_id=f"s{index:05d}",
        phenotype=ph,
        fit=fit,
        theta_field=field_w,
        recording=from_si(rec),
        window=window,
        params=params,
        labels=labels,
        subject=f"subj{subject_no:04d}",
        timestamp=float(visit),
        window_bounds=tuple(float(b) for b in bounds),
    )


# -- augmentation ------------------------------------------------------------

SCALAR_SIGMA = 0.05
NORMAL_CLIP = 2.0
DEFAULT_REPLICAS = 31


@dataclass(frozen=True)
class AugmentSpec:
    scalar_sigma: float = SCALAR_SIGMA
    normal_clip: float = NORMAL_CLIP
    field_transforms: tuple = (
        {"kind": "grid-distort", "p": 0.9, "num_steps": 4, "limit": 0.2},
        {"kind": "elastic", "p": 0.8, "alpha": 5.0, "sigma": 3.0},
        {"kind": "temporal-blur", "p": 0.7, "width": (3, 6)},
    )
    replicas_per_sample: int = DEFAULT_REPLICAS

    def __post_init__(self):
        if self.normal_clip <= 0:
            raise ValueError("normal clip must be positive")
        if self.replicas_per_sample < 0:
            raise ValueError("replica count must be >= 0")


def truncated_normal(rng, size=None, clip: float = NORMAL_CLIP):
    """Standard normal draws, redrawn until ``|N| < clip``."""
    x = np.asarray(rng.standard_normal(size), dtype=float)
    bad = np.abs(x) >= clip
    while np.any(bad):
        x[bad] = rng.standard_normal(int(np.count_nonzero(bad)))
        bad = np.abs(x) >= clip
    return x if size is not None else float(x)


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def scalar_factors(seed=None, normals=None, sigma: float = SCALAR_SIGMA, clip: float = NORMAL_CLIP) -> dict:
    """Independent ``f = 1 + sigma N`` for stiffness, offset, distal pressure and duration."""
    if normals is None:
        normals = truncated_normal(_as_rng(seed), 4, clip)
    normals = np.asarray(normals, dtype=float)
    f = 1.0 + sigma * normals
    return dict(zip(("k_over_ao", "po_minus_k", "pd", "t_max"), (float(v) for v in f)))


def augment_scalars(params: PrimaryParams, seed=None, normals=None, sigma: float = SCALAR_SIGMA,
                    clip: float = NORMAL_CLIP) -> PrimaryParams:
    """Scale K/A_o, P_o-K, distal pressure and duration by random factors.

    ``normals`` (length 4) bypasses the random draw, e.g. zeros for the
    identity.
    """
    f = scalar_factors(seed, normals, sigma, clip)
    return replace(
        params,
        k_over_ao=params.k_over_ao * f["k_over_ao"],
        po_minus_k=params.po_minus_k * f["po_minus_k"],
        p_max=params.p_max * f["pd"],
        t_max=params.t_max * f["t_max"],
    )


def _warp(img, dy, dx):
    yy, xx = np.meshgrid(np.arange(img.shape[0]), np.arange(img.shape[1]), indexing="ij")
    return ndimage.map_coordinates(img, [yy + dy, xx + dx], order=1, mode="nearest")


def grid_distort(img, rng, num_steps: int = 4, limit: float = 0.2):
    """Bilinearly interpolated random displacements of a coarse control lattice."""
    h, w = img.shape
    ctrl = rng.uniform(-limit, limit, size=(2, num_steps, num_steps))
    scale = np.array([h / num_steps, w / num_steps])[:, None, None]
    coarse = ctrl * scale
    zoom = (h / num_steps, w / num_steps)
    dy = ndimage.zoom(coarse[0], zoom, order=1, mode="nearest", grid_mode=True)
    dx = ndimage.zoom(coarse[1], zoom, order=1, mode="nearest", grid_mode=True)
    return _warp(img, dy[:h, :w], dx[:h, :w])


def elastic(img, rng, alpha: float = 5.0, sigma: float = 3.0):
    """Gaussian-smoothed random displacement field scaled to ``alpha`` pixels."""
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, img.shape), sigma, mode="nearest")
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, img.shape), sigma, mode="nearest")
    norm = max(np.max(np.abs(dy)), np.max(np.abs(dx)), 1e-12)
    return _warp(img, alpha * dy / norm, alpha * dx / norm)


def temporal_blur(img, width: int):
    """Box filter of ``width`` samples along the time (second) axis."""
    if width <= 1:
        return np.array(img, dtype=float)
    return ndimage.uniform_filter1d(np.asarray(img, dtype=float), size=int(width), axis=1, mode="nearest")


def augment_field(alpha_grid, transforms, seed) -> np.ndarray:
    """Apply grid distortion, elastic warp and temporal blur with their probabilities."""
    rng = _as_rng(seed)
    img = np.array(alpha_grid, dtype=float)
    if np.any(img <= 0):
        raise ValueError("field must be strictly positive")
    floor = 1e-6 * img.mean()
    order = {"grid-distort": 0, "elastic": 1, "temporal-blur": 2}
    for tr in sorted(transforms, key=lambda t: order[t["kind"]]):
        if rng.uniform() >= tr.get("p", 1.0):
            continue
        if tr["kind"] == "grid-distort":
            img = grid_distort(img, rng, tr.get("num_steps", 4), tr.get("limit", 0.2))
        elif tr["kind"] == "elastic":
            img = elastic(img, rng, tr.get("alpha", 5.0), tr.get("sigma", 3.0))
        else:
            width = tr.get("width", 3)
            if isinstance(width, (tuple, list)):
                width = int(rng.integers(width[0], width[1] + 1))
            img = temporal_blur(img, width)
    return np.maximum(img, floor)


def augment_window(window: AnalysisWindow, fit: TubeLawFit, rng, spec: AugmentSpec = AugmentSpec()):
    """Perturbed copy of a window and its fit, ready to be re-solved."""
    f = scalar_factors(rng, sigma=spec.scalar_sigma, clip=spec.normal_clip)
    new_fit = replace(fit, k_over_ao=fit.k_over_ao * f["k_over_ao"],
                      po_minus_k=fit.po_minus_k * f["po_minus_k"], support_points=())
    area = augment_field(window.area, spec.field_transforms, rng)
    times = window.t_start + (window.times - window.t_start) * f["t_max"]
    t_end = float(times[-1])
    pd = window.pd * f["pd"]
    grid_t = np.linspace(window.t_start, t_end, GRID_SIZE)
    alpha_grid = resample_time(area, times, grid_t) / new_fit.area_scale
    new = AnalysisWindow(
        t_start=window.t_start,
        t_end=t_end,
        alpha_grid=alpha_grid,
        pd_series=np.interp(grid_t, times, pd),
        volume=window.volume,
        duration=t_end - window.t_start,
        times=times,
        area=area,
        pd=pd,
        length=window.length,
        area_scale=new_fit.area_scale,
        meta={"augmented": True, "factors": f},
    )
    return new, new_fit


def augment_sample(sample: CohortSample, seed, spec: AugmentSpec = AugmentSpec()) -> list:
    """Replicas of one sample, each re-solved for activation.

    Returns ``(window, fit, state)`` triples; replica ``r`` draws from the
    stream keyed by ``(seed, sample index, r)``.
    """
    from .inverse import solve_window

    index = int(sample.sample_id[1:])
    out = []
    for r in range(spec.replicas_per_sample):
        rng = sample_rng(seed, index, stream=100 + r)
        window, fit = augment_window(sample.window, sample.fit, rng, spec)
        out.append((window, fit, solve_window(window, fit)))
    return out


def write_cohort(samples, directory, seed: int, spec=None) -> dict:
    """Recording CSV (clinical units), activation grid CSV and a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for s in samples:
        rec_name = f"{s.sample_id}_recording.csv"
        theta_name = f"{s.sample_id}_theta.csv"
        write_recording(s.recording, directory / rec_name)
        np.savetxt(directory / theta_name, s.theta_field, delimiter=",", fmt="%.17g")
        entries[s.sample_id] = {
            "files": {"recording": rec_name, "theta": theta_name},
            "labels": s.labels,
            "subject": s.subject,
            "timestamp": s.timestamp,
            "window": list(s.window_bounds),
            "phenotype": asdict(s.phenotype),
            "fit": s.fit.to_json(),
            "params": s.params.to_json(),
        }
    manifest = {"seed": int(seed), "n_samples": len(entries), "samples": entries}
    if spec is not None:
        manifest["spec"] = spec
    (directory / "cohort.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
