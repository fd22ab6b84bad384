"""Batch steps shared by the command line and the acceptance runs.

A *cohort directory* (written by :func:`flipvdl.synth.write_cohort`) holds
recordings and labels; a *solved directory* holds one mechanics state per
sample plus ``manifest.json`` with labels, fit and window metadata.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .artifacts import read_dir_manifest, write_dir_manifest
from .calibrate import CalibrationError, TubeLawFit, calibrate_recording, find_plateaus
from .ingest import GRID_SIZE, AnalysisWindow, parse_recording, resample_time, select_window, to_si
from .inverse import read_state, solve_window, write_state
from .metrics import (
    EgjDetectionError,
    PrimaryParams,
    discrete_params,
    locate_egj,
    metrics_record,
    work_metrics,
)
from .neural.losses import normalize_theta
from .vdl import ParamStats, assemble_vdl


def fit_for_recording(rec, fallback: TubeLawFit | None = None, **phys) -> tuple:
    """Calibrate when the recording has at least two volume plateaus, else use ``fallback``."""
    si = to_si(rec)
    if len(find_plateaus(si.bag_volume * 1e6, si.time)) >= 2:
        return calibrate_recording(rec, **phys), "calibrated"
    if fallback is None:
        raise CalibrationError("recording has fewer than 2 volume plateaus and no fit was supplied")
    return fallback, "supplied"


def window_info(window: AnalysisWindow) -> dict:
    return {"t_start": window.t_start, "t_end": window.t_end, "volume_m3": window.volume,
            "length_m": window.length, "duration_s": window.duration}


def window_from_state(state, info: dict, fit: TubeLawFit) -> AnalysisWindow:
    """Rebuild the analysis window that produced a stored state."""
    pd = state.pressure[-1]
    grid_t = np.linspace(info["t_start"], info["t_end"], GRID_SIZE)
    return AnalysisWindow(
        t_start=info["t_start"], t_end=info["t_end"],
        alpha_grid=resample_time(state.area, state.times, grid_t) / fit.area_scale,
        pd_series=np.interp(grid_t, state.times, pd),
        volume=info["volume_m3"], duration=info["duration_s"],
        times=state.times, area=state.area, pd=pd,
        length=info["length_m"], area_scale=fit.area_scale,
    )


def solve_cohort(cohort_dir, out_dir, spacing_cm: float = 1.0, **phys) -> dict:
    cohort_dir, out_dir = Path(cohort_dir), Path(out_dir)
    read_dir_manifest(cohort_dir)
    cohort = json.loads((cohort_dir / "cohort.json").read_text())
    samples = {}
    for sid, entry in sorted(cohort["samples"].items()):
        rec = parse_recording(cohort_dir / entry["files"]["recording"], spacing_cm)
        fit, source = fit_for_recording(rec, TubeLawFit.from_json(entry["fit"]), **phys)
        window = select_window(rec, *entry["window"], fit)
        state = solve_window(window, fit)
        write_state(state, out_dir / sid, {"sample_id": sid})
        samples[sid] = {
            "dir": sid,
            "labels": entry["labels"],
            "subject": entry["subject"],
            "timestamp": entry["timestamp"],
            "fit": fit.to_json(),
            "fit_source": source,
            "window": window_info(window),
            "reliable": state.reliable,
            "clamp_fraction": state.clamp_fraction,
        }
    return write_dir_manifest(out_dir, {"kind": "solved", "seed": cohort.get("seed"), "samples": samples})


def load_solved(solved_dir):
    """Yield ``(sample_id, entry, state, window, fit)`` after verifying hashes."""
    solved_dir = Path(solved_dir)
    manifest = read_dir_manifest(solved_dir)
    for sid, entry in sorted(manifest["samples"].items()):
        state, _ = read_state(solved_dir / entry["dir"])
        fit = TubeLawFit.from_json(entry["fit"])
        yield sid, entry, state, window_from_state(state, entry["window"], fit), fit


def cohort_metrics(solved_dir, egj_bounds=None) -> dict:
    """Primary parameters and work metrics per sample (failures recorded, not raised)."""
    out = {}
    for sid, entry, state, window, fit in load_solved(solved_dir):
        params = discrete_params(window, state, fit)
        rec = {"sample_id": sid, "labels": entry["labels"], "subject": entry["subject"],
               "timestamp": entry["timestamp"], "params": params.to_json()}
        try:
            region = locate_egj(window, state, bounds=egj_bounds)
            work, region = work_metrics(window, state, fit, region)
            rec["metrics"] = metrics_record(params, work)
            rec["egj"] = {"i1": region.i1, "i2": region.i2, "t1": region.t1, "t2": region.t2}
        except EgjDetectionError as exc:
            warnings.warn(f"{sid}: {exc}", stacklevel=2)
            rec["error"] = str(exc)
        out[sid] = rec
    return out


def theta_images(solved_dir) -> tuple:
    ids, images = [], []
    for sid, _, state, _, _ in load_solved(solved_dir):
        ids.append(sid)
        images.append(normalize_theta(state.theta))
    return ids, np.array(images)


def augmented_theta_images(solved_dir, replicas: int, seed: int) -> np.ndarray:
    """Normalised activation images of ``replicas`` perturbed copies of every window.

    Replica ``r`` of the ``i``-th sample draws from the stream keyed by
    ``(seed, i, 100 + r)``; replicas whose re-solve clamps too many cells
    are dropped.
    """
    from .synth import AugmentSpec, augment_window, sample_rng

    spec = AugmentSpec(replicas_per_sample=replicas)
    images = []
    for i, (_, _, _, window, fit) in enumerate(load_solved(solved_dir)):
        for r in range(replicas):
            new_window, new_fit = augment_window(window, fit, sample_rng(seed, i, 100 + r), spec)
            state = solve_window(new_window, new_fit)
            if state.reliable:
                images.append(normalize_theta(state.theta))
    return np.array(images).reshape(-1, GRID_SIZE, GRID_SIZE)


def embed_cohort(vae, solved_dir, metrics: dict, stats: ParamStats | None = None) -> tuple:
    """Landscape vectors for every sample with parameters; fits stats if not given."""
    ids, images = theta_images(solved_dir)
    params = {sid: PrimaryParams(**metrics[sid]["params"]).as_array() for sid in ids}
    if stats is None:
        stats = ParamStats.fit([params[s] for s in ids])
    mu, _ = vae.encode(images)
    vectors = []
    for sid, m in zip(ids, np.asarray(mu, dtype=float)):
        rec = metrics[sid]
        vectors.append(assemble_vdl(
            m, params[sid], stats,
            disease=rec["labels"].get("disease"),
            peristalsis=rec["labels"].get("peristalsis"),
            subject=rec["subject"], timestamp=float(rec["timestamp"]), sample_id=sid,
        ))
    return vectors, stats
