"""Virtual disease landscape: 30-d vectors, reductions, distances, traversal.

A landscape vector is the 24 latent means of a window's activation image
followed by its 6 primary parameters, min-max scaled with statistics
persisted from the training cohort.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .metrics import PrimaryParams

DISEASE_GROUPS = (
    "Normal",
    "Type I achalasia",
    "Type II achalasia",
    "Type III achalasia",
    "EGJ outflow obstruction",
    "Hypercontractility",
    "Distal esophageal spasm",
    "Ineffective esophageal motility",
    "Absent contractility",
    "Eosinophilic esophagitis",
    "Gastroesophageal reflux disease",
    "Scleroderma",
    "Inconclusive",
)
N_LATENT = 24
N_PARAMS = 6
N_COORDS = N_LATENT + N_PARAMS


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class ParamStats:
    """Min/max of the primary parameters over the training cohort."""

    lo: tuple
    hi: tuple

    @classmethod
    def fit(cls, params) -> "ParamStats":
        arr = np.array([p.as_array() if isinstance(p, PrimaryParams) else p for p in params], dtype=float)
        return cls(tuple(arr.min(axis=0).tolist()), tuple(arr.max(axis=0).tolist()))

    @property
    def stats_id(self) -> str:
        payload = json.dumps({"lo": self.lo, "hi": self.hi}).encode()
        return hashlib.sha256(payload).hexdigest()[:12]

    def normalize(self, values) -> np.ndarray:
        v = values.as_array() if isinstance(values, PrimaryParams) else np.asarray(values, dtype=float)
        lo, hi = np.array(self.lo), np.array(self.hi)
        span = np.where(hi > lo, hi - lo, 1.0)
        return (v - lo) / span

    def to_json(self) -> dict:
        return {"names": PrimaryParams.names(), "min": list(self.lo), "max": list(self.hi), "stats_id": self.stats_id}

    @classmethod
    def from_json(cls, d) -> "ParamStats":
        return cls(tuple(float(x) for x in d["min"]), tuple(float(x) for x in d["max"]))


@dataclass
class VdlVector:
    coords: np.ndarray
    disease: str | None = None
    peristalsis: int | None = None
    subject: str = ""
    timestamp: float = 0.0
    sample_id: str = ""
    stats_id: str = ""

    @property
    def latent(self) -> np.ndarray:
        return self.coords[:N_LATENT]


def assemble_vdl(latent_mean, params, stats: ParamStats | None, **labels) -> VdlVector:
    """Concatenate the latent mean with the normalised primary parameters."""
    if stats is None:
        raise StatsError("parameter normalisation statistics are required")
    mu = np.asarray(latent_mean, dtype=float).ravel()
    if mu.size != N_LATENT:
        raise ValueError(f"latent mean must have {N_LATENT} entries, got {mu.size}")
    coords = np.concatenate([mu, stats.normalize(params)])
    return VdlVector(coords, stats_id=stats.stats_id, **labels)


VDL_COLUMNS = [f"z{i:02d}" for i in range(N_LATENT)] + [f"n_{n}" for n in PrimaryParams.names()]
LABEL_COLUMNS = ["sample_id", "subject", "timestamp", "disease", "peristalsis", "stats_id"]


def write_vdl(vectors, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS + VDL_COLUMNS)
        for v in vectors:
            w.writerow([v.sample_id, v.subject, repr(float(v.timestamp)), v.disease or "",
                        "" if v.peristalsis is None else int(v.peristalsis), v.stats_id]
                       + [repr(float(c)) for c in v.coords])


def read_vdl(path) -> list:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(VdlVector(
                coords=np.array([float(row[c]) for c in VDL_COLUMNS]),
                disease=row["disease"] or None,
                peristalsis=int(row["peristalsis"]) if row["peristalsis"] != "" else None,
                subject=row["subject"],
                timestamp=float(row["timestamp"]),
                sample_id=row["sample_id"],
                stats_id=row["stats_id"],
            ))
    return out


def as_matrix(vectors) -> np.ndarray:
    return np.array([v.coords for v in vectors], dtype=float)


# -- reductions ---------------------------------------------------------------

@dataclass
class ReducedSpace:
    method: str
    projection: np.ndarray  # (d, k)
    mean: np.ndarray
    explained: np.ndarray
    classes: list = field(default_factory=list)
    class_means: np.ndarray | None = None

    def transform(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.mean) @ self.projection

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "projection": self.projection.tolist(),
            "mean": self.mean.tolist(),
            "explained": self.explained.tolist(),
            "classes": list(self.classes),
            "class_means": None if self.class_means is None else self.class_means.tolist(),
        }

    @classmethod
    def from_json(cls, d) -> "ReducedSpace":
        cm = d.get("class_means")
        return cls(d["method"], np.array(d["projection"]), np.array(d["mean"]), np.array(d["explained"]),
                   list(d.get("classes", [])), None if cm is None else np.array(cm))


def _fix_signs(vectors):
    # largest-magnitude entry of every column made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_reduce(x, n_components: int = 3) -> tuple:
    """Top principal directions via SVD of the centred data.

    Returns ``(space, projected)``; ``space.explained`` holds the variance
    ratios of the kept components.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 4:
        raise ValueError("PCA needs at least 4 samples")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s**2
    total = var.sum()
    tol = max(x.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    k = n_components
    if rank < n_components:
        warnings.warn(f"data have rank {rank}; keeping {rank} components", stacklevel=2)
        k = max(rank, 1)
    comps = _fix_signs(vt[:k].T)
    ratios = var[:k] / total if total > 0 else np.zeros(k)
    space = ReducedSpace("pca", comps, mean, ratios)
    return space, space.transform(x)


def scatter_matrices(x, labels) -> tuple:
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()), key=str)
    mean = x.mean(axis=0)
    d = x.shape[1]
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    means = []
    for c in classes:
        xc = x[labels == c]
        mc = xc.mean(axis=0)
        means.append(mc)
        dev = xc - mc
        sw += dev.T @ dev
        diff = (mc - mean)[:, None]
        sb += xc.shape[0] * diff @ diff.T
    return sw, sb, classes, np.array(means)


def fisher_criterion(projection, sw, sb) -> float:
    """``trace((W' Sw W)^-1 W' Sb W)``, invariant to the basis of span(W)."""
    w = np.asarray(projection, dtype=float)
    a = w.T @ sw @ w
    b = w.T @ sb @ w
    return float(np.trace(np.linalg.solve(a, b)))


def lda_reduce(x, labels, n_components: int = 3, reg: float = 1e-6) -> tuple:
    """Discriminant directions from ``Sb v = lambda (Sw + reg * tr(Sw)/d I) v``."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    sw, sb, classes, means = scatter_matrices(x, labels)
    if len(classes) < 2:
        raise ValueError("LDA needs at least two classes")
    d = x.shape[1]
    lam = reg * np.trace(sw) / d
    evals, evecs = scipy.linalg.eigh(sb, sw + lam * np.eye(d))
    order = np.argsort(evals)[::-1]
    k = min(n_components, d)
    if len(classes) - 1 < k:
        warnings.warn(
            f"{len(classes)} classes give at most {len(classes) - 1} discriminant directions; "
            "remaining components carry no between-class variance",
            stacklevel=2,
        )
    w = evecs[:, order[:k]]
    w = _fix_signs(w / np.linalg.norm(w, axis=0))
    ev = evals[order]
    explained = ev[:k] / ev.sum() if ev.sum() > 0 else np.zeros(k)
    space = ReducedSpace("lda", w, x.mean(axis=0), explained, [str(c) for c in classes], means)
    return space, space.transform(x)


# -- distances -----------------------------------------------------------------

def distance_matrix(points, labels, groups=None) -> tuple:
    """Entry (i, j): median distance of group j's points to group i's centroid,
    each row scaled to sum to 100.

    Returns ``(matrix, groups)``.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    if groups is None:
        groups = sorted(set(labels.tolist()), key=str)
    groups = list(groups)
    sets = [points[labels == g] for g in groups]
    for g, s in zip(groups, sets):
        if s.shape[0] == 0:
            raise ValueError(f"group {g!r} has no points")
    cents = [s.mean(axis=0) for s in sets]
    raw = np.array([[np.median(np.linalg.norm(s - c, axis=1)) for s in sets] for c in cents])
    sums = raw.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("all points coincide with a centroid; distances are undefined")
    return 100.0 * raw / sums, groups


# -- traversal, trajectories, treatment -----------------------------------------

def interpolate(a, b, steps: int) -> np.ndarray:
    """``steps`` evenly spaced points from ``a`` to ``b`` inclusive (exact endpoints)."""
    if steps < 2:
        raise ValueError("traversal needs at least 2 steps")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return (1.0 - t) * a + t * b


@dataclass
class Traversal:
    points: np.ndarray
    images: np.ndarray
    work: np.ndarray | None


def traverse_latent(vae, a, b, steps: int, worknet=None) -> Traversal:
    """Decode the latent block of each point on the straight path; optionally
    predict work metrics from the full vector."""
    pts = interpolate(a, b, steps)
    images = vae.decode(pts[:, :N_LATENT])
    work = worknet.predict(pts) if worknet is not None else None
    return Traversal(pts, np.asarray(images, dtype=float), work)


def band_contrast(image, band_mask) -> float:
    """Mean of the image on the band pixels minus the mean elsewhere."""
    image = np.asarray(image, dtype=float)
    band_mask = np.asarray(band_mask, dtype=bool)
    return float(image[band_mask].mean() - image[~band_mask].mean())


@dataclass
class Extrapolation:
    point: np.ndarray
    slope: np.ndarray
    intercept: np.ndarray
    time: float
    extrapolated: bool


def extrapolate_trajectory(times, points, t_new: float) -> Extrapolation:
    """Per-coordinate least-squares line through time-ordered points."""
    t = np.asarray(times, dtype=float)
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if t.size < 2 or x.shape[0] != t.size:
        raise ValueError("a trajectory needs at least 2 time-stamped points")
    if np.ptp(t) == 0:
        raise ValueError("trajectory time stamps are all equal")
    tm = t.mean()
    dt = t - tm
    slope = dt @ (x - x.mean(axis=0)) / (dt @ dt)
    intercept = x.mean(axis=0) - slope * tm
    point = intercept + slope * t_new
    return Extrapolation(point, slope, intercept, float(t_new), bool(t_new > t.max() or t_new < t.min()))


@dataclass
class TreatmentReport:
    magnitude: float
    direction: np.ndarray
    reduced_magnitude: float | None
    reduced_direction: np.ndarray | None
    reference: str | None
    distance_before: float | None
    distance_after: float | None

    @property
    def distance_change(self):
        if self.distance_before is None:
            return None
        return self.distance_after - self.distance_before

    def to_json(self) -> dict:
        return {
            "magnitude": self.magnitude,
            "direction": self.direction.tolist(),
            "reduced_magnitude": self.reduced_magnitude,
            "reduced_direction": None if self.reduced_direction is None else self.reduced_direction.tolist(),
            "reference": self.reference,
            "distance_before": self.distance_before,
            "distance_after": self.distance_after,
            "distance_change": self.distance_change,
        }


def _unit(v):
    n = float(np.linalg.norm(v))
    return n, (v / n if n > 0 else np.zeros_like(v))


def treatment_vector(pre: VdlVector, post: VdlVector, space: ReducedSpace | None = None,
                     reference_centroid=None, reference: str | None = None) -> TreatmentReport:
    """Displacement from the pre- to the post-treatment point.

    ``reference_centroid`` (full 30-d) gives the distance-to-centroid change.
    """
    if pre.stats_id != post.stats_id:
        raise StatsError("pre and post vectors were normalised with different statistics")
    delta = post.coords - pre.coords
    mag, direction = _unit(delta)
    r_mag = r_dir = None
    if space is not None:
        r_mag, r_dir = _unit((space.transform(post.coords) - space.transform(pre.coords))[0])
    before = after = None
    if reference_centroid is not None:
        c = np.asarray(reference_centroid, dtype=float)
        before = float(np.linalg.norm(pre.coords - c))
        after = float(np.linalg.norm(post.coords - c))
    return TreatmentReport(mag, direction, r_mag, r_dir, reference, before, after)


def group_centroid(vectors, group: str) -> np.ndarray:
    pts = [v.coords for v in vectors if v.disease == group]
    if not pts:
        raise ValueError(f"no vectors labelled {group!r}")
    return np.mean(pts, axis=0)
