"""``vdl`` command line.

Every subcommand reads explicit input paths, writes its artifacts under
``--out`` and prints a short summary (JSON with ``--json``).  Errors are
reported as JSON on stderr: exit status 1 for validation or runtime
failures, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    IntegrityError,
    dump_json,
    input_hashes,
    read_dir_manifest,
    read_stamped,
    sha256_file,
    write_dir_manifest,
    write_stamped,
)

DEFAULT_CONFIG = {
    "paths": {"data": ".", "artifacts": "."},
    "physics": {"rho": "1000.0", "mu": "1.0e-3", "c": "0.03", "sensor_spacing_cm": "1.0"},
    "seeds": {"seed": "0"},
    "vae": {"schedule": "40:1e-4,40:3.3e-5,20:5e-6", "batch_size": "32", "beta": "1000"},
    "worknet": {"lr": "1e-3", "epochs": "1000", "batch_size": "32", "val_fraction": "0.2"},
    "forest": {"n_estimators": "1000", "min_leaf": "2", "test_fraction": "0.25"},
    "augment": {"replicas": "31"},
    "labels": {"groups": ""},
}


class UsageError(Exception):
    pass


class JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "usage", "message": message, "prog": self.prog}) + "\n")
        raise SystemExit(2)


# -- configuration -------------------------------------------------------------

def load_config(path=None) -> configparser.ConfigParser:
    """Built-in defaults, overlaid by ``--config`` or ``$VDL_CONFIG``, then ``$VDL_SEED``."""
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULT_CONFIG)
    path = path or os.environ.get("VDL_CONFIG")
    if path:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file {path} not found")
        cfg.read(path, encoding="utf-8")
    if os.environ.get("VDL_SEED"):
        cfg["seeds"]["seed"] = str(int(os.environ["VDL_SEED"]))
    return cfg


def _group_order(cfg, labels):
    """Configured ``[labels] groups`` present in ``labels``, in configured order; None if unset."""
    configured = [g.strip() for g in cfg.get("labels", "groups").split(",") if g.strip()]
    if not configured:
        return None
    present = set(labels)
    missing = present - set(configured)
    if missing:
        raise ValueError(f"labels {sorted(missing)} are not in the configured group list")
    return [g for g in configured if g in present]


# relative paths: raw inputs resolve against [paths] data, everything else against [paths] artifacts
DATA_ARGS = ("inp", "spec")
ARTIFACT_ARGS = ("out", "fit", "cohort", "solved", "metrics", "vae", "stats", "vdl", "space", "worknet", "forest")


def _resolve_paths(args, cfg):
    for names, base in ((DATA_ARGS, cfg.get("paths", "data")), (ARTIFACT_ARGS, cfg.get("paths", "artifacts"))):
        for name in names:
            value = getattr(args, name, None)
            if isinstance(value, str) and not Path(value).is_absolute():
                setattr(args, name, str(Path(base) / value))


def _seed(args, cfg) -> int:
    return int(args.seed) if args.seed is not None else cfg.getint("seeds", "seed")


def _phys(cfg) -> dict:
    return {k: cfg.getfloat("physics", k) for k in ("rho", "mu", "c")}


def _schedule(text) -> list:
    out = []
    for part in text.split(","):
        n, lr = part.split(":")
        out.append((int(n), float(lr)))
    return out


def steps_type(value) -> int:
    k = int(value)
    if k < 2:
        raise argparse.ArgumentTypeError("steps must be at least 2")
    return k


# -- commands ------------------------------------------------------------------

def cmd_ingest(args, cfg):
    from .calibrate import find_plateaus
    from .ingest import parse_recording, to_si

    spacing = args.spacing or cfg.getfloat("physics", "sensor_spacing_cm")
    rec = parse_recording(args.inp, spacing)
    si = to_si(rec)
    plateaus = find_plateaus(si.bag_volume * 1e6, si.time)
    summary = {
        "n_samples": rec.n_samples,
        "duration_s": float(rec.time[-1] - rec.time[0]),
        "sensor_spacing_cm": spacing,
        "length_m": si.length,
        "plateaus": [{"t_start": float(rec.time[a]), "t_end": float(rec.time[b - 1]),
                      "volume_ml": float(np.mean(rec.bag_volume[a:b]))} for a, b in plateaus],
    }
    if args.out:
        write_stamped(summary, args.out, input_hashes(recording=args.inp), "recording-summary")
    return summary


def cmd_synth(args, cfg):
    from .synth import generate_cohort, write_cohort

    spec = json.loads(Path(args.spec).read_text())
    seed = _seed(args, cfg)
    entries = spec["cohort"] if isinstance(spec, dict) else spec
    fills = spec.get("fills_ml") if isinstance(spec, dict) else None
    samples = generate_cohort(entries, seed, fills_ml=fills)
    out = Path(args.out)
    write_cohort(samples, out, seed, spec)
    write_dir_manifest(out, {"kind": "cohort", "seed": seed})
    if args.figures:
        from .plotting import render_grids

        render_grids([s.theta_field / max(1.0, s.theta_field.max()) for s in samples[:8]],
                     out / "figures" / "theta_examples.png", [s.labels["phenotype"] for s in samples[:8]])
        write_dir_manifest(out, {"kind": "cohort", "seed": seed})
    counts = {}
    for s in samples:
        counts[s.labels["phenotype"]] = counts.get(s.labels["phenotype"], 0) + 1
    return {"n_samples": len(samples), "seed": seed, "counts": counts, "out": str(out)}


def cmd_calibrate(args, cfg):
    from .calibrate import calibrate_recording
    from .ingest import parse_recording

    spacing = args.spacing or cfg.getfloat("physics", "sensor_spacing_cm")
    fit = calibrate_recording(parse_recording(args.inp, spacing), **_phys(cfg))
    write_stamped(fit.to_json(), args.out, input_hashes(recording=args.inp), "tube-law-fit")
    return {"k_over_ao": fit.k_over_ao, "po_minus_k": fit.po_minus_k, "r2": fit.r_squared,
            "nonphysical": fit.nonphysical, "fit_id": fit.fit_id}


def _load_fit(path):
    from .calibrate import TubeLawFit

    return TubeLawFit.from_json(read_stamped(path, "tube-law-fit"))


def cmd_solve(args, cfg):
    from .ingest import parse_recording, select_window
    from .inverse import solve_window, write_state
    from .pipeline import solve_cohort, window_info

    out = Path(args.out)
    if args.cohort:
        spacing = cfg.getfloat("physics", "sensor_spacing_cm")
        manifest = solve_cohort(args.cohort, out, spacing, **_phys(cfg))
        n_bad = sum(not s["reliable"] for s in manifest["samples"].values())
        return {"n_solved": len(manifest["samples"]), "n_unreliable": n_bad, "out": str(out)}
    if not (args.inp and args.fit and args.window):
        raise UsageError("single-window solve needs --in, --fit and --window")
    spacing = args.spacing or cfg.getfloat("physics", "sensor_spacing_cm")
    fit = _load_fit(args.fit)
    window = select_window(parse_recording(args.inp, spacing), args.window[0], args.window[1], fit)
    state = solve_window(window, fit)
    write_state(state, out / "state", {"sample_id": "window"})
    if args.figures:
        from .neural.losses import normalize_theta
        from .plotting import render_grids

        render_grids([normalize_theta(state.theta)], out / "figures" / "theta.png", ["normalised theta"])
    write_dir_manifest(out, {
        "kind": "solved",
        "inputs": input_hashes(recording=args.inp, fit=args.fit),
        "samples": {"window": {"dir": "state", "labels": {}, "subject": "", "timestamp": 0.0,
                               "fit": fit.to_json(), "fit_source": "supplied",
                               "window": window_info(window), "reliable": state.reliable,
                               "clamp_fraction": state.clamp_fraction}},
    })
    return {"clamp_fraction": state.clamp_fraction, "reliable": state.reliable, "out": str(out)}


PARAM_UNITS = {"k_over_ao": "Pa/m^2", "po_minus_k": "Pa", "p_max": "Pa", "t_max": "s", "volume": "m^3",
               "theta_max": "-"}


def cmd_metrics(args, cfg):
    from .pipeline import cohort_metrics
    from .plotting import box_summary, render_box, write_rows

    bounds = tuple(args.egj_bounds) if args.egj_bounds else None
    records = cohort_metrics(args.solved, bounds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    solved_hash = sha256_file(Path(args.solved) / "manifest.json")
    write_stamped({"records": records}, out / "metrics.json", {"solved": solved_hash}, "metrics")
    # box-plot summaries of every parameter and work metric per group
    keys = list(PARAM_UNITS) + ["egjw_j", "egjrow1_j", "egjrow2_j", "egjrow3_j"]
    group_of = lambda r: r["labels"].get("disease") or "all"  # noqa: E731
    groups = sorted({group_of(r) for r in records.values()})
    for key in keys:
        data = {}
        for g in groups:
            vals = []
            for r in records.values():
                if group_of(r) != g:
                    continue
                src = r["params"] if key in PARAM_UNITS else r.get("metrics", {})
                if key in src:
                    vals.append(src[key])
            data[g] = vals
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rows = box_summary(data)
        write_rows(out / "box" / f"{key}.csv", ["group", "n", "min", "q1", "median", "q3", "max"], rows)
        if args.figures and rows:
            render_box(rows, out / "figures" / f"box_{key}.png", key)
    n_fail = sum("error" in r for r in records.values())
    write_dir_manifest(out, {"kind": "metrics-report"})
    return {"n_windows": len(records), "n_failed_egj": n_fail, "out": str(out)}


def _metrics_records(path):
    return read_stamped(path, "metrics")["records"]


def cmd_train_vae(args, cfg):
    from .neural.vae import VaeTrainConfig, config_dict, train_vae
    from .pipeline import augmented_theta_images, theta_images
    from .plotting import render_curve

    seed = _seed(args, cfg)
    schedule = _schedule(args.schedule or cfg.get("vae", "schedule"))
    config = VaeTrainConfig(beta=cfg.getfloat("vae", "beta"), schedule=schedule,
                            batch_size=cfg.getint("vae", "batch_size"), seed=seed)
    ids, images = theta_images(args.solved)
    replicas = args.replicas if args.replicas is not None else cfg.getint("augment", "replicas")
    if replicas > 0:
        images = np.concatenate([images, augmented_theta_images(args.solved, replicas, seed)])
    model, curve = train_vae(images, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.write_csv(out / "learning_curve.csv")
    model.save(out / "vae.bin", {"config": config_dict(config), "n_images": len(images), "n_original": len(ids),
                                 "inputs": {"solved": sha256_file(Path(args.solved) / "manifest.json")}})
    if args.figures:
        e = curve.column("epoch")
        render_curve(e, {"loss": curve.column("eval_loss"), "recon MSE": curve.column("recon_mse"),
                         "KLD": curve.column("kld")}, out / "figures" / "vae_curve.png")
    write_dir_manifest(out, {"kind": "vae"})
    return {"epochs": config.epochs, "n_images": len(images), "final_loss": float(curve.column("eval_loss")[-1]),
            "final_recon_mse": float(curve.column("recon_mse")[-1]), "out": str(out)}


def _load_vae(directory):
    from .neural.vae import VAE

    read_dir_manifest(directory)
    model, _ = VAE.load(Path(directory) / "vae.bin")
    return model


def cmd_embed(args, cfg):
    from .pipeline import embed_cohort
    from .vdl import ParamStats, write_vdl

    vae = _load_vae(args.vae)
    records = _metrics_records(args.metrics)
    stats = None
    if args.stats:
        stats = ParamStats.from_json(read_stamped(args.stats, "param-stats"))
    vectors, stats = embed_cohort(vae, args.solved, records, stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_vdl(vectors, out / "vdl.csv")
    write_stamped(stats.to_json(), out / "param_stats.json", {}, "param-stats")
    write_dir_manifest(out, {"kind": "vdl", "inputs": {
        "vae": sha256_file(Path(args.vae) / "vae.bin"), "metrics": sha256_file(args.metrics)}})
    return {"n_vectors": len(vectors), "stats_id": stats.stats_id, "out": str(out)}


def _load_vdl(directory):
    from .vdl import read_vdl

    read_dir_manifest(directory)
    return read_vdl(Path(directory) / "vdl.csv")


WORK_KEYS = ("egjw_j", "egjrow1_j", "egjrow2_j", "egjrow3_j")


def cmd_train_worknet(args, cfg):
    from .forest import train_test_split
    from .neural.worknet import WorkNetConfig, train_worknet

    seed = _seed(args, cfg)
    vectors = [v for v in _load_vdl(args.vdl)]
    records = _metrics_records(args.metrics)
    vectors = [v for v in vectors if "metrics" in records.get(v.sample_id, {})]
    x = np.array([v.coords for v in vectors])
    y = np.array([[records[v.sample_id]["metrics"][k] for k in WORK_KEYS] for v in vectors])
    tr, va = train_test_split(len(vectors), cfg.getfloat("worknet", "val_fraction"), seed)
    config = WorkNetConfig(lr=cfg.getfloat("worknet", "lr"),
                           epochs=args.epochs or cfg.getint("worknet", "epochs"),
                           batch_size=cfg.getint("worknet", "batch_size"), seed=seed)
    net, curve = train_worknet(x[tr], y[tr], config, x[va], y[va])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.write_csv(out / "learning_curve.csv")
    net.save(out / "worknet.bin", {"config": config.__dict__, "targets": list(WORK_KEYS)})
    if args.figures:
        from .plotting import render_curve

        render_curve(curve.column("epoch"), {"train": curve.column("train_mse"), "validation": curve.column("val_mse")},
                     out / "figures" / "worknet_curve.png", "MSE (normalised)")
    write_dir_manifest(out, {"kind": "worknet"})
    return {"val_mse": float(curve.column("val_mse")[-1]), "n_train": int(tr.size), "n_val": int(va.size),
            "out": str(out)}


def _load_worknet(directory):
    from .neural.worknet import WorkNet

    read_dir_manifest(directory)
    net, _ = WorkNet.load(Path(directory) / "worknet.bin")
    return net


def _labels(vectors, key):
    return [getattr(v, key) for v in vectors]


def cmd_reduce(args, cfg):
    from .plotting import render_scatter, write_rows
    from .vdl import as_matrix, lda_reduce, pca_reduce

    vectors = _load_vdl(args.vdl)
    x = as_matrix(vectors)
    labels = [v.disease or "unlabelled" for v in vectors]
    if args.method == "pca":
        space, proj = pca_reduce(x, args.components)
    else:
        space, proj = lda_reduce(x, labels, args.components)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stamped(space.to_json(), out / "space.json",
                  {"vdl": sha256_file(Path(args.vdl) / "vdl.csv")}, "reduced-space")
    write_rows(out / "points.csv", ["sample_id", "group"] + [f"c{i + 1}" for i in range(proj.shape[1])],
               [[v.sample_id, g] + [float(c) for c in p] for v, g, p in zip(vectors, labels, proj)])
    if args.figures:
        render_scatter(proj, labels, out / "figures" / f"{args.method}.png", args.method.upper())
    write_dir_manifest(out, {"kind": "reduced"})
    return {"method": args.method, "explained": space.explained.tolist(), "out": str(out)}


def cmd_distmat(args, cfg):
    from .plotting import render_heatmap, write_matrix
    from .vdl import ReducedSpace, as_matrix, distance_matrix

    vectors = _load_vdl(args.vdl)
    x = as_matrix(vectors)
    labels = [v.disease or "unlabelled" for v in vectors]
    if not args.full:
        if not args.space:
            raise UsageError("distmat needs --space (reduced space) unless --full is given")
        read_dir_manifest(args.space)
        space = ReducedSpace.from_json(read_stamped(Path(args.space) / "space.json", "reduced-space"))
        x = space.transform(x)
    d, groups = distance_matrix(x, labels, _group_order(cfg, labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "distance_matrix.csv", d, groups)
    if args.figures:
        render_heatmap(d, groups, out / "figures" / "distance_matrix.png")
    write_dir_manifest(out, {"kind": "distance-matrix", "space": "full" if args.full else "reduced"})
    return {"groups": groups, "matrix": d.tolist(), "out": str(out)}


def cmd_train_forest(args, cfg):
    from .forest import ForestConfig, jaccard_score, subset_accuracy, train_forest, train_test_split

    seed = _seed(args, cfg)
    vectors = _load_vdl(args.vdl)
    key = "disease" if args.task == "disease" else "peristalsis"
    vectors = [v for v in vectors if getattr(v, key) is not None]
    x = np.array([v.coords for v in vectors])
    y = [getattr(v, key) for v in vectors]
    if len(set(y)) < 2:
        raise ValueError(f"the {args.task} task needs at least two classes")
    tr, te = train_test_split(len(y), cfg.getfloat("forest", "test_fraction"), seed, y)
    config = ForestConfig(n_estimators=args.trees or cfg.getint("forest", "n_estimators"),
                          min_leaf=cfg.getint("forest", "min_leaf"), seed=seed)
    forest = train_forest(x[tr], [y[i] for i in tr], config, task=args.task)
    pred = forest.predict(x[te])
    truth = [y[i] for i in te]
    score = subset_accuracy(truth, pred) if args.task == "disease" else jaccard_score(truth, pred)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    forest.save(out / "forest.json")
    dump_json({"task": args.task, "score_name": "subset_accuracy" if args.task == "disease" else "jaccard",
               "score": score, "test_ids": [vectors[i].sample_id for i in te]}, out / "evaluation.json")
    write_dir_manifest(out, {"kind": "forest", "inputs": {"vdl": sha256_file(Path(args.vdl) / "vdl.csv")}})
    return {"task": args.task, "score": score, "n_test": int(te.size), "out": str(out)}


def cmd_classify(args, cfg):
    from .forest import Forest
    from .plotting import write_rows

    read_dir_manifest(args.forest)
    forest = Forest.load(Path(args.forest) / "forest.json")
    vectors = _load_vdl(args.vdl)
    proba = forest.predict_proba(np.array([v.coords for v in vectors]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "probabilities.csv", ["sample_id", "predicted"] + [str(c) for c in forest.classes],
               [[v.sample_id, str(forest.classes[int(np.argmax(p))])] + [float(x) for x in p]
                for v, p in zip(vectors, proba)])
    write_dir_manifest(out, {"kind": "classification", "task": forest.task})
    return {"n": len(vectors), "classes": [str(c) for c in forest.classes], "out": str(out)}


def _by_id(vectors, sid):
    for v in vectors:
        if v.sample_id == sid:
            return v
    raise KeyError(f"no landscape vector with id {sid!r}")


def _write_traversal(out, trav, labels, figures):
    from .plotting import render_grids, write_rows

    out.mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(trav.images):
        np.savetxt(out / f"theta_{k:02d}.csv", img, delimiter=",", fmt="%.17g")
    if trav.work is not None:
        write_rows(out / "work.csv", ["step"] + list(WORK_KEYS),
                   [[k] + [float(x) for x in w] for k, w in enumerate(trav.work)])
    write_rows(out / "points.csv", ["step"] + [f"x{i:02d}" for i in range(trav.points.shape[1])],
               [[k] + [float(x) for x in p] for k, p in enumerate(trav.points)])
    if figures:
        render_grids(trav.images, out / "figures" / "traversal.png", labels)


def cmd_traverse(args, cfg):
    from .vdl import traverse_latent

    vectors = _load_vdl(args.vdl)
    a, b = _by_id(vectors, args.src), _by_id(vectors, args.dst)
    vae = _load_vae(args.vae)
    net = _load_worknet(args.worknet) if args.worknet else None
    trav = traverse_latent(vae, a.coords, b.coords, args.steps, net)
    out = Path(args.out)
    _write_traversal(out, trav, [f"{k}/{args.steps - 1}" for k in range(args.steps)], args.figures)
    write_dir_manifest(out, {"kind": "traversal", "from": args.src, "to": args.dst, "steps": args.steps})
    res = {"steps": args.steps, "out": str(out)}
    if trav.work is not None:
        res["work"] = trav.work.tolist()
    return res


def cmd_track(args, cfg):
    from .vdl import Traversal, extrapolate_trajectory

    vectors = sorted((v for v in _load_vdl(args.vdl) if v.subject == args.subject), key=lambda v: v.timestamp)
    if len(vectors) < 2:
        raise ValueError(f"subject {args.subject!r} has {len(vectors)} time points; need at least 2")
    ex = extrapolate_trajectory([v.timestamp for v in vectors], [v.coords for v in vectors], args.at)
    vae = _load_vae(args.vae)
    net = _load_worknet(args.worknet) if args.worknet else None
    img = vae.decode(ex.point[None, :24])
    trav = Traversal(ex.point[None], np.asarray(img, dtype=float), net.predict(ex.point[None]) if net else None)
    out = Path(args.out)
    _write_traversal(out, trav, [f"t={args.at:g}"], args.figures)
    write_dir_manifest(out, {"kind": "trajectory", "subject": args.subject, "at": args.at,
                             "extrapolated": ex.extrapolated, "points_used": [v.sample_id for v in vectors]})
    return {"subject": args.subject, "at": args.at, "extrapolated": ex.extrapolated,
            "point": ex.point.tolist(), "out": str(out)}


def cmd_treatment(args, cfg):
    from .vdl import ReducedSpace, group_centroid, treatment_vector

    vectors = _load_vdl(args.vdl)
    pre, post = _by_id(vectors, args.pre), _by_id(vectors, args.post)
    space = None
    if args.space:
        read_dir_manifest(args.space)
        space = ReducedSpace.from_json(read_stamped(Path(args.space) / "space.json", "reduced-space"))
    centroid = group_centroid(vectors, args.reference) if args.reference else None
    report = treatment_vector(pre, post, space, centroid, args.reference).to_json()
    report.update({"pre": args.pre, "post": args.post})
    if args.out:
        write_stamped(report, args.out, {"vdl": sha256_file(Path(args.vdl) / "vdl.csv")}, "treatment")
    return report


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: $VDL_CONFIG)")
    common.add_argument("--seed", type=int, help="seed override (also $VDL_SEED)")
    common.add_argument("--json", action="store_true", help="print the result as JSON")
    common.add_argument("--figures", action="store_true", help="also render PNG figures next to the data")

    p = JsonArgumentParser(prog="vdl", description="EndoFLIP mechanics and virtual disease landscape pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=JsonArgumentParser)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("ingest", cmd_ingest, "validate a recording and summarise its volume plateaus")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--spacing", type=float, help="sensor spacing in cm")
    sp.add_argument("--out")

    sp = add("synth", cmd_synth, "generate a synthetic labelled cohort")
    sp.add_argument("--spec", required=True, help="cohort spec JSON")
    sp.add_argument("--out", required=True)

    sp = add("calibrate", cmd_calibrate, "fit the relaxed tube law from volume plateaus")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--spacing", type=float)
    sp.add_argument("--out", required=True)

    sp = add("solve", cmd_solve, "run the inverse model on one window or a whole cohort")
    sp.add_argument("--in", dest="inp")
    sp.add_argument("--fit")
    sp.add_argument("--window", type=float, nargs=2, metavar=("T0", "T1"))
    sp.add_argument("--spacing", type=float)
    sp.add_argument("--cohort", help="cohort directory (batch mode)")
    sp.add_argument("--out", required=True)

    sp = add("metrics", cmd_metrics, "primary parameters, EGJ work metrics and box summaries")
    sp.add_argument("--solved", required=True)
    sp.add_argument("--egj-bounds", type=int, nargs=2, metavar=("I1", "I2"))
    sp.add_argument("--out", required=True)

    sp = add("train-vae", cmd_train_vae, "train the activation autoencoder")
    sp.add_argument("--solved", required=True)
    sp.add_argument("--schedule", help="epochs:lr stages, e.g. 40:1e-4,40:3.3e-5")
    sp.add_argument("--replicas", type=int, help="augmented copies per window (default: [augment] replicas)")
    sp.add_argument("--out", required=True)

    sp = add("embed", cmd_embed, "assemble landscape vectors")
    sp.add_argument("--solved", required=True)
    sp.add_argument("--metrics", required=True, help="metrics.json from 'metrics'")
    sp.add_argument("--vae", required=True)
    sp.add_argument("--stats", help="existing param_stats.json to reuse")
    sp.add_argument("--out", required=True)

    sp = add("train-worknet", cmd_train_worknet, "train the work-metric regressor")
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--metrics", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)

    sp = add("reduce", cmd_reduce, "PCA or LDA projection of the landscape")
    sp.add_argument("--method", choices=("pca", "lda"), required=True)
    sp.add_argument("--components", type=int, default=3)
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--out", required=True)

    sp = add("distmat", cmd_distmat, "group distance matrix")
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--space", help="output directory of 'reduce'")
    sp.add_argument("--full", action="store_true", help="use the full 30-d vectors")
    sp.add_argument("--out", required=True)

    sp = add("train-forest", cmd_train_forest, "random forest on landscape vectors")
    sp.add_argument("--task", choices=("disease", "peristalsis"), required=True)
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--trees", type=int)
    sp.add_argument("--out", required=True)

    sp = add("classify", cmd_classify, "class probabilities from a trained forest")
    sp.add_argument("--forest", required=True)
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--out", required=True)

    sp = add("traverse", cmd_traverse, "decode a straight path between two landscape points")
    sp.add_argument("--from", dest="src", required=True)
    sp.add_argument("--to", dest="dst", required=True)
    sp.add_argument("--steps", type=steps_type, required=True)
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--worknet")
    sp.add_argument("--out", required=True)

    sp = add("track", cmd_track, "extrapolate a subject's trajectory")
    sp.add_argument("--subject", required=True)
    sp.add_argument("--at", type=float, required=True)
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--worknet")
    sp.add_argument("--out", required=True)

    sp = add("treatment", cmd_treatment, "treatment vector between two visits")
    sp.add_argument("--pre", required=True)
    sp.add_argument("--post", required=True)
    sp.add_argument("--vdl", required=True)
    sp.add_argument("--space")
    sp.add_argument("--reference", default="Normal", help="group whose centroid is the target")
    sp.add_argument("--out")
    return p


def _print(result, as_json):
    if as_json:
        print(json.dumps(result, sort_keys=True, default=float))
        return
    for k, v in result.items():
        if isinstance(v, (list, dict)) and len(json.dumps(v, default=float)) > 120:
            v = f"<{type(v).__name__} of {len(v)}>"
        print(f"{k}: {v}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        _resolve_paths(args, cfg)
        result = args.func(args, cfg)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 2
    except (ValueError, KeyError, FileNotFoundError, IntegrityError, RuntimeError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)}) + "\n")
        return 1
    _print(result, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
