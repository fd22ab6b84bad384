import json
import os
import subprocess
import sys

import numpy as np
import pytest

from flipvdl.cli import load_config, main
from flipvdl.plotting import box_summary, read_matrix, write_matrix

SPEC = {"cohort": [{"phenotype": "absent-contractility", "count": 1}, {"phenotype": "normal-peristaltic", "count": 1}],
        "fills_ml": [30, 40]}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "c"), "--seed", "5"]) == 0
    return root


def test_synth_is_byte_identical(cohort, capsys):
    code, _, _ = run(capsys, "synth", "--spec", cohort / "spec.json", "--out", cohort / "c2", "--seed", "5")
    assert code == 0
    assert tree_bytes(cohort / "c") == tree_bytes(cohort / "c2")
    code, _, _ = run(capsys, "synth", "--spec", cohort / "spec.json", "--out", cohort / "c3", "--seed", "6")
    assert tree_bytes(cohort / "c") != tree_bytes(cohort / "c3")


def test_vdl_seed_environment_matches_flag(cohort, capsys, monkeypatch):
    monkeypatch.setenv("VDL_SEED", "5")
    assert run(capsys, "synth", "--spec", cohort / "spec.json", "--out", cohort / "c4")[0] == 0
    assert tree_bytes(cohort / "c") == tree_bytes(cohort / "c4")


def test_calibrate_fits_line(cohort, capsys):
    rec = sorted((cohort / "c").glob("*_recording.csv"))[0]
    code, out, _ = run(capsys, "calibrate", "--in", rec, "--out", cohort / "fit.json", "--json")
    assert code == 0
    res = json.loads(out)
    assert res["r2"] > 0.99 and not res["nonphysical"]
    assert res["k_over_ao"] > 0
    # the fit drives a single-window solve
    code, out, _ = run(capsys, "solve", "--in", rec, "--fit", cohort / "fit.json", "--window", "18.4", "27.3",
                       "--out", cohort / "solved", "--json")
    assert code == 0, out
    assert (cohort / "solved" / "manifest.json").exists()


def test_ingest_summary(cohort, capsys):
    rec = sorted((cohort / "c").glob("*_recording.csv"))[0]
    code, out, _ = run(capsys, "ingest", "--in", rec, "--json")
    assert code == 0
    assert len(json.loads(out)["plateaus"]) >= 3


def test_usage_errors_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "nonsense")
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "usage"
    code, _, err = run(capsys, "traverse", "--from", "a", "--to", "b", "--steps", "1", "--vdl", "v", "--vae", "m",
                       "--out", tmp_path)
    assert code == 2 and "steps" in json.loads(err.strip().splitlines()[-1])["message"]
    code, _, err = run(capsys, "solve", "--out", tmp_path)
    assert code == 2


def test_runtime_errors_are_json(capsys, tmp_path):
    code, _, err = run(capsys, "calibrate", "--in", tmp_path / "missing.csv", "--out", tmp_path / "f.json")
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] in ("FileNotFoundError", "OSError") and "missing.csv" in payload["message"]
    code, _, err = run(capsys, "ingest", "--in", "x", "--config", tmp_path / "nope.ini")
    assert code == 1 and "nope.ini" in json.loads(err)["message"]


def test_config_layers(tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text("[forest]\nn_estimators = 7\n[seeds]\nseed = 3\n")
    cfg = load_config(ini)
    assert cfg.getint("forest", "n_estimators") == 7 and cfg.getint("seeds", "seed") == 3
    assert cfg.getint("vae", "batch_size") == 32
    monkeypatch.setenv("VDL_SEED", "11")
    assert load_config(ini).getint("seeds", "seed") == 11
    monkeypatch.setenv("VDL_CONFIG", str(ini))
    assert load_config().getint("forest", "n_estimators") == 7


def test_box_summary():
    rows = box_summary({"a": [1, 2, 3, 4, 5]})
    assert rows == [("a", 5, 1.0, 2.0, 3.0, 4.0, 5.0)]
    with pytest.warns(UserWarning, match="empty"):
        assert box_summary({"a": [], "b": [1.0]}) == [("b", 1, 1.0, 1.0, 1.0, 1.0, 1.0)]


def test_matrix_csv_round_trip(tmp_path):
    m = np.random.default_rng(0).random((3, 3)) * 100
    write_matrix(tmp_path / "d.csv", m, ["x", "y", "z"])
    back, rows, cols = read_matrix(tmp_path / "d.csv")
    np.testing.assert_allclose(back, m, rtol=1e-12)
    assert rows == cols == ["x", "y", "z"]


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "flipvdl.cli", "--version"], capture_output=True, text=True,
                         env=dict(os.environ))
    assert res.returncode == 0 and res.stdout.strip()


def test_train_vae_adds_augmented_replicas(cohort, capsys):
    assert run(capsys, "solve", "--cohort", cohort / "c", "--out", cohort / "solved_all")[0] == 0
    code, out, _ = run(capsys, "train-vae", "--solved", cohort / "solved_all", "--schedule", "1:1e-4",
                       "--replicas", "3", "--out", cohort / "vae", "--json")
    assert code == 0
    n = json.loads(out)["n_images"]
    assert 2 < n <= 2 + 2 * 3
    code, out, _ = run(capsys, "train-vae", "--solved", cohort / "solved_all", "--schedule", "1:1e-4",
                       "--replicas", "0", "--out", cohort / "vae0", "--json")
    assert json.loads(out)["n_images"] == 2


def test_paths_section_resolves_relative_arguments(cohort, capsys, tmp_path):
    ini = tmp_path / "p.ini"
    ini.write_text(f"[paths]\ndata = {cohort}\nartifacts = {tmp_path / 'art'}\n")
    code, _, _ = run(capsys, "synth", "--spec", "spec.json", "--out", "rel", "--seed", "5", "--config", ini)
    assert code == 0
    assert tree_bytes(tmp_path / "art" / "rel") == tree_bytes(cohort / "c")


def test_configured_group_order(tmp_path):
    from flipvdl.cli import _group_order

    ini = tmp_path / "g.ini"
    ini.write_text("[labels]\ngroups = Normal, Scleroderma, Type I achalasia\n")
    cfg = load_config(ini)
    assert _group_order(cfg, ["Type I achalasia", "Normal"]) == ["Normal", "Type I achalasia"]
    with pytest.raises(ValueError, match="Hypercontractility"):
        _group_order(cfg, ["Hypercontractility"])
    assert _group_order(load_config(), ["x"]) is None
