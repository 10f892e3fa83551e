import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lgdist.cli import dispatch
from lgdist.manifest import tree_digest

CFG = {
    "synth": {
        "rows": 8, "cols": 8, "gene_count": 16, "hsag_fraction": 0.25,
        "correlation_length": 2.0, "dropout_fraction": 0.1,
        "n_train_slides": 1, "n_val_slides": 1, "n_test_slides": 1,
    },
    "ae": {
        "latent_dim": 8, "encoder_layers": 2, "encoder_heads": 1,
        "lr": 0.001, "epochs": 4, "batch_size": 32,
    },
    "dit": {
        "layers": 2, "heads": 2, "width": 16, "time_embed_dim": 8,
        "train_steps": 60, "sampling_steps": 10, "lr": 0.001,
        "epochs": 3, "batch_size": 32,
    },
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CFG))
    assert dispatch(["synth", "--config", str(cfg), "--seed", "5", "--out", str(root / "data")]) == 0
    assert dispatch(["preprocess", "--dataset", str(root / "data")]) == 0
    assert dispatch([
        "train-ae", "--dataset", str(root / "data"), "--config", str(cfg),
        "--seed", "1", "--out", str(root / "ae"),
    ]) == 0
    assert dispatch([
        "train-diffusion", "--dataset", str(root / "data"), "--ae-ckpt", str(root / "ae" / "ae.ckpt"),
        "--config", str(cfg), "--seed", "2", "--out", str(root / "dit"),
    ]) == 0
    return root, cfg


def test_preprocess_writes_panel_and_precompletion(pipeline):
    root, _ = pipeline
    genes = (root / "data" / "genes.csv").read_text().strip().splitlines()
    assert len(genes) == 1 + 16  # header + one row per panel gene
    assert genes[0] == "index,name,morans_i,is_hsag"
    for sid in ("slide_000", "slide_001", "slide_002"):
        assert (root / "data" / "slides" / sid / "expression_precompleted.f32").exists()


def test_trainlogs_and_manifests(pipeline):
    root, _ = pipeline
    log = (root / "ae" / "ae_trainlog.csv").read_text().strip().splitlines()
    assert log[0] == "epoch,train_loss,val_loss,l_hsag,l_cg"
    assert len(log) == 1 + CFG["ae"]["epochs"]
    manifest = json.loads((root / "ae" / "manifest.json").read_text())
    assert manifest["subcommand"] == "train-ae"
    assert manifest["seeds"] == [1]
    assert "dataset" in manifest["inputs"]
    assert "ae.ckpt" in manifest["outputs"]
    dit_manifest = json.loads((root / "dit" / "manifest.json").read_text())
    assert dit_manifest["config"]["layers"] == 2


def test_complete_and_evaluate_outputs(pipeline):
    root, _ = pipeline
    data, ae, dit = str(root / "data"), str(root / "ae" / "ae.ckpt"), str(root / "dit" / "dit.ckpt")
    assert dispatch([
        "complete", "--dataset", data, "--ae-ckpt", ae, "--dit-ckpt", dit,
        "--targets", "dropout", "--seed", "3", "--out", str(root / "comp"),
    ]) == 0
    cm = json.loads((root / "comp" / "completion_manifest.json").read_text())
    assert set(cm["slides"]) == {"slide_000", "slide_001", "slide_002"}
    assert cm["schedule_digest"]
    blob = np.fromfile(root / "comp" / "slides" / "slide_000" / "expression_completed.f32", dtype="<f4")
    assert blob.size == 64 * 4  # HSAG columns only by default

    assert dispatch([
        "evaluate", "--dataset", data, "--ae-ckpt", ae, "--dit-ckpt", dit,
        "--fraction", "0.3", "--seeds", "0,1", "--out", str(root / "eval"),
    ]) == 0
    metrics = json.loads((root / "eval" / "metrics.json").read_text())
    assert metrics["slide"] == "slide_002"  # first test slide
    assert len(metrics["per_seed"]) == 2
    assert (root / "eval" / "scatter.svg").exists()
    assert (root / "eval" / "expression_map.svg").exists()


def test_complete_empty_targets_is_identity(pipeline, tmp_path):
    root, _ = pipeline
    targets = tmp_path / "targets.json"
    targets.write_text("{}")
    out = tmp_path / "comp_empty"
    assert dispatch([
        "complete", "--dataset", str(root / "data"), "--ae-ckpt", str(root / "ae" / "ae.ckpt"),
        "--dit-ckpt", str(root / "dit" / "dit.ckpt"), "--targets", str(targets),
        "--keep-cgs", "--out", str(out),
    ]) == 0
    got = np.fromfile(out / "slides" / "slide_000" / "expression_completed.f32", dtype="<f4")
    want = np.fromfile(root / "data" / "slides" / "slide_000" / "expression.f32", dtype="<f4")
    assert got.tobytes() == want.tobytes()


def test_robustness_and_plots(pipeline, tmp_path):
    root, _ = pipeline
    out = tmp_path / "rob"
    assert dispatch([
        "robustness", "--dataset", str(root / "data"), "--ae-ckpt", str(root / "ae" / "ae.ckpt"),
        "--dit-ckpt", str(root / "dit" / "dit.ckpt"), "--fractions", "0.2,0.5",
        "--seeds", "0,1", "--out", str(out),
    ]) == 0
    lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "completer,fraction,mean_mse,std_mse,n_seeds"
    assert len(lines) == 1 + 2 * 2  # model + median, two fractions each

    svg1 = tmp_path / "p1.svg"
    svg2 = tmp_path / "p2.svg"
    for svg in (svg1, svg2):
        assert dispatch(["plot", "--kind", "sweep-line", "--artifact", str(out), "--out", str(svg)]) == 0
    assert svg1.read_bytes() == svg2.read_bytes()


def test_rerun_byte_identical(pipeline, tmp_path):
    root, cfg = pipeline
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert dispatch(["synth", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    assert tree_digest(a) == tree_digest(b)

    ta, tb = tmp_path / "ae_a", tmp_path / "ae_b"
    for out in (ta, tb):
        assert dispatch([
            "train-ae", "--dataset", str(root / "data"), "--config", str(cfg),
            "--seed", "9", "--out", str(out),
        ]) == 0
    assert tree_digest(ta) == tree_digest(tb)


def test_preprocess_idempotent_in_place(pipeline):
    root, _ = pipeline
    before = tree_digest(root / "data")
    assert dispatch(["preprocess", "--dataset", str(root / "data")]) == 0
    assert tree_digest(root / "data") == before


def test_preprocess_out_of_place(pipeline, tmp_path):
    root, _ = pipeline
    out = tmp_path / "derived"
    assert dispatch(["preprocess", "--dataset", str(root / "data"), "--out", str(out)]) == 0
    assert (out / "genes.csv").exists()
    # inputs untouched is implied by test_preprocess_idempotent_in_place running after


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        dispatch(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_error_record_on_stderr(pipeline, capsys, tmp_path):
    root, _ = pipeline
    code = dispatch([
        "complete", "--dataset", str(root / "data"), "--dit-ckpt", str(tmp_path / "missing.ckpt"),
        "--targets", "dropout", "--out", str(tmp_path / "x"),
    ])
    assert code == 1
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "CheckpointError"
    assert "missing.ckpt" in record["message"]


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"synth": {"rows": 4, "cols": 4, "gene_count": 8, "not_a_field": 1}}))
    code = dispatch(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert code == 1
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "ConfigError"
    assert "not_a_field" in record["message"]


def test_console_script_installed():
    out = subprocess.run(
        [sys.executable, "-m", "lgdist.cli", "--version"], capture_output=True, text=True
    )
    assert out.returncode == 0
    assert "lgdist" in out.stdout
