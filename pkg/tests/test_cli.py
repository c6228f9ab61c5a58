import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from imuda.cli import main
from imuda.data import load_csv
from imuda.nn import load_checkpoint, save_checkpoint
from imuda.pseudo import load_pseudo_csv

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Synthetic data, a small config and a pretrained model shared by the CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    cfg = json.loads((ROOT / "configs" / "twomoons.json").read_text())
    cfg["adapt"].update(pretrain_epochs=10, adapt_epochs=3, batch_size=200, num_projections=20)
    cfg["synth"]["n"] = 400
    cfg["output_dir"] = "out"
    (d / "c.json").write_text(json.dumps(cfg))
    assert main(["make-synth", "--n", "400", "--seed", "1", "--out", str(d / "data")]) == 0
    assert main(["pretrain", "--config", str(d / "c.json"), "--source", str(d / "data/source.csv"),
                 "--out", str(d / "m.json")]) == 0
    return d


def run(*args):
    return main([str(a) for a in args])


def test_make_synth_files(work):
    src = load_csv(work / "data/source.csv")
    tgt = load_csv(work / "data/target.csv")
    lab = load_csv(work / "data/target_labels.csv")
    assert src.labeled and not tgt.labeled and lab.labeled
    np.testing.assert_array_equal(tgt.X, lab.X)
    assert (work / "m.report.csv").read_text().startswith("epoch,total,")


def test_blobs_synth(tmp_path):
    assert run("make-synth", "--task", "blobs", "--k", "4", "--n", "80", "--shift", "trans:1,2",
               "--out", tmp_path) == 0
    assert load_csv(tmp_path / "source.csv").k == 4


def test_swd_of_identical_files_is_zero(work, capsys):
    assert run("swd", "--a", work / "data/source.csv", "--b", work / "data/source.csv") == 0
    assert float(capsys.readouterr().out) == 0.0


def test_swd_between_domains_is_positive(work, capsys):
    assert run("swd", "--a", work / "data/source.csv", "--b", work / "data/target.csv",
               "--projections", "50", "--seed", "3") == 0
    assert float(capsys.readouterr().out) > 0.0


def test_gmm_pseudo_adapt_eval_chain(work, capsys):
    d = work
    assert run("estimate-gmm", "--model", d / "m.json", "--source", d / "data/source.csv", "--out", d / "g.json") == 0
    assert run("gen-pseudo", "--model", d / "m.json", "--gmm", d / "g.json", "--tau", "0.95", "--n", "400",
               "--seed", "0", "--out", d / "p.csv") == 0
    assert len(load_pseudo_csv(d / "p.csv")) == 400
    for extra in ([], ["--drop-term3"], ["--drop-term4"], ["--baseline-swd"]):
        assert run("adapt", "--config", d / "c.json", "--model", d / "m.json", "--source", d / "data/source.csv",
                   "--target", d / "data/target.csv", "--pseudo", d / "p.csv", *extra,
                   "--out", d / "a.json", "--report", d / "a.csv") == 0
        load_checkpoint(d / "a.json")
    rows = (d / "a.csv").read_text().splitlines()
    assert len(rows) == 4
    assert run("eval", "--model", d / "a.json", "--data", d / "data/target_labels.csv", "--out", d / "e.json") == 0
    report = json.loads((d / "e.json").read_text())
    assert float(capsys.readouterr().out.strip()) == report["accuracy"]
    assert run("diagnose-bound", "--model", d / "a.json", "--source", d / "data/source.csv",
               "--target", d / "data/target.csv", "--pseudo", d / "p.csv", "--tau", "0.95") == 0
    diag = json.loads(capsys.readouterr().out)
    assert diag["one_minus_tau"] == pytest.approx(0.05)


def test_adapt_without_pseudo_file_builds_one(work):
    d = work
    assert run("adapt", "--config", d / "c.json", "--model", d / "m.json", "--source", d / "data/source.csv",
               "--target", d / "data/target.csv", "--out", d / "a2.json", "--report", d / "a2.csv") == 0


def test_export_embeddings(work):
    d = work
    assert run("export-embeddings", "--model", d / "m.json", "--data", d / "data/target.csv", "--out", d / "z.csv") == 0
    assert (d / "z.csv").read_text().splitlines()[0] == ",".join(f"z{j}" for j in range(8))
    assert run("export-embeddings", "--model", d / "m.json", "--data", d / "data/target_labels.csv", "--pca2",
               "--out", d / "pc.csv") == 0
    assert (d / "pc.csv").read_text().splitlines()[0] == "pc0,pc1,label"


def test_run_all_writes_everything_reproducibly(work):
    shutil.copy(work / "c.json", work / "r.json")
    assert run("run-all", "--config", work / "r.json") == 0
    first = {p.name: p.read_bytes() for p in (work / "out").iterdir()}
    assert run("run-all", "--config", work / "r.json") == 0
    second = {p.name: p.read_bytes() for p in (work / "out").iterdir()}
    assert first == second
    for name in ("model_pretrained.json", "gmm.json", "pseudo.csv", "model_adapted.json", "adapt_report.csv",
                 "eval.json", "manifest.json", "diagnostics.json"):
        assert name in first
    manifest = json.loads(first["manifest.json"])
    assert manifest["seed"] == 0 and "r.json" in manifest["inputs"]
    assert manifest["config"]["adapt"]["tau"] == 0.95


def test_exit_codes(work, tmp_path, capsys):
    d = work
    assert run("no-such-command") == 2
    assert run("swd", "--a", d / "data/source.csv") == 2
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"adapt": {"tau": 1.5}}))
    assert run("pretrain", "--config", bad_cfg, "--source", d / "data/source.csv", "--out", tmp_path / "m") == 2
    bad_cfg.write_text(json.dumps({"adapt": {"temperature": 1}}))
    assert run("run-all", "--config", bad_cfg) == 2
    assert run("swd", "--a", tmp_path / "missing.csv", "--b", d / "data/source.csv") == 3
    broken = tmp_path / "broken.csv"
    broken.write_text("f0,f1,label\n1,2,0\n1,x,1\n")
    assert run("eval", "--model", d / "m.json", "--data", broken) == 3
    assert "line 3" in capsys.readouterr().err
    assert run("pretrain", "--config", d / "c.json", "--source", d / "data/target.csv", "--out", tmp_path / "m") == 3


def test_numerical_failure_exit_code(work, tmp_path):
    # a classifier that is never confident enough makes pseudo generation fail
    assert run("estimate-gmm", "--model", work / "m.json", "--source", work / "data/source.csv",
               "--out", tmp_path / "g.json") == 0
    model = load_checkpoint(work / "m.json")
    model.weights[-1][...] = 0.0
    model.biases[-1][...] = 0.0
    save_checkpoint(model, tmp_path / "flat.json")
    assert run("gen-pseudo", "--model", tmp_path / "flat.json", "--gmm", tmp_path / "g.json", "--tau", "0.95", "--n", "10",
               "--max-attempt-factor", "2", "--out", tmp_path / "p.csv") == 4
