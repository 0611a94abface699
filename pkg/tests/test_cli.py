"""End-to-end command-line flows and exit-code mapping."""

import csv
import json

import numpy as np
import pytest

from texdeblur.cli import main
from texdeblur.data import load_image

FAST = [
    "--set", "data.image_size=48",
    "--set", "data.train_scenes=4",
    "--set", "data.val_scenes=2",
    "--set", "data.patch=32",
    "--set", "data.batch=2",
    "--set", "deblur.blocks=1,1,1,1",
    "--set", "deblur.heads=1,1,2,2",
    "--set", "train.stage1_steps=2",
    "--set", "train.stage2_steps=2",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus -> split -> stage 1 -> stage 2, all through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    run = root / "run"
    assert main(["make-synthetic", "--out", str(corpus), "--seed", "3", *FAST]) == 0
    assert main(["split-data", str(corpus), "--seed", "3", *FAST]) == 0
    assert (
        main(["train-stage1", str(corpus), "--out", str(run), "--seed", "3", *FAST]) == 0
    )
    assert (
        main(
            [
                "train-stage2", str(corpus), "--out", str(run), "--seed", "3",
                "--checkpoint", str(run / "stage1.npz"), *FAST,
            ]
        )
        == 0
    )
    return {"corpus": corpus, "run": run, "root": root}


def test_corpus_and_split_files(workspace):
    corpus = workspace["corpus"]
    assert (corpus / "train_manifest.jsonl").exists()
    assert (corpus / "val_manifest.jsonl").exists()
    split = json.loads((corpus / "split.json").read_text())
    assert len(split["blurry_scenes"]) == 2  # floor(4 * 0.6 + 0.5)
    assert len(split["sharp_scenes"]) == 2
    assert not set(split["blurry_scenes"]) & set(split["sharp_scenes"])


def test_training_outputs(workspace):
    run = workspace["run"]
    assert (run / "stage1.npz").exists()
    assert (run / "stage2.npz").exists()
    with open(run / "stage2_losses.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "step" and len(rows) == 3


def test_infer_writes_restored_png(workspace, capsys):
    corpus, run = workspace["corpus"], workspace["run"]
    out = workspace["root"] / "restored"
    code = main(
        [
            "infer", str(corpus / "val" / "blurry" / "val0000.png"),
            "--checkpoint", str(run / "stage2.npz"), "--out", str(out), "--seed", "1",
        ]
    )
    assert code == 0
    target = out / "val0000.restored.png"
    assert "restored" in capsys.readouterr().out
    pixels = load_image(target)
    assert pixels.shape == (48, 48, 3)


def test_infer_deterministic_across_runs(workspace):
    corpus, run = workspace["corpus"], workspace["run"]
    outs = []
    for name in ("r1", "r2"):
        out = workspace["root"] / name
        main(
            [
                "infer", str(corpus / "val" / "blurry" / "val0001.png"),
                "--checkpoint", str(run / "stage2.npz"), "--out", str(out), "--seed", "9",
            ]
        )
        outs.append(load_image(out / "val0001.restored.png"))
    assert np.array_equal(outs[0], outs[1])


def test_eval_writes_report(workspace, capsys):
    corpus, run = workspace["corpus"], workspace["run"]
    out = workspace["root"] / "scores"
    code = main(
        [
            "eval", str(corpus), "--checkpoint", str(run / "stage2.npz"),
            "--out", str(out), "--seed", "2",
        ]
    )
    assert code == 0
    assert "psnr" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["n_images"] == 2
    with open(out / "metrics.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_exit_code_config_error(tmp_path, capsys):
    code = main(["make-synthetic", "--out", str(tmp_path), "--set", "data.nope=1"])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_exit_code_bad_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("data.patch = not_an_int\n")
    code = main(["make-synthetic", "--out", str(tmp_path), "--config", str(bad)])
    assert code == 2


def test_exit_code_data_error(tmp_path, capsys):
    code = main(["train-stage1", str(tmp_path), "--out", str(tmp_path / "run")])
    assert code == 3
    assert "split-data" in capsys.readouterr().err


def test_exit_code_missing_checkpoint(workspace, tmp_path, capsys):
    code = main(
        [
            "eval", str(workspace["corpus"]),
            "--checkpoint", str(tmp_path / "missing.npz"), "--out", str(tmp_path),
        ]
    )
    assert code == 3


def test_exit_code_numerical_error(workspace, tmp_path, monkeypatch, capsys):
    import torch

    from texdeblur import training

    monkeypatch.setattr(
        training, "loss_stage1", lambda *a, **k: torch.tensor(float("nan"), requires_grad=True)
    )
    code = main(
        ["train-stage1", str(workspace["corpus"]), "--out", str(tmp_path), *FAST]
    )
    assert code == 4
    assert "step 1" in capsys.readouterr().err


def test_missing_required_flag_exits_2(workspace):
    with pytest.raises(SystemExit) as err:
        main(["train-stage1", str(workspace["corpus"])])  # --out missing
    assert err.value.code == 2


def test_ablate_table(workspace, capsys):
    corpus = workspace["corpus"]
    out = workspace["root"] / "ablations"
    args = ["ablate", str(corpus), "--out", str(out), "--seed", "3", *FAST]
    assert main(args) == 0
    with open(out / "ablations.csv") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["ablation"] for r in rows]
    assert names == [
        "baseline", "no_dm", "no_tpe", "no_ttformer",
        "no_multi_scale", "no_joint_train", "no_wave_loss",
    ]
    for row in rows:
        assert np.isfinite(float(row["psnr_restored_mean"]))
    assert (out / "baseline" / "report.json").exists()
    assert (out / "no_dm" / "stage2.npz").exists()
