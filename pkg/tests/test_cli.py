import csv
import subprocess
import sys
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbnn.cli import OUT_DIR_ENV, main
from sbnn.config import RunConfig
from sbnn.errors import ConfigError
from sbnn.freeze import load_frozen
from sbnn.graph import build_model
from sbnn.io import load_checkpoint, read_csv, save_checkpoint

ARTIFACTS = ("metrics.csv", "hist.csv", "checkpoint.npz", "config.txt", "model.sbnn", "predictions.csv")


def pipeline(tmp, cfg_text="seed = 7\n", name="run"):
    cfg = tmp / f"{name}.cfg"
    cfg.write_text(cfg_text)
    out = tmp / name
    assert main(["train", "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert main(["export", "--checkpoint", str(out / "checkpoint.npz"), "--out", str(out / "model.sbnn")]) == 0
    assert main(["infer", "--model", str(out / "model.sbnn"), "--config", str(cfg),
                 "--out", str(out / "predictions.csv")]) == 0
    return out


def test_round_trip_matches_trainer_accuracy(tmp_path, capsys):
    out = pipeline(tmp_path)
    text = capsys.readouterr().out
    val_acc = float(read_csv(out / "metrics.csv")[-1]["val_acc"])
    infer_acc = float(text.split("accuracy=")[1].split()[0])
    assert abs(infer_acc - val_acc) <= 0.01
    preds = read_csv(out / "predictions.csv")
    assert len(preds) == 200
    assert all(int(r["argmax"]) == int(np.argmax([int(r["score_0"]), int(r["score_1"])])) for r in preds)


def test_repeated_runs_are_byte_identical(tmp_path):
    a = pipeline(tmp_path, name="a")
    b = pipeline(tmp_path, name="b")
    for f in ARTIFACTS:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_csv_headers(tmp_path):
    out = pipeline(tmp_path, "epochs = 3\n")
    heads = {f: next(csv.reader(open(out / f))) for f in ("metrics.csv", "hist.csv", "predictions.csv")}
    assert heads["metrics.csv"] == ["epoch", "nu", "lr", "train_loss", "train_acc", "val_acc"]
    assert heads["hist.csv"] == ["layer", "epoch", "bin_center", "pre_density", "post_density"]
    assert heads["predictions.csv"] == ["image_index", "argmax", "score_0", "score_1"]
    assert len(read_csv(out / "metrics.csv")) == 3


def test_out_dir_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"epochs = 2\nout_dir = {tmp_path / 'ignored'}\n")
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["train", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "checkpoint.npz").exists()
    assert not (tmp_path / "ignored").exists()


def test_checkpoint_stores_latent_weights(tmp_path):
    out = pipeline(tmp_path, "epochs = 2\n")
    model, adam, meta = load_checkpoint(out / "checkpoint.npz")
    assert meta["epoch"] == 1
    assert set(adam) == {p.name for p in model.params()}
    assert RunConfig.from_text(meta["config"]).epochs == 2


def test_export_untrained_checkpoint(tmp_path):
    model = build_model("dense:5, bn, act, dense:3", (4,), 3, seed=0)
    save_checkpoint(tmp_path / "u.npz", model, 0)
    assert main(["export", "--checkpoint", str(tmp_path / "u.npz"), "--out", str(tmp_path / "u.sbnn")]) == 0
    fm = load_frozen(tmp_path / "u.sbnn")
    assert fm.n_classes == 3 and [l.kind for l in fm.layers] == ["dense", "bnact", "dense"]


def test_hist_command(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs = 4\ncheckpoint_epochs = 0, 3\n")
    out = tmp_path / "r"
    assert main(["train", "--config", str(cfg), "--out-dir", str(out)]) == 0
    cks = [str(out / "checkpoint_e000.npz"), str(out / "checkpoint_e003.npz")]
    assert main(["hist", "--checkpoints", *cks, "--bins", "20", "--out", str(tmp_path / "h.csv")]) == 0
    rows = read_csv(tmp_path / "h.csv")
    assert len(rows) == 2 * 3 * 20
    assert {r["epoch"] for r in rows} == {"0", "3"}
    late = [r for r in rows if r["epoch"] == "3"]
    assert all(float(r["post_density"]) == 0 for r in late if abs(float(r["bin_center"])) < 0.9)


def test_bench_command(tmp_path):
    assert main(["bench", "--dims", "2x8x8", "--batches", "1,2", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bench.csv")
    assert list(rows[0]) == ["variant", "batch", "c", "h", "w", "median_ns", "iqr_ns", "output_bytes", "storage_bits"]
    assert len(rows) == 6
    assert (tmp_path / "bench_plot.json").exists()


@pytest.mark.parametrize(
    "argv_fn, category",
    [
        (lambda d: ["train", "--config", str(d / "missing.cfg")], "IOError"),
        (lambda d: ["train", "--config", str(_write(d / "bad.cfg", "colour = blue\n"))], "ConfigError"),
        (lambda d: ["train", "--config", str(_write(d / "m.cfg", "mode = Fuzzy\n"))], "ConfigError"),
        (lambda d: ["infer", "--model", str(_write(d / "x.sbnn", "not a model"))], "FormatError"),
    ],
)
def test_errors_exit_2_with_category(tmp_path, capsys, argv_fn, category):
    assert main(argv_fn(tmp_path)) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error: {category}: ")


def test_corrupt_model_is_checksum_error(tmp_path, capsys):
    out = pipeline(tmp_path, "epochs = 2\n")
    raw = bytearray((out / "model.sbnn").read_bytes())
    raw[20] ^= 0xFF
    (out / "bad.sbnn").write_bytes(bytes(raw))
    assert main(["infer", "--model", str(out / "bad.sbnn")]) == 2
    assert capsys.readouterr().err.startswith("error: ChecksumError: ")


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sbnn", "train", "--config", str(tmp_path / "nope")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and r.stderr.startswith("error: IOError: ")


def _write(path, text):
    path.write_text(text)
    return path


safe_text = st.text(st.sampled_from("abcdefghijklmnopqrstuvwxyz0123456789:,_/-. "), max_size=30).map(str.strip)


@st.composite
def run_configs(draw):
    nu_start = draw(st.floats(1e-3, 100))
    return RunConfig(
        arch=draw(safe_text),
        dataset=draw(safe_text),
        n_samples=draw(st.integers(1, 10**6)),
        blob_std=draw(st.floats(0, 5)),
        val_fraction=draw(st.floats(0, 0.99)),
        epochs=draw(st.integers(1, 500)),
        batch_size=draw(st.integers(1, 4096)),
        nu_start=nu_start,
        nu_end=nu_start + draw(st.floats(0, 1e4)),
        lr0=draw(st.floats(1e-8, 1)),
        mode=draw(st.sampled_from(["Soft", "HardSTE", "HardSTEWithAlpha"])),
        use_alpha_fold=draw(st.booleans()),
        input_mode=draw(st.sampled_from(["int8", "median"])),
        augment=draw(st.booleans()),
        seed=draw(st.integers(0, 2**31)),
        checkpoint_epochs=draw(safe_text),
        out_dir=draw(safe_text),
    )


@settings(max_examples=100)
@given(run_configs())
def test_config_round_trip(cfg):
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_comments_and_defaults():
    cfg = RunConfig.from_text("# header\nepochs = 5  # short run\n\nmode = HardSTE\n")
    assert cfg.epochs == 5 and cfg.mode == "HardSTE"
    assert all(getattr(cfg, f.name) == getattr(RunConfig(), f.name)
               for f in fields(RunConfig) if f.name not in ("epochs", "mode"))


@pytest.mark.parametrize("text", ["epochs = 0", "nu_start = 5\nnu_end = 2", "nu_start = -1", "epochs = many",
                                  "no equals sign", "input_mode = float"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)
