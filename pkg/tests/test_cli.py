from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET

import pytest

from nldetect.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main

TINY = """
preset = "duffing1"
seed = 3

[data]
window_len = 64
levels = [0.0, 0.3]

[ae]
encoder_kernels = [5, 3]
encoder_filters = [4, 2]
encoder_strides = [1, 1]
pool_widths = [2, 2]
decoder_kernels = [3, 5]
decoder_filters = [4, 1]
decoder_strides = [2, 2]
latent = 8

[gan]
generator_kernels = [3, 4]
generator_filters = [4, 1]
generator_strides = [2, 2]
discriminator_kernels = [4, 4]
discriminator_filters = [4, 4]
discriminator_strides = [2, 2]
latent_dim = 6

[frc]
amplitudes = ["0.003 g"]
f_lo = "7.8 Hz"
f_hi = "7.8 Hz"
damage = [0.0]
directions = ["up"]
settle_cycles = 5
measure_cycles = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def _run(cfg_path, out, *args):
    return main([*args, "--config", str(cfg_path), "--out", str(out), "--n-windows", "8", "--epochs", "2"])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_pipeline_outputs_and_schemas(cfg_path, tmp_path):
    out = tmp_path / "run"
    assert _run(cfg_path, out, "run") == EXIT_OK
    for name in ("train.nlds", "score.nlds", "ae.nlnn", "gan.nlnn", "ae_history.csv", "gan_history.csv",
                 "ae_scatter.csv", "ae_trend.csv", "gan_trend.csv", "ae_detection.svg"):
        assert (out / name).exists(), name
    assert _rows(out / "ae_scatter.csv")[0] == ["kind", "level", "window_id", "dof", "score"]
    trend = _rows(out / "ae_trend.csv")
    assert trend[0] == ["kind", "level", "mean", "rel_variation"]
    assert [float(r[1]) for r in trend[1:]] == [0.0, 0.3]
    assert float(trend[1][3]) == 0.0
    assert len(_rows(out / "gan_history.csv")) == 1 + 2
    assert 1 <= len(_rows(out / "ae_history.csv")) - 1 <= 2
    ET.parse(out / "ae_detection.svg")
    manifest = json.loads((out / "train.manifest.json").read_text())
    assert manifest["seeds"]["root"] == 3
    assert "train.nlds" in json.dumps(manifest["outputs"])


def test_rerun_is_byte_identical(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert _run(cfg_path, tmp_path / name, "run", "--kinds", "ae") == EXIT_OK
    for name in ("train.nlds", "score.nlds", "ae.nlnn", "ae_history.csv", "ae_scatter.csv", "ae_trend.csv",
                 "ae_detection.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_refuses_to_overwrite(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert _run(cfg_path, out, "simulate") == EXIT_OK
    before = (out / "train.nlds").read_bytes()
    assert _run(cfg_path, out, "simulate") == EXIT_IO
    assert (out / "train.nlds").read_bytes() == before
    assert _run(cfg_path, out, "simulate", "--force") == EXIT_OK


def test_baseline_only_detection(cfg_path, tmp_path):
    out = tmp_path / "b"
    assert _run(cfg_path, out, "simulate") == EXIT_OK
    assert _run(cfg_path, out, "train", "--kind", "ae") == EXIT_OK
    assert _run(cfg_path, out, "simulate", "--corpus", "score", "--levels", "0") == EXIT_OK
    assert _run(cfg_path, out, "detect", "--kind", "ae") == EXIT_OK
    trend = _rows(out / "ae_trend.csv")
    assert len(trend) == 2 and float(trend[1][3]) == 0.0


def test_exit_codes(cfg_path, tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == EXIT_IO
    bad = tmp_path / "bad.toml"
    bad.write_text('preset = "duffing1"\n[system]\nK1 = "1 kg"\n')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert _run(cfg_path, tmp_path / "y", "train", "--kind", "ae") == EXIT_IO  # no dataset yet
    assert main(["simulate", "--config", str(cfg_path), "--seed", "-1", "--out", str(tmp_path / "z")]) == EXIT_CONFIG


def test_frc_single_point(cfg_path, tmp_path):
    out = tmp_path / "f"
    assert _run(cfg_path, out, "frc") == EXIT_OK
    rows = _rows(out / "frc.csv")
    assert rows[0] == ["A_g", "damage", "direction", "freq_hz", "amplitude_m"]
    assert len(rows) == 2


def test_scalogram(cfg_path, tmp_path):
    out = tmp_path / "s"
    assert _run(cfg_path, out, "scalogram", "--n-freqs", "5") == EXIT_OK
    rows = _rows(out / "scalogram.csv")
    assert rows[0][0] == "freq_hz" and len(rows) == 6
    assert len(rows[1]) == 1 + 64
