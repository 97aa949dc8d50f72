import json
import os

import numpy as np
import pytest
from PIL import Image

from stylehead import LandmarkSequence, save_landmark_sequence
from stylehead.cli import cli_dispatch, split_overrides, UsageError, EXIT_OK, EXIT_INVALID, EXIT_IO
from stylehead.errors import DatasetIOError
from stylehead.pipeline import _isp_for

from conftest import random_sequence

TINY = os.path.join(os.path.dirname(__file__), "stylehead", "configs", "tiny.cfg")
SMALL_GRID = ["--metric_f_max=4", "--metric_v_max=2", "--workers=1"]


def test_split_overrides():
    assert split_overrides(["--a=1", "--b-c=x"]) == {"a": "1", "b-c": "x"}
    with pytest.raises(UsageError):
        split_overrides(["stray"])
    with pytest.raises(UsageError):
        split_overrides(["--flag"])


def test_evaluate_identical(tmp_path, capsys):
    path = str(tmp_path / "ref.jsonl")
    save_landmark_sequence(path, LandmarkSequence(random_sequence(12, seed=1)))
    out = str(tmp_path / "eval")
    assert cli_dispatch(["evaluate", path, path, "--out", out] + SMALL_GRID) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    with open(os.path.join(out, "report.json")) as f:
        written = json.load(f)
    assert printed == written
    for name in ("lmd", "d_l", "d_v", "d_a", "sld", "slv", "smd"):
        assert written[name] == 0.
    assert written["cpbd"] is None


def test_missing_checkpoint_is_io_error(tmp_path, capsys):
    checkpoint = str(tmp_path / "ckpt")
    os.makedirs(checkpoint)
    code = cli_dispatch(["animate", "voice.wav", "face.png", checkpoint, "--out", str(tmp_path)])
    assert code == EXIT_IO
    assert os.path.join(checkpoint, "apc.adst") in capsys.readouterr().err


def test_animate_requires_isp_images(tmp_path):
    os.makedirs(str(tmp_path / "isp"))
    Image.new("RGB", (8, 8)).save(str(tmp_path / "isp" / "isp_0.png"))
    with pytest.raises(DatasetIOError) as e:
        _isp_for(str(tmp_path))
    assert e.value.path == str(tmp_path / "isp" / "isp_1.png")


def test_missing_landmark_file(tmp_path, capsys):
    missing = str(tmp_path / "nothing.jsonl")
    assert cli_dispatch(["evaluate", missing, missing, "--out", str(tmp_path)] + SMALL_GRID) == EXIT_IO
    assert "nothing.jsonl" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert cli_dispatch(["dance"]) == EXIT_INVALID
    assert cli_dispatch([]) == EXIT_INVALID
    assert cli_dispatch(["synth-data", "--out", str(tmp_path), "stray"]) == EXIT_INVALID
    assert cli_dispatch(["synth-data", "--out", str(tmp_path), "--image_size=100"]) == EXIT_INVALID
    assert cli_dispatch(["synth-data", "--out", str(tmp_path), "--no_such_setting=1"]) == EXIT_INVALID
    assert "invalid configuration" in capsys.readouterr().err
    assert cli_dispatch(["synth-data", "--config", str(tmp_path / "none.cfg")]) == EXIT_IO


def test_invalid_landmarks_are_invalid_input(tmp_path):
    path = tmp_path / "short.jsonl"
    path.write_text(json.dumps({"frame": 0, "points": np.zeros((67, 3)).tolist()}) + "\n")
    assert cli_dispatch(["evaluate", str(path), str(path), "--out", str(tmp_path)] + SMALL_GRID) == EXIT_INVALID


@pytest.mark.slow
def test_tiny_pipeline_end_to_end(tmp_path):
    out = str(tmp_path)
    common = ["--config", TINY, "--out", out]
    assert cli_dispatch(["synth-data"] + common) == EXIT_OK
    manifest = os.path.join(out, "manifest.json")
    for stage in ("train-apc", "train-motion", "train-generator"):
        assert cli_dispatch([stage, manifest] + common) == EXIT_OK
    with open(manifest) as f:
        first = json.load(f)[0]
    audio = os.path.join(out, first["audio"])
    image = os.path.join(out, first["frames_dir"], "00000.png")
    animated = str(tmp_path / "animated")
    assert cli_dispatch(["animate", audio, image, out, "--config", TINY, "--out", animated]) == EXIT_IO
    style_landmarks = os.path.join(out, first["landmarks"])
    style_frames = os.path.join(out, first["frames_dir"])
    assert cli_dispatch(["build-isp", image, style_landmarks, style_frames] + common) == EXIT_OK
    assert cli_dispatch(["animate", audio, image, out, "--config", TINY, "--out", animated]) == EXIT_OK
    generated = os.path.join(animated, "landmarks.jsonl")
    frames = os.path.join(animated, "frames")
    assert len(os.listdir(frames)) > 0
    assert cli_dispatch(["evaluate", generated, generated, "--frames", frames, "--config", TINY,
                         "--out", animated]) == EXIT_OK
