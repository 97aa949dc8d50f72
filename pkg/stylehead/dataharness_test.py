import json
import os

import numpy as np
import pytest

from stylehead import SyntheticStyle, synth_generate, load_dataset, InvalidArgumentError
from stylehead.errors import DatasetIOError, DatasetValidationError
from stylehead.dataharness import (get_style, synth_style_distance, save_dataset, render_face, BUILTIN_STYLES,
                                   BACKGROUND, SKIN)


def test_builtin_styles():
    assert sorted(BUILTIN_STYLES) == ["ballad", "neutral", "opera", "rap"]
    assert synth_style_distance(get_style("rap"), get_style("rap")) == 0.
    assert synth_style_distance(get_style("rap"), get_style("ballad")) > 0.
    with pytest.raises(InvalidArgumentError):
        get_style("polka")


def test_style_validation():
    with pytest.raises(ValueError):
        SyntheticStyle(name="x", head_bob_freq=0., head_bob_amp=1., mouth_gain=1., blink_period=10)
    with pytest.raises(ValueError):
        SyntheticStyle(name="x", head_bob_freq=1., head_bob_amp=1., mouth_gain=-1., blink_period=10)


def test_synth_generate_is_deterministic():
    a = synth_generate(get_style("rap"), 1., seed=3, render=False)
    b = synth_generate(get_style("rap"), 1., seed=3, render=False)
    c = synth_generate(get_style("rap"), 1., seed=4, render=False)
    assert np.array_equal(a.audio.samples, b.audio.samples)
    assert np.array_equal(a.landmarks.points, b.landmarks.points)
    assert not np.array_equal(a.audio.samples, c.audio.samples)


def test_synth_generate_shapes():
    sample = synth_generate(get_style("neutral"), 2., seed=0, render=False)
    assert len(sample) == 120
    assert sample.audio.samples.shape == (32000,)
    assert sample.poses.shape == (120, 6)
    assert sample.frames is None
    assert np.max(np.abs(sample.audio.samples)) <= 1.
    with pytest.raises(InvalidArgumentError):
        synth_generate(get_style("neutral"), 0.5, seed=0)


def test_mouth_gain_zero_keeps_mouth_closed():
    style = SyntheticStyle(name="mute", head_bob_freq=0.5, head_bob_amp=0., mouth_gain=0., blink_period=1000)
    sample = synth_generate(style, 1., seed=1, render=False)
    assert np.all(sample.mouth_open == 0.)
    lips = sample.object_landmarks[:, 48:68]
    assert np.allclose(lips, lips[0][None], atol=1e-9)


def test_head_bob_frequency():
    '''
    the yaw crosses zero twice per head_bob_freq period
    '''
    style = SyntheticStyle(name="bob", head_bob_freq=1., head_bob_amp=10., mouth_gain=1., blink_period=100)
    sample = synth_generate(style, 4., seed=2, render=False)
    yaw = sample.poses[:, 1]
    crossings = int(np.sum(np.sign(yaw[1:]) != np.sign(yaw[:-1])))
    assert 7 <= crossings <= 9
    assert np.max(np.abs(np.rad2deg(yaw))) == pytest.approx(10., abs=0.5)


def test_render_face(small_canvas):
    sample = synth_generate(get_style("neutral"), 1., seed=0, image_size=64)
    frame = sample.frames[0]
    assert frame.shape == (64, 64, 3) and frame.dtype == np.uint8
    assert tuple(frame[0, 0]) == BACKGROUND
    nose = np.round(sample.landmarks.points[0, 30, :2]).astype(int)
    assert tuple(frame[nose[1], nose[0]]) == SKIN
    assert np.array_equal(render_face(sample.landmarks.points[0], 64), frame)


def test_dataset_round_trip(tmp_path, small_canvas):
    samples = [synth_generate(get_style(name), 1., seed=i, image_size=64) for i, name in enumerate(["rap", "opera"])]
    manifest = save_dataset(str(tmp_path), samples)
    loaded = list(load_dataset(manifest))
    assert [s.style.name for s in loaded] == ["rap", "opera"]
    for original, sample in zip(samples, loaded):
        assert np.array_equal(original.landmarks.points, sample.landmarks.points)
        assert np.max(np.abs(original.audio.samples - sample.audio.samples)) <= 1. / 32767
        assert np.allclose(original.poses, sample.poses, atol=1e-5)
        assert all(np.array_equal(a, b) for a, b in zip(original.frames, sample.frames))


def test_empty_manifest(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("[]")
    assert list(load_dataset(str(path))) == []


def test_dataset_errors(tmp_path):
    manifest = save_dataset(str(tmp_path), [synth_generate(get_style("ballad"), 1., seed=0, render=False)])
    os.remove(os.path.join(str(tmp_path), "sample_000.wav"))
    with pytest.raises(DatasetIOError) as info:
        list(load_dataset(manifest))
    assert "sample_000.wav" in str(info.value)

    with pytest.raises(DatasetIOError):
        load_dataset(str(tmp_path / "nothing.json"))

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"audio": "a.wav"}))
    with pytest.raises(DatasetValidationError):
        list(load_dataset(str(bad)))
    bad.write_text(json.dumps([{"audio": "a.wav"}]))
    with pytest.raises(DatasetValidationError):
        list(load_dataset(str(bad)))


def test_frame_count_mismatch(tmp_path, small_canvas):
    manifest = save_dataset(str(tmp_path), [synth_generate(get_style("ballad"), 1., seed=0, image_size=64)])
    os.remove(os.path.join(str(tmp_path), "sample_000_frames", "00059.png"))
    with pytest.raises(DatasetValidationError):
        list(load_dataset(manifest))
