import json
import logging

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from stylehead import LandmarkSequence, InvalidArgumentError
from stylehead.metrics import (metric_dl, metric_dv, metric_da, metric_lmd, metric_cpbd, face_diagonal, shoelace_area,
                               WindowSpec, style_metric, style_metric_naive, style_metric_grid, sld, slv, smd,
                               get_core, MetricReport, evaluate_sequences)

from conftest import compare, random_sequence


def box_window(frames=1):
    '''
    frames of a face whose bounding box is 300 x 400 (diagonal 500)
    '''
    points = np.zeros((frames, 68, 3))
    points[:, 0, :2] = (0., 0.)
    points[:, 16, :2] = (300., 400.)
    points[:, 1:16, :2] = 150.
    points[:, 17:, :2] = 150.
    return points


def mouth_window(open_square: bool):
    points = box_window()
    square = [(0., 0.), (5., 0.), (10., 0.), (10., 5.), (10., 10.), (5., 10.), (0., 10.), (0., 5.)]
    inner = np.array(square) + 100.
    if not open_square:
        inner[:, 1] = 100.
    points[0, 60:68, :2] = inner
    return points


def test_metric_dl_shift():
    a = box_window()
    b = a.copy()
    b[..., :2] += (3., 4.)
    assert face_diagonal(a) == 500.
    compare("D-L", 1., metric_dl(a, b))
    assert metric_dl(a, a) == 0.


def test_metric_dv_constant_motion():
    a = box_window(5)
    b = a.copy()
    b[..., 0] += np.arange(5)[:, None]
    compare("D-V", 0.2, metric_dv(a, b))
    compare("D-L diagonal override", 2., metric_dl(a, a + np.array([2., 0., 0.]), 100.))
    with pytest.raises(InvalidArgumentError):
        metric_dv(a[:1], b[:1])


def test_metric_da_square():
    closed, opened = mouth_window(False), mouth_window(True)
    compare("square area", 100., shoelace_area(opened[0, 60:68, :2]))
    compare("D-A", 0.04, metric_da(closed, opened, 250000.))
    # every inner-lip point of box_window sits at (150, 150)
    flat = box_window(6)
    compare("collapsed D-A", 0., metric_da(flat, flat, 1.))
    compare("collapsed vs open", 0.04, metric_da(flat[:1], opened, 250000.))
    compare("collapsed mouth-area metric", 0., style_metric(flat, flat, WindowSpec(2, 1), "mouth-area"))


def test_metric_lmd_mouth_only():
    a = box_window()
    b = a.copy()
    b[:, 48:68, 1] += 1.
    compare("LMD", 1., metric_lmd(a, b))
    c = a.copy()
    c[:, :48, 0] += 7.
    assert metric_lmd(a, c) == 0.


def test_synchronized_argument_checks():
    with pytest.raises(InvalidArgumentError):
        metric_dl(box_window(2), box_window(3))
    with pytest.raises(InvalidArgumentError):
        metric_dl(np.zeros((0, 68, 3)), np.zeros((0, 68, 3)))
    with pytest.raises(InvalidArgumentError):
        metric_dl(np.zeros((2, 67, 3)), np.zeros((2, 67, 3)))
    with pytest.raises(InvalidArgumentError):
        metric_dl(np.zeros((1, 68, 3)), np.zeros((1, 68, 3)))


def test_window_spec():
    spec = WindowSpec(5, 2)
    assert spec.kappa(12) == 3
    assert list(spec.starts(12)) == [0, 2, 4, 6]
    with pytest.raises(InvalidArgumentError):
        WindowSpec(0, 1)
    with pytest.raises(InvalidArgumentError):
        spec.starts(4)


@pytest.mark.parametrize("core", ["D-L", "D-V", "LMD", "mouth-area"])
def test_style_metric_matches_naive(core):
    reference = LandmarkSequence(random_sequence(12, seed=1))
    generated = LandmarkSequence(random_sequence(15, seed=2))
    for F in range(1, 7):
        if not get_core(core).feasible(F):
            continue
        for v in range(1, 4):
            spec = WindowSpec(F, v)
            compare("{} F={} v={}".format(core, F, v), style_metric_naive(reference, generated, spec, core),
                    style_metric(reference, generated, spec, core))


def test_style_metric_matches_naive_random_pairs():
    rng = np.random.default_rng(11)
    cores = ["D-L", "D-V", "LMD"]
    for pair in range(50):
        core = cores[pair % 3]
        n_ref, n_gen = (int(n) for n in rng.integers(20, 241, size=2))
        F = int(rng.integers(2 if core == "D-V" else 1, 21))
        v = int(rng.integers(1, 6))
        reference = random_sequence(n_ref, seed=100 + 2 * pair)
        generated = random_sequence(n_gen, seed=101 + 2 * pair)
        spec = WindowSpec(F, v)
        compare("pair {} {} N=({}, {}) F={} v={}".format(pair, core, n_ref, n_gen, F, v),
                style_metric_naive(reference, generated, spec, core), style_metric(reference, generated, spec, core))


def test_style_metric_time_shift():
    '''
    every reference window appears somewhere in the generated sequence
    '''
    sequence = random_sequence(30, seed=3)
    reference, generated = sequence[5:25], sequence
    for spec in (WindowSpec(5, 1), WindowSpec(3, 2)):
        compare("SLD", 0., sld(reference, generated, spec))
        compare("SLV", 0., slv(reference, generated, spec))
        compare("SMD", 0., smd(reference, generated, spec))
    assert sld(sequence, sequence[::-1].copy(), WindowSpec(4, 1)) > 0.


def test_style_metric_grid():
    sequence = random_sequence(10, seed=4)
    mean, grid = style_metric_grid(sequence, sequence + 1., F_set=[1, 2, 3], v_set=[1, 2], core="D-V", workers=2)
    assert sorted(grid) == [(2, 1), (2, 2), (3, 1), (3, 2)]
    compare("translated velocities", 0., mean)
    mean, grid = style_metric_grid(sequence, sequence, F_set=[1, 2], v_set=[1], core="D-L", workers=1)
    assert len(grid) == 2 and mean == 0.
    with pytest.raises(InvalidArgumentError):
        style_metric_grid(sequence, sequence, F_set=[50], v_set=[1])
    with pytest.raises(InvalidArgumentError):
        get_core("D-X")


def test_cpbd_sharp_and_blurred():
    step = np.zeros((64, 64))
    step[:, 32:] = 255.
    sharp = metric_cpbd(step.astype(np.uint8))
    blurred = metric_cpbd(np.clip(gaussian_filter(step, sigma=3.), 0, 255).astype(np.uint8))
    assert sharp == 1.
    assert blurred < sharp
    rgb = np.repeat(step[..., None] / 255., 3, axis=2)
    assert 0. <= metric_cpbd(rgb) <= 1.


def striped_image(seed, size=64):
    '''
    vertical bands 12 pixels wide with gray levels at least 90 apart
    '''
    rng = np.random.default_rng(seed)
    boundaries = np.arange(8, 57, 12) + rng.integers(0, 6)
    levels = [int(rng.choice([30, 120, 210]))]
    for _ in boundaries:
        levels.append(int(rng.choice([v for v in (30, 120, 210) if v != levels[-1]])))
    row = np.full(size, float(levels[0]))
    for b, level in zip(boundaries, levels[1:]):
        row[b:] = level
    return np.tile(row, (size, 1))


def test_cpbd_blur_ladder():
    for seed in range(20):
        image = striped_image(seed)
        scores = [metric_cpbd(np.clip(gaussian_filter(image, sigma=s), 0, 255).astype(np.uint8) if s else
                              image.astype(np.uint8)) for s in (0., 1., 2., 3.)]
        assert all(a >= b for a, b in zip(scores[:-1], scores[1:])), "image {}: {}".format(seed, scores)
        assert scores[0] > scores[-1], "image {}: {}".format(seed, scores)


def test_cpbd_uniform(caplog):
    with caplog.at_level(logging.WARNING):
        assert metric_cpbd(np.full((32, 32), 128, dtype=np.uint8)) == 0.
    assert "no edges" in caplog.text
    with pytest.raises(InvalidArgumentError):
        metric_cpbd(np.zeros((2, 2)))
    with pytest.raises(InvalidArgumentError):
        metric_cpbd(np.array([["a", "b"], ["c", "d"]]))


def test_evaluate_identical_sequences(tmp_path):
    sequence = random_sequence(12, seed=5)
    report = evaluate_sequences(sequence, sequence, F_set=[2, 4], v_set=[1, 2], workers=1)
    assert report.cpbd is None
    for name in ("lmd", "d_l", "d_v", "d_a", "sld", "slv", "smd"):
        assert getattr(report, name) == 0.
    path = str(tmp_path / "report.json")
    report.to_json(path)
    with open(path) as f:
        loaded = json.load(f)
    assert loaded["cpbd"] is None
    assert [cell["F"] for cell in loaded["sld_grid"]] == [2, 2, 4, 4]


def test_evaluate_with_frames():
    sequence = random_sequence(6, seed=6)
    frames = [np.full((16, 16, 3), 90, dtype=np.uint8)] * 2
    report = evaluate_sequences(sequence, sequence + 2., frames=frames, F_set=[2], v_set=[1], workers=1)
    assert report.cpbd == 0.
    assert report.d_l > 0. and report.slv == pytest.approx(0., abs=1e-9)
    with pytest.raises(InvalidArgumentError):
        evaluate_sequences(sequence[:1], sequence[:1])


def test_metric_report_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        MetricReport(None, -1., 0., 0., 0., 0., 0., 0., {})
    with pytest.raises(InvalidArgumentError):
        MetricReport(None, float("nan"), 0., 0., 0., 0., 0., 0., {})
