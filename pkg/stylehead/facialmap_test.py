import numpy as np
import pytest

from stylehead import FacialMap, WeightMask, EmptyMapError, DegenerateRegionError, InvalidArgumentError
from stylehead.errors import DatasetValidationError
from stylehead.facialmap import (rasterize_facial_map, build_weight_mask, orthographic_camera, project_points,
                                 group_segments, polygon_area, save_facial_map, load_facial_map, save_weight_mask,
                                 load_weight_mask, MOUTH_WEIGHT, EYE_WEIGHT)

from conftest import random_landmarks


def flat_face(size=64):
    '''
    every landmark on one pixel except a horizontal jaw from (10, 20) to (26, 20)
    '''
    points = np.full((68, 3), 40.)
    points[0:17, 0] = np.arange(10., 27.)
    points[0:17, 1] = 20.
    return points


def test_group_segments():
    segments = group_segments()
    # 9 groups, 68 points, 4 closed loops
    assert len(segments) == 68 - 9 + 4
    assert (59, 48) in segments and (16, 17) not in segments


def test_rasterize_draws_lines(small_canvas):
    m = rasterize_facial_map(flat_face())
    assert m.image.shape == (64, 64)
    assert np.all(m.image[20, 10:27] == 1)
    assert m.image[40, 40] == 1
    assert m.lit_pixels == 17 + 1


def test_rasterize_clips(small_canvas):
    points = flat_face()
    points[0:17, 0] = np.arange(50., 84., 2.)
    m = rasterize_facial_map(points)
    assert np.all(m.image[20, 50:] == 1)
    assert m.lit_pixels == 14 + 1


def test_rasterize_behind_camera(small_canvas):
    camera = orthographic_camera()
    camera[2, 3] = -1.
    with pytest.raises(EmptyMapError):
        rasterize_facial_map(flat_face(), camera)


def test_camera_shift_and_validation(small_canvas):
    uv, visible = project_points(np.array([[1., 2., 3.]]), orthographic_camera(shift=(5., -1.)))
    assert visible.all()
    assert np.allclose(uv, [[6., 1.]])
    with pytest.raises(InvalidArgumentError):
        project_points(np.zeros((1, 3)), np.zeros((3, 4)))
    with pytest.raises(InvalidArgumentError):
        project_points(np.zeros((1, 3)), np.eye(3))


def test_facial_map_values():
    with pytest.raises(InvalidArgumentError):
        FacialMap(np.full((4, 4), 2))
    assert FacialMap(np.eye(4)).as_tensor().shape == (3, 4, 4)
    assert float(FacialMap(np.zeros((4, 4))).as_tensor().max()) == -1.


def test_weight_mask_regions():
    lm = random_landmarks(0, mouth_open=0.6)
    mask = build_weight_mask(lm)
    assert set(np.unique(mask.weights)) == {0., 1., 3., 5.}
    mouth = lm[48:60, :2].mean(axis=0)
    eye = lm[36:42, :2].mean(axis=0)
    assert mask.weights[int(round(mouth[1])), int(round(mouth[0]))] == MOUTH_WEIGHT
    assert mask.weights[int(round(eye[1])), int(round(eye[0]))] == EYE_WEIGHT
    assert mask.weights[0, 0] == 0.


def test_weight_mask_degenerate():
    with pytest.raises(DegenerateRegionError):
        build_weight_mask(np.zeros((68, 3)))
    lm = random_landmarks(1, mouth_open=0.6)
    lm[[49, 57]] = lm[[57, 49]]
    with pytest.raises(DegenerateRegionError):
        build_weight_mask(lm)
    with pytest.raises(InvalidArgumentError):
        WeightMask(np.full((4, 4), 2.))


def test_polygon_area():
    assert polygon_area(np.array([[0., 0.], [10., 0.], [10., 10.], [0., 10.]])) == 100.


def test_png_round_trip(tmp_path, small_canvas):
    m = rasterize_facial_map(flat_face())
    save_facial_map(str(tmp_path / "map.png"), m)
    assert np.array_equal(load_facial_map(str(tmp_path / "map.png")).image, m.image)

    weights = np.zeros((8, 8))
    weights[2:4, 2:4] = 5.
    weights[5, 5] = 3.
    weights[6, :] = 1.
    save_weight_mask(str(tmp_path / "mask.png"), WeightMask(weights))
    assert np.array_equal(load_weight_mask(str(tmp_path / "mask.png")).weights, weights)

    save_facial_map(str(tmp_path / "bad.png"), m)
    with pytest.raises(DatasetValidationError):
        load_weight_mask(str(tmp_path / "bad.png"))
