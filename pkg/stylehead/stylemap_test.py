import numpy as np
import pytest
import torch

from stylehead import (MotionTemplate, StyleReferenceSet, ISPSet, StyleMapper, KeypointSet, PoseParams,
                       LandmarkSequence, InvalidArgumentError, SingularWarpError)
from stylehead.errors import DatasetValidationError
from stylehead.stylemap import (default_templates, select_style_references, disentangle, warp_features, build_isp,
                                save_templates, load_templates, orthonormalize, tps_grid, train_stylemap_step,
                                keypoint_ground_truth, TEMPLATE_NAMES)
from stylehead.face_model import canonical_face, deform_face, pose_to_image, KEYPOINT_INDICES
from stylehead.geometry import recompose
from stylehead.tensor_util import image2tensor

from conftest import compare, random_landmarks


def tiny_mapper():
    return StyleMapper(15, 64, encoder_channels=(4, 4, 8, 8), generator_channels=(4, 4, 8, 8))


def random_image(seed, size=64):
    return np.random.default_rng(seed).integers(0, 256, size=(size, size, 3), dtype=np.uint8)


def test_default_templates():
    templates = default_templates()
    assert [t.name for t in templates] == list(TEMPLATE_NAMES)
    with pytest.raises(InvalidArgumentError):
        MotionTemplate("smile", canonical_face())


def test_template_file_round_trip(tmp_path):
    path = str(tmp_path / "templates.json")
    save_templates(path, default_templates())
    loaded = load_templates(path)
    for a, b in zip(default_templates(), loaded):
        assert a.name == b.name
        assert np.array_equal(a.landmark_pattern.points, b.landmark_pattern.points)
    save_templates(path, default_templates()[:3])
    with pytest.raises(DatasetValidationError):
        load_templates(path)


def test_select_style_references_exact_frames():
    '''
    each template pattern is planted (shifted) at one frame; the centroid-aligned search finds it
    '''
    templates = default_templates()
    frames = [random_landmarks(t, mouth_open=0.4, eye_open=0.7, yaw_deg=8.) for t in range(24)]
    planted = {3: 0, 9: 1, 14: 2, 20: 3}
    for frame, template in planted.items():
        frames[frame] = templates[template].landmark_pattern.points + np.array([4., -6., 0.])
    images = [np.full((8, 8, 3), t, dtype=np.uint8) for t in range(24)]
    refs = select_style_references(LandmarkSequence(np.stack(frames)), templates, images)
    assert refs.source_indices == [3, 9, 14, 20]
    assert [int(f[0, 0, 0]) for f in refs.frames] == [3, 9, 14, 20]


def test_select_style_references_ties_and_bounds():
    templates = default_templates()
    same = np.stack([random_landmarks(0)] * 6)
    assert select_style_references(same, templates).source_indices == [0, 0, 0, 0]
    with pytest.raises(InvalidArgumentError):
        select_style_references(same[:3], templates)
    with pytest.raises(InvalidArgumentError):
        select_style_references(same, templates[:3])


def test_style_reference_set_permuted():
    refs = StyleReferenceSet(None, [5, 6, 7, 8], [random_landmarks(i) for i in range(4)])
    moved = refs.permuted([3, 2, 1, 0])
    assert moved.source_indices == [8, 7, 6, 5]
    assert len(moved) == 4
    with pytest.raises(InvalidArgumentError):
        StyleReferenceSet(None, [1, 2, 3], [random_landmarks(i) for i in range(3)])


def test_isp_set():
    isps = ISPSet([random_image(i, 16) for i in range(4)])
    assert isps.stacked().shape == (12, 16, 16)
    with pytest.raises(InvalidArgumentError):
        ISPSet([random_image(0, 16)])


def test_orthonormalize():
    m = torch.as_tensor(np.random.default_rng(1).normal(size=(5, 3, 3)))
    r = orthonormalize(m)
    compare("R^T R", np.tile(np.eye(3), (5, 1, 1)), r.transpose(1, 2) @ r)
    compare("det", np.ones(5), torch.linalg.det(r))


def test_tps_identity():
    rng = np.random.default_rng(2)
    feature = torch.as_tensor(rng.normal(size=(3, 16, 16)))
    points = rng.uniform(1., 14., size=(6, 2))
    compare("identity warp", feature, warp_features(feature, points, points), 1e-8)


def test_tps_translation():
    '''
    content at src moves to dst: a ramp f(x) = x comes out as x - 2
    '''
    xs = np.arange(16.)
    feature = torch.as_tensor(np.tile(xs, (1, 16, 1)))
    src = np.array([[2., 2.], [10., 3.], [5., 12.], [12., 12.], [7., 7.]])
    out = warp_features(feature, src, src + np.array([2., 0.]))
    compare("shifted ramp", np.tile(xs[2:] - 2., (16, 1)), out[0, :, 2:], 1e-8)
    compare("border", np.zeros(16), out[0, :, 0], 1e-8)


def test_tps_grid_interpolates():
    rng = np.random.default_rng(3)
    src = torch.as_tensor(rng.uniform(0., 15., size=(1, 7, 2)))
    dst = torch.as_tensor(np.array([[[1., 1.], [14., 2.], [3., 13.], [12., 12.], [7., 5.], [4., 8.], [10., 9.]]]))
    grid = tps_grid(src, dst, 16, 16)
    # the grid at each integer dst pixel samples the matching src point
    for k in range(7):
        x, y = dst[0, k].long().tolist()
        compare("knot {}".format(k), src[0, k] * (2. / 15.) - 1., grid[0, y, x], 1e-8)


def test_tps_singular():
    feature = torch.zeros(1, 8, 8, dtype=torch.float64)
    collinear = np.array([[0., 0.], [1., 1.], [2., 2.], [3., 3.], [5., 5.]])
    with pytest.raises(SingularWarpError):
        warp_features(feature, collinear, collinear + 1.)
    duplicated = np.array([[0., 0.], [1., 4.], [1., 4.], [6., 2.]])
    with pytest.raises(SingularWarpError):
        warp_features(feature, duplicated, duplicated)
    with pytest.raises(SingularWarpError):
        warp_features(feature, duplicated[:3], duplicated[:3])


def test_disentangle_shapes(small_canvas):
    mapper = tiny_mapper()
    c, pose = disentangle(random_image(4), mapper.extractor, mapper.pose_net)
    assert isinstance(c, KeypointSet) and isinstance(pose, PoseParams)
    assert c.points.shape == (15, 3)
    compare("rotation", np.eye(3), pose.rotation.T @ pose.rotation)
    with pytest.raises(InvalidArgumentError):
        disentangle(random_image(4, 32), mapper.extractor, mapper.pose_net)


def test_build_isp(small_canvas):
    mapper = tiny_mapper()
    neutral = random_image(5)
    refs = StyleReferenceSet([random_image(6 + i) for i in range(4)], [0, 1, 2, 3],
                             [random_landmarks(i) for i in range(4)])
    isps = build_isp(neutral, disentangle(neutral, mapper.extractor, mapper.pose_net), refs, mapper)
    assert len(isps) == 4
    assert all(image.shape == (64, 64, 3) and image.dtype == np.uint8 for image in isps.images)
    with pytest.raises(InvalidArgumentError):
        build_isp(neutral, disentangle(neutral, mapper.extractor, mapper.pose_net),
                  StyleReferenceSet(None, [0, 1, 2, 3], refs.landmarks), mapper)


def test_keypoint_ground_truth_recomposes(small_canvas):
    face = deform_face(canonical_face(), 0.6, 1.)
    rotvec = np.array([0., 0.2, 0.])
    trans = np.array([2., -1., 0.])
    image = pose_to_image(face, rotvec, trans)
    gt = keypoint_ground_truth(face, image, rotvec, trans)
    compare("recompose", image[KEYPOINT_INDICES],
            recompose(gt["c"], gt["rotation"], gt["translation"], gt["expression"]))


def test_train_stylemap_step(small_canvas):
    mapper = tiny_mapper()
    optimizer = torch.optim.Adam([p for p in mapper.parameters()], lr=1e-3)
    face = canonical_face()
    zero = np.zeros(3)
    gt = keypoint_ground_truth(face, pose_to_image(face, zero, zero), zero, zero)
    batch = {
        "neutral": image2tensor(random_image(7))[None],
        "reference": image2tensor(random_image(8))[None],
        "target": image2tensor(random_image(8))[None],
        "c": torch.as_tensor(gt["c"])[None],
        "rotation": torch.as_tensor(gt["rotation"])[None],
        "translation": torch.as_tensor(gt["translation"])[None],
        "expression": torch.as_tensor(gt["expression"])[None],
        "neutral_rotation": torch.as_tensor(gt["rotation"])[None],
        "neutral_translation": torch.as_tensor(gt["translation"])[None],
        "neutral_expression": torch.as_tensor(gt["expression"])[None],
    }
    terms = train_stylemap_step(mapper, batch, optimizer)
    assert set(terms) == {"image", "keypoints", "pose", "expression", "total"}
    assert np.isfinite(terms["total"])
    compare("total", sum(v for k, v in terms.items() if k != "total"), terms["total"], 1e-9)
