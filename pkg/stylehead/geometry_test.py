import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from stylehead import Landmarks68, KeypointSet, PoseParams, HeadPose, LandmarkSequence, InvalidArgumentError
from stylehead.errors import DatasetIOError, DatasetValidationError
from stylehead.geometry import (rotvec_to_matrix, rotvec_to_matrix_torch, recompose, recompose_keypoints,
                                vectorize_landmarks, unvectorize_landmarks, canonical_rotvec,
                                save_landmark_sequence, load_landmark_sequence)
from stylehead.face_model import (canonical_face, deform_face, pose_to_image, estimate_head_pose, me_indices,
                                  KEYPOINT_INDICES)

from conftest import compare, random_landmarks


def test_rotvec_zero():
    compare("zero rotation", np.eye(3), rotvec_to_matrix(np.zeros(3)))


def test_rotvec_quarter_turn_z():
    '''
    row-vector convention: x -> y
    '''
    expected = np.array([[0., 1., 0.], [-1., 0., 0.], [0., 0., 1.]])
    compare("rot_z(90)", expected, rotvec_to_matrix(np.array([0., 0., np.pi / 2])))


def test_rotvec_orthonormal():
    rng = np.random.default_rng(1)
    for _ in range(20):
        R = rotvec_to_matrix(rng.normal(size=3))
        compare("R^T R", np.eye(3), R.T @ R)
        assert abs(np.linalg.det(R) - 1.) < 1e-9


def test_rotvec_torch_matches_numpy():
    rng = np.random.default_rng(2)
    rotvecs = np.concatenate([rng.normal(size=(10, 3)), np.zeros((1, 3)), 1e-6 * np.ones((1, 3))])
    expected = np.stack([rotvec_to_matrix(r) for r in rotvecs])
    compare("torch rodrigues", expected, rotvec_to_matrix_torch(torch.as_tensor(rotvecs)))


def test_rotvec_invalid():
    with pytest.raises(InvalidArgumentError):
        rotvec_to_matrix(np.array([np.nan, 0., 0.]))
    with pytest.raises(InvalidArgumentError):
        rotvec_to_matrix(np.zeros(4))


def test_canonical_rotvec():
    r = canonical_rotvec(np.array([0., 0., 2 * np.pi - 0.1]))
    assert np.linalg.norm(r) <= np.pi
    compare("same rotation", rotvec_to_matrix(np.array([0., 0., 2 * np.pi - 0.1])), rotvec_to_matrix(r))


def test_head_pose_norm_bound():
    with pytest.raises(InvalidArgumentError):
        HeadPose(np.array([7., 0., 0.]), np.zeros(3))
    pose = HeadPose.from_vector(np.array([7., 0., 0., 1., 2., 3.]))
    assert np.linalg.norm(pose.rotvec) < 2 * np.pi


def test_recompose_identity():
    rng = np.random.default_rng(3)
    c = KeypointSet(rng.normal(size=(15, 3)))
    out = recompose_keypoints(c, PoseParams.identity(15))
    assert np.array_equal(out.points, c.points)


def test_recompose_rotation_translation():
    c = np.array([[1., 0., 0.]])
    R = rotvec_to_matrix(np.array([0., 0., np.pi / 2]))
    out = recompose(c, R, np.array([0., 0., 1.]), np.zeros((1, 3)))
    compare("rotated keypoint", np.array([[0., 1., 1.]]), out)


def test_recompose_oracle():
    '''
    elementwise recomputation of c x R + tau + eps
    '''
    rng = np.random.default_rng(4)
    c = rng.normal(size=(15, 3))
    R = Rotation.random(random_state=5).as_matrix()
    tau = rng.normal(size=3)
    eps = rng.normal(size=(15, 3))
    expected = np.zeros((15, 3))
    for k in range(15):
        for j in range(3):
            expected[k, j] = sum(c[k, i] * R[i, j] for i in range(3)) + tau[j] + eps[k, j]
    out = recompose_keypoints(KeypointSet(c), PoseParams(R, tau, eps))
    compare("recompose oracle", expected, out.points)


def test_recompose_affine_in_c():
    rng = np.random.default_rng(6)
    c1, c2 = rng.normal(size=(15, 3)), rng.normal(size=(15, 3))
    R = Rotation.random(random_state=7).as_matrix()
    tau = rng.normal(size=3)
    zero = np.zeros((15, 3))
    alpha = 0.3
    left = recompose(alpha * c1 + (1 - alpha) * c2, R, tau, zero)
    right = alpha * recompose(c1, R, tau, zero) + (1 - alpha) * recompose(c2, R, tau, zero)
    compare("affine", left, right)


def test_recompose_mismatch():
    c = KeypointSet(np.zeros((15, 3)) + np.arange(15)[:, None])
    with pytest.raises(InvalidArgumentError):
        recompose_keypoints(c, PoseParams.identity(10))


def test_pose_params_rejects_non_rotation():
    with pytest.raises(InvalidArgumentError):
        PoseParams(2 * np.eye(3), np.zeros(3), np.zeros((15, 3)))


def test_keypoints_need_four():
    with pytest.raises(InvalidArgumentError):
        KeypointSet(np.zeros((3, 3)))


def test_vectorize_layout():
    assert np.array_equal(vectorize_landmarks(Landmarks68(np.zeros((68, 3)))), np.zeros(204))
    points = np.zeros((68, 3))
    points[0] = (1., 2., 3.)
    compare("layout", np.array([1., 2., 3., 0.]), vectorize_landmarks(Landmarks68(points))[:4], 0.)


def test_vectorize_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = rng.normal(size=(68, 3))
        assert np.array_equal(unvectorize_landmarks(vectorize_landmarks(Landmarks68(x))).points, x)


def test_landmarks_invalid():
    with pytest.raises(InvalidArgumentError):
        Landmarks68(np.zeros((67, 3)))
    bad = np.zeros((68, 3))
    bad[5, 1] = np.inf
    with pytest.raises(InvalidArgumentError):
        Landmarks68(bad)


def test_landmark_file_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    sequence = LandmarkSequence(rng.normal(size=(5, 68, 3)) * 100.)
    path = str(tmp_path / "seq.jsonl")
    save_landmark_sequence(path, sequence)
    loaded = load_landmark_sequence(path)
    assert np.array_equal(loaded.points, sequence.points)


def test_landmark_file_errors(tmp_path):
    with pytest.raises(DatasetIOError) as info:
        load_landmark_sequence(str(tmp_path / "missing.jsonl"))
    assert "missing.jsonl" in str(info.value)

    path = tmp_path / "gap.jsonl"
    path.write_text('{"frame": 1, "points": ' + str(np.zeros((68, 3)).tolist()) + '}\n')
    with pytest.raises(DatasetValidationError):
        load_landmark_sequence(str(path))


def test_canonical_face_layout():
    face = canonical_face()
    assert face.shape == (68, 3)
    # the chin is below the nose tip, the eyes above it (y grows downwards)
    assert face[8, 1] > face[30, 1] > face[36, 1]
    assert len(me_indices(25)) == 25 and len(me_indices(41)) == 41
    assert len(KEYPOINT_INDICES) == 15


def test_deform_face_opens_mouth():
    closed = deform_face(canonical_face(), 0., 1.)
    opened = deform_face(canonical_face(), 1., 1.)
    assert opened[66, 1] - opened[62, 1] > closed[66, 1] - closed[62, 1]


def test_estimate_head_pose_recovers_pose():
    face = deform_face(canonical_face(), 0.7, 0.8)
    rotvec = np.array([0.05, 0.2, -0.03])
    trans = np.array([5., -3., 0.])
    pose, obj = estimate_head_pose(pose_to_image(face, rotvec, trans))
    compare("rotation", rotvec, pose.rotvec, 1e-9)
    compare("translation", trans, pose.trans, 1e-7)
    compare("object landmarks", face, obj, 1e-9)


def test_pose_to_image_torch_matches_numpy():
    face = canonical_face()
    rotvec = np.array([0.1, -0.2, 0.05])
    trans = np.array([3., 4., 0.])
    expected = pose_to_image(face, rotvec, trans)
    actual = pose_to_image(torch.as_tensor(face), torch.as_tensor(rotvec), torch.as_tensor(trans))
    compare("pose_to_image", expected, actual)


def test_random_landmarks_helper_is_valid():
    Landmarks68(random_landmarks(0))
