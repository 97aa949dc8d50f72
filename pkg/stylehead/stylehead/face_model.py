'''
The rest face of the target character and how it moves.

Object coordinates are face units (the jaw spans about [-1, 1] in x), with y
pointing down like image rows. pose_to_image places object landmarks in the
pixel space of the canvas: x_img = scale * x_obj x R + center + trans.
'''
from __future__ import annotations
from typing import Tuple

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .config import Config
from .errors import InvalidArgumentError
from .geometry import HeadPose, NUM_LANDMARKS, canonical_rotvec, rotvec_to_matrix, rotvec_to_matrix_torch

# pixels per face unit on a 512 canvas
FACE_SCALE = 140.

# mouth and eye vertices driven by the mouth/eye network
# 25: lips (48-67), chin (8) and the upper eyelids (37, 38, 43, 44)
ME_INDICES_25 = list(range(48, 68)) + [8, 37, 38, 43, 44]
# 41: lips, both eye contours and the lower jaw (4-12)
ME_INDICES_41 = list(range(48, 68)) + list(range(36, 48)) + list(range(4, 13))

# the K = 15 keypoints carrying the geometry signature
KEYPOINT_INDICES = [0, 4, 8, 12, 16, 19, 24, 30, 36, 39, 42, 45, 48, 54, 57]

# points that neither the mouth nor the eyelids move, used to recover head pose
STABLE_INDICES = [0, 1, 2, 14, 15, 16] + list(range(17, 36)) + [36, 39, 42, 45]

_EYE_HALF_HEIGHT = 0.06
_INNER_LIP_REST = 0.012


def me_indices(k_me: int) -> list:
    if k_me == 25:
        return list(ME_INDICES_25)
    if k_me == 41:
        return list(ME_INDICES_41)
    raise InvalidArgumentError("K_me must be 25 or 41, got {}".format(k_me))


def canonical_face() -> np.ndarray:
    '''
    the 68 x 3 rest face in object coordinates.
    '''
    face = np.zeros((NUM_LANDMARKS, 3))

    # jaw, from the right ear down over the chin to the left ear
    theta = np.pi * np.arange(17) / 16
    face[0:17, 0] = -0.95 * np.cos(theta)
    face[0:17, 1] = -0.05 + 1.15 * np.sin(theta)
    face[0:17, 2] = -0.45 * np.cos(theta) ** 2

    # brows
    k = np.arange(5)
    face[17:22, 0] = np.linspace(-0.75, -0.15, 5)
    face[17:22, 1] = -0.45 - 0.08 * np.sin(np.pi * k / 4)
    face[22:27, 0] = np.linspace(0.15, 0.75, 5)
    face[22:27, 1] = -0.45 - 0.08 * np.sin(np.pi * k / 4)
    face[17:27, 2] = 0.1

    # nose
    face[27:31, 0] = 0.
    face[27:31, 1] = np.linspace(-0.3, 0.15, 4)
    face[27:31, 2] = np.linspace(0.12, 0.35, 4)
    face[31:36, 0] = np.linspace(-0.18, 0.18, 5)
    face[31:36, 1] = 0.25 + 0.03 * np.sin(np.pi * k / 4)
    face[31:36, 2] = 0.22

    # eyes: outer corner, two upper lid points, inner corner, two lower lid points
    for start, cx in ((36, -0.4), (42, 0.4)):
        xs = cx + np.array([-0.15, -0.05, 0.05, 0.15, 0.05, -0.05])
        ys = -0.2 + np.array([0., -1., -1., 0., 1., 1.]) * _EYE_HALF_HEIGHT
        face[start:start + 6, 0] = xs
        face[start:start + 6, 1] = ys
        face[start:start + 6, 2] = 0.1

    # lips: corners at 48/54 (outer) and 60/64 (inner), walking over the upper lip first
    a = np.pi - np.arange(12) * np.pi / 6
    face[48:60, 0] = 0.32 * np.cos(a)
    face[48:60, 1] = 0.55 - 0.12 * np.sin(a)
    face[48:60, 2] = 0.25
    a = np.pi - np.arange(8) * np.pi / 4
    face[60:68, 0] = 0.22 * np.cos(a)
    face[60:68, 1] = 0.55 - _INNER_LIP_REST * np.sin(a)
    face[60:68, 2] = 0.25
    return face


def deform_face(face: np.ndarray, mouth_open: float, eye_open: float) -> np.ndarray:
    '''
    open the mouth (0 = closed) and the eyes (1 = rest, 0 = closed) of an object-space face.
    '''
    face = np.array(face, dtype=np.float64, copy=True)
    mouth_open = float(mouth_open)
    eye_open = float(np.clip(eye_open, 0., 1.5))

    # lower lips and chin drop, the upper inner lip lifts slightly
    drop = 0.25 * mouth_open
    face[55:60, 1] += drop
    face[65:68, 1] += drop
    face[[54, 48, 60, 64], 1] += 0.5 * drop
    face[61:64, 1] -= 0.1 * drop
    jaw_weight = np.sin(np.pi * (np.arange(5, 12) - 4) / 8)
    face[5:12, 1] += 0.8 * drop * jaw_weight

    # upper lids move towards the lower lids
    for upper in ((37, 38), (43, 44)):
        face[list(upper), 1] = -0.2 - _EYE_HALF_HEIGHT * (2. * eye_open - 1.)
    return face


def pose_to_image(obj, rotvec, trans, scale: float = None, center=None):
    '''
    place object landmarks (... x 68 x 3) into canvas pixels under head pose (rotvec, trans).
    Works on numpy arrays and on tensors (differentiably).
    '''
    if scale is None:
        scale = FACE_SCALE * Config.image_size / 512.
    if center is None:
        center = (Config.image_size / 2., Config.image_size / 2., 0.)
    if isinstance(obj, torch.Tensor):
        rotvec = torch.as_tensor(rotvec, dtype=obj.dtype, device=obj.device)
        trans = torch.as_tensor(trans, dtype=obj.dtype, device=obj.device)
        center = torch.as_tensor(center, dtype=obj.dtype, device=obj.device)
        R = rotvec_to_matrix_torch(rotvec)
        return scale * obj @ R + (center + trans)[..., None, :]
    R = rotvec_to_matrix(np.asarray(rotvec, dtype=np.float64))
    return scale * np.asarray(obj) @ R + (np.asarray(center) + np.asarray(trans))[None, :]


def estimate_head_pose(landmarks, rest: np.ndarray = None, scale: float = None,
                       center=None) -> Tuple[HeadPose, np.ndarray]:
    '''
    recover the head pose of image-space landmarks by aligning their stable points
    with the rest face, and return it with the landmarks mapped back to object space.
    '''
    if rest is None:
        rest = canonical_face()
    if scale is None:
        scale = FACE_SCALE * Config.image_size / 512.
    if center is None:
        center = np.array([Config.image_size / 2., Config.image_size / 2., 0.])
    landmarks = np.asarray(landmarks, dtype=np.float64)

    image_pts = landmarks[STABLE_INDICES]
    object_pts = scale * rest[STABLE_INDICES]
    image_mean = image_pts.mean(axis=0)
    object_mean = object_pts.mean(axis=0)
    rotation, _ = Rotation.align_vectors(image_pts - image_mean, object_pts - object_mean)
    rotvec = canonical_rotvec(rotation.as_rotvec())
    R = rotvec_to_matrix(rotvec)
    trans = image_mean - object_mean @ R - center

    obj = (landmarks - center - trans) @ R.T / scale
    return HeadPose(rotvec, trans), obj
