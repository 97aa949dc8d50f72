'''
Landmark and keypoint value types and the pose/expression recomposition math.

Convention: points are row vectors and rotation matrices act on the right,
C_k = c_k x R + tau + eps_k. rotvec_to_matrix therefore returns the transpose
of the usual column-vector (Rodrigues) matrix.
'''
from __future__ import annotations
import json
import logging
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .config import Config
from .errors import DatasetIOError, DatasetValidationError, InvalidArgumentError

logger = logging.getLogger(__name__)

NUM_LANDMARKS = 68
DEFAULT_NUM_KEYPOINTS = 15

# the standard 68-point semantic layout; closed groups are contours
LANDMARK_GROUPS = {
    "jaw": (list(range(0, 17)), False),
    "right_brow": (list(range(17, 22)), False),
    "left_brow": (list(range(22, 27)), False),
    "nose_bridge": (list(range(27, 31)), False),
    "nose_bottom": (list(range(31, 36)), False),
    "right_eye": (list(range(36, 42)), True),
    "left_eye": (list(range(42, 48)), True),
    "outer_lips": (list(range(48, 60)), True),
    "inner_lips": (list(range(60, 68)), True),
}
MOUTH_INDICES = list(range(48, 68))
INNER_LIP_INDICES = list(range(60, 68))


def _finite_array(data, shape: Tuple, what: str) -> np.ndarray:
    array = np.array(data, dtype=np.float64)
    if array.shape != shape:
        raise InvalidArgumentError("{} must have shape {}, got {}".format(what, shape, array.shape))
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError("{} must be finite".format(what))
    return array


class Landmarks68:
    '''
    68 x 3 facial landmarks, pixels for x and y, pixel-equivalent depth for z.
    '''
    def __init__(self, points: Union[np.ndarray, Sequence]):
        self._points = _finite_array(points, (NUM_LANDMARKS, 3), "landmarks")

    @staticmethod
    def as_landmarks(data: Union[Landmarks68, np.ndarray, Sequence]) -> Landmarks68:
        if isinstance(data, Landmarks68):
            return data
        return Landmarks68(data)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def numpy(self) -> np.ndarray:
        return self._points.copy()

    def __repr__(self) -> str:
        return "Landmarks68(centroid={})".format(np.round(self._points.mean(axis=0), 3).tolist())


class KeypointSet:
    '''
    K x 3 keypoints c_k (or the recomposed C_k), K >= 4.
    '''
    def __init__(self, points: Union[np.ndarray, Sequence]):
        array = np.array(points, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != 3:
            raise InvalidArgumentError("keypoints must have shape (K, 3), got {}".format(array.shape))
        if array.shape[0] < 4:
            raise InvalidArgumentError("at least 4 keypoints are needed for a warp, got {}".format(array.shape[0]))
        if not np.all(np.isfinite(array)):
            raise InvalidArgumentError("keypoints must be finite")
        self._points = array

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def K(self) -> int:
        return self._points.shape[0]

    def project2d(self) -> np.ndarray:
        '''
        the 2-D projection used for warping: z is dropped.
        '''
        return self._points[:, :2].copy()


class PoseParams:
    '''
    rotation R (3 x 3, row-vector convention), translation tau and per-keypoint expression eps_k.
    '''
    def __init__(self, rotation, translation, expression):
        self.rotation = _finite_array(rotation, (3, 3), "rotation")
        self.translation = _finite_array(translation, (3,), "translation")
        expression = np.array(expression, dtype=np.float64)
        if expression.ndim != 2 or expression.shape[1] != 3 or not np.all(np.isfinite(expression)):
            raise InvalidArgumentError("expression must be a finite (K, 3) array")
        self.expression = expression

        # examination
        if Config.para_check:
            R = self.rotation
            if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.) > 1e-6:
                raise InvalidArgumentError("rotation must be orthonormal with det(R) = 1")
        # examination done

    @property
    def K(self) -> int:
        return self.expression.shape[0]

    @staticmethod
    def identity(K: int = DEFAULT_NUM_KEYPOINTS) -> PoseParams:
        return PoseParams(np.eye(3), np.zeros(3), np.zeros((K, 3)))


class HeadPose:
    '''
    x_t: rotation vector (axis-angle, 3) followed by translation (3).
    '''
    def __init__(self, rotvec, trans):
        self.rotvec = _finite_array(rotvec, (3,), "rotation vector")
        self.trans = _finite_array(trans, (3,), "translation")
        if np.linalg.norm(self.rotvec) >= 2 * np.pi:
            raise InvalidArgumentError("rotation vector norm must be below 2*pi, use canonical_rotvec")

    @staticmethod
    def from_vector(x) -> HeadPose:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape != (6,):
            raise InvalidArgumentError("a head pose vector has 6 entries, got {}".format(x.shape))
        return HeadPose(canonical_rotvec(x[:3]), x[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotvec, self.trans])

    def matrix(self) -> np.ndarray:
        return rotvec_to_matrix(self.rotvec)


def canonical_rotvec(rotvec) -> np.ndarray:
    '''
    the equivalent rotation vector with norm in [0, pi].
    '''
    rotvec = np.asarray(rotvec, dtype=np.float64)
    if not np.all(np.isfinite(rotvec)):
        raise InvalidArgumentError("rotation vector must be finite")
    return Rotation.from_rotvec(rotvec).as_rotvec()


def rotvec_to_matrix(rotvec) -> np.ndarray:
    '''
    exponential map of an axis-angle vector, in the row-vector convention.
    '''
    rotvec = np.asarray(rotvec, dtype=np.float64)
    # examination
    if rotvec.shape != (3,):
        raise InvalidArgumentError("rotation vector must have 3 entries, got shape {}".format(rotvec.shape))
    if not np.all(np.isfinite(rotvec)):
        raise InvalidArgumentError("rotation vector must be finite")
    # examination done
    return Rotation.from_rotvec(rotvec).as_matrix().T


def rotvec_to_matrix_torch(rotvec: torch.Tensor) -> torch.Tensor:
    '''
    differentiable version of rotvec_to_matrix for ... x 3 tensors, returns ... x 3 x 3.
    '''
    theta2 = (rotvec ** 2).sum(-1, keepdim=True)[..., None]
    small = theta2 < 1e-8
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = theta2_safe.sqrt()
    # sin(t)/t and (1-cos(t))/t^2, Taylor expanded near zero
    a = torch.where(small, 1. - theta2 / 6., torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24., (1. - torch.cos(theta)) / theta2_safe)

    x, y, z = rotvec[..., 0], rotvec[..., 1], rotvec[..., 2]
    zero = torch.zeros_like(x)
    skew = torch.stack([
        torch.stack([zero, -z, y], -1),
        torch.stack([z, zero, -x], -1),
        torch.stack([-y, x, zero], -1)], -2)
    eye = torch.eye(3, dtype=rotvec.dtype, device=rotvec.device).expand_as(skew)
    # transpose of I + a*S + b*S^2
    return eye - a * skew + b * (skew @ skew)


def recompose(c, rotation, translation, expression):
    '''
    C_k = c_k x R + tau + eps_k on numpy arrays or (batched) tensors:
    c ... x K x 3, rotation ... x 3 x 3, translation ... x 3, expression ... x K x 3.
    '''
    return c @ rotation + translation[..., None, :] + expression


def recompose_keypoints(c: KeypointSet, pose: PoseParams) -> KeypointSet:
    '''
    reconstruct keypoints from the geometry signature c_k and (R, tau, eps_k).
    The same operation gives the neutral C_k and, with the reference parameters, the barred C_k.
    '''
    if c.K != pose.K:
        raise InvalidArgumentError("keypoint count {} does not match expression count {}".format(c.K, pose.K))
    return KeypointSet(recompose(c.points, pose.rotation, pose.translation, pose.expression))


def vectorize_landmarks(lm: Landmarks68) -> np.ndarray:
    '''
    row-major flattening, point then coordinate: (x0, y0, z0, x1, ...).
    '''
    return Landmarks68.as_landmarks(lm).points.reshape(-1).copy()

def unvectorize_landmarks(vector) -> Landmarks68:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (NUM_LANDMARKS * 3,):
        raise InvalidArgumentError("a landmark vector has 204 entries, got shape {}".format(vector.shape))
    return Landmarks68(vector.reshape(NUM_LANDMARKS, 3))


class LandmarkSequence:
    '''
    T x 68 x 3 landmarks of a video, in the pixel space of a canvas.
    '''
    def __init__(self, points, fps: int = None, canvas: Tuple[int, int] = None):
        array = np.array(points, dtype=np.float64)
        if array.ndim != 3 or array.shape[1:] != (NUM_LANDMARKS, 3):
            raise InvalidArgumentError("a landmark sequence has shape (T, 68, 3), got {}".format(array.shape))
        if not np.all(np.isfinite(array)):
            raise InvalidArgumentError("landmark sequence must be finite")
        self.points = array
        self.fps = Config.fps if fps is None else fps
        self.canvas = (Config.image_size, Config.image_size) if canvas is None else tuple(canvas)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, t: int) -> Landmarks68:
        return Landmarks68(self.points[t])

    def __iter__(self) -> Iterable[Landmarks68]:
        for t in range(len(self)):
            yield self[t]

    def vectors(self) -> np.ndarray:
        return self.points.reshape(len(self), -1).copy()


def save_landmark_sequence(path: str, sequence: LandmarkSequence) -> None:
    '''
    newline-delimited JSON, one {"frame": t, "points": [[x, y, z] x 68]} record per frame.
    '''
    try:
        with open(path, "w") as f:
            for t in range(len(sequence)):
                record = {"frame": t, "points": sequence.points[t].tolist()}
                f.write(json.dumps(record) + "\n")
    except OSError as e:
        raise DatasetIOError("cannot write landmark file ({})".format(e.strerror), path) from e

def load_landmark_sequence(path: str, fps: int = None, canvas: Tuple[int, int] = None) -> LandmarkSequence:
    frames: List[np.ndarray] = []
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise DatasetIOError("cannot read landmark file ({})".format(e.strerror), path) from e

    for line_no, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            points = np.array(record["points"], dtype=np.float64)
            frame = int(record["frame"])
        except (ValueError, KeyError, TypeError) as e:
            raise DatasetIOError("corrupt landmark record on line {} ({})".format(line_no + 1, e), path) from e
        if frame != len(frames):
            raise DatasetValidationError("{}: expected frame {}, found frame {}".format(path, len(frames), frame))
        if points.shape != (NUM_LANDMARKS, 3) or not np.all(np.isfinite(points)):
            raise DatasetValidationError("{}: frame {} is not 68 finite 3-D points".format(path, frame))
        frames.append(points)

    if not frames:
        raise DatasetValidationError("{}: the landmark file holds no frames".format(path))
    return LandmarkSequence(np.stack(frames), fps, canvas)
