'''
Synchronized landmark metrics: D-L, D-V, D-A (percent of the reference face box) and LMD (pixels).
Windows are T x 68 x 3 arrays, LandmarkSequence objects or lists of Landmarks68; the first
argument is the reference and fixes the normalizer unless one is given.
'''
from __future__ import annotations
from typing import Optional, Tuple

import numpy as np

from ..errors import InvalidArgumentError
from ..geometry import INNER_LIP_INDICES, MOUTH_INDICES, NUM_LANDMARKS, Landmarks68, LandmarkSequence


def as_points(window) -> np.ndarray:
    if isinstance(window, LandmarkSequence):
        return window.points
    if isinstance(window, Landmarks68):
        return window.points[None]
    if isinstance(window, (list, tuple)) and window and isinstance(window[0], Landmarks68):
        return np.stack([lm.points for lm in window])
    points = np.asarray(window, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    if points.ndim != 3 or points.shape[1:] != (NUM_LANDMARKS, 3):
        raise InvalidArgumentError("a landmark window has shape (T, 68, 3), got {}".format(points.shape))
    return points


def _pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a, b = as_points(a), as_points(b)
    if a.shape[0] != b.shape[0]:
        raise InvalidArgumentError("windows differ in length: {} vs {} frames".format(a.shape[0], b.shape[0]))
    if a.shape[0] == 0:
        raise InvalidArgumentError("windows are empty")
    return a, b


def face_box(reference) -> Tuple[float, float]:
    '''
    width and height of the 2-D bounding box of every landmark of the reference.
    '''
    xy = as_points(reference)[..., :2].reshape(-1, 2)
    width, height = xy.max(axis=0) - xy.min(axis=0)
    return float(width), float(height)


def face_diagonal(reference) -> float:
    width, height = face_box(reference)
    diagonal = float(np.hypot(width, height))
    if diagonal <= 0.:
        raise InvalidArgumentError("the reference face box has no extent")
    return diagonal


def face_area(reference) -> float:
    width, height = face_box(reference)
    if width * height <= 0.:
        raise InvalidArgumentError("the reference face box has no area")
    return width * height


def velocities(points: np.ndarray) -> np.ndarray:
    return points[1:] - points[:-1]


def frame_distance(a: np.ndarray, b: np.ndarray, indices=None) -> np.ndarray:
    '''
    per-frame mean 2-D point distance of two aligned T x 68 x 3 arrays.
    '''
    if indices is not None:
        a, b = a[:, indices], b[:, indices]
    return np.linalg.norm(a[..., :2] - b[..., :2], axis=-1).mean(axis=-1)


def metric_dl(a, b, diagonal: Optional[float] = None) -> float:
    a, b = _pair(a, b)
    diagonal = face_diagonal(a) if diagonal is None else diagonal
    return float(frame_distance(a, b).mean() / diagonal * 100.)


def metric_dv(a, b, diagonal: Optional[float] = None) -> float:
    a, b = _pair(a, b)
    if a.shape[0] < 2:
        raise InvalidArgumentError("velocity differences need >= 2 frames")
    diagonal = face_diagonal(a) if diagonal is None else diagonal
    return float(frame_distance(velocities(a), velocities(b)).mean() / diagonal * 100.)


def shoelace_area(contour: np.ndarray) -> np.ndarray:
    '''
    area of ... x P x 2 closed contours.
    '''
    x, y = contour[..., 0], contour[..., 1]
    return 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=-1) - y * np.roll(x, -1, axis=-1), axis=-1))


def mouth_area(points: np.ndarray) -> np.ndarray:
    '''
    per-frame open-mouth area enclosed by the inner lips; a contour collapsed to a point has area 0.
    '''
    return shoelace_area(points[:, INNER_LIP_INDICES, :2])


def metric_da(a, b, box_area: Optional[float] = None) -> float:
    a, b = _pair(a, b)
    box_area = face_area(a) if box_area is None else box_area
    return float(np.mean(np.abs(mouth_area(a) - mouth_area(b))) / box_area * 100.)


def metric_lmd(a, b) -> float:
    a, b = _pair(a, b)
    return float(frame_distance(a, b, MOUTH_INDICES).mean())
