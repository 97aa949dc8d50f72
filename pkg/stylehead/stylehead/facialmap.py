'''
The facial map (a line drawing of the landmark groups) and the region weighting mask
of the style-aware photometric loss.
'''
from __future__ import annotations
import logging
from typing import List, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from skimage.draw import line, polygon

from .config import Config
from .errors import DatasetIOError, DatasetValidationError, DegenerateRegionError, EmptyMapError, InvalidArgumentError
from .geometry import LANDMARK_GROUPS, Landmarks68

logger = logging.getLogger(__name__)

MOUTH_WEIGHT = 5.
EYE_WEIGHT = 3.
SKIN_WEIGHT = 1.
WEIGHT_VALUES = (0., SKIN_WEIGHT, EYE_WEIGHT, MOUTH_WEIGHT)
# PNG storage of weight masks
WEIGHT_PNG_SCALE = 32

FACE_HULL_INDICES = list(range(0, 17)) + list(range(26, 16, -1))
OUTER_LIP_INDICES = list(range(48, 60))
EYE_INDICES = (list(range(36, 42)), list(range(42, 48)))


class FacialMap:
    def __init__(self, image: np.ndarray):
        image = np.asarray(image)
        if image.ndim != 2:
            raise InvalidArgumentError("a facial map is a single-channel raster, got shape {}".format(image.shape))
        if not np.all((image == 0) | (image == 1)):
            raise InvalidArgumentError("facial map values must be 0 or 1")
        self.image = image.astype(np.uint8)

    @property
    def lit_pixels(self) -> int:
        return int(self.image.sum())

    def as_tensor(self) -> torch.Tensor:
        '''
        3 x H x W in [-1, 1], the channel-replicated map fed to the generator.
        '''
        t = torch.as_tensor(self.image, dtype=Config.dtype, device=Config.device) * 2. - 1.
        return t[None].expand(3, -1, -1).clone()


class WeightMask:
    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise InvalidArgumentError("a weight mask is a single-channel raster, got shape {}".format(weights.shape))
        if not np.all(np.isin(weights, WEIGHT_VALUES)):
            raise InvalidArgumentError("weight mask values must be in {}".format(WEIGHT_VALUES))
        self.weights = weights

    def as_tensor(self) -> torch.Tensor:
        return torch.as_tensor(self.weights, dtype=Config.dtype, device=Config.device)


def orthographic_camera(scale: float = 1., center: Tuple[float, float] = None, roll: float = 0.,
                        shift: Tuple[float, float] = (0., 0.)) -> np.ndarray:
    '''
    3 x 4 orthographic camera: roll (radians) and scale about the canvas center, then a pixel shift.
    The default is the identity on image-space landmarks.
    '''
    if center is None:
        center = ((Config.image_size - 1) / 2., (Config.image_size - 1) / 2.)
    cx, cy = center
    c, s = np.cos(roll), np.sin(roll)
    a = scale * np.array([[c, -s], [s, c]])
    offset = np.array([cx, cy]) - a @ np.array([cx, cy]) + np.asarray(shift)
    camera = np.zeros((3, 4))
    camera[:2, :2] = a
    camera[:2, 3] = offset
    camera[2, 3] = 1.
    return camera


def project_points(points: np.ndarray, camera: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    '''
    project N x 3 points with a 3 x 4 camera; returns (N x 2 pixel coordinates, N visibility flags).
    Points with w <= 0 are behind the camera.
    '''
    camera = np.asarray(camera, dtype=np.float64)
    # examination
    if camera.shape != (3, 4) or not np.all(np.isfinite(camera)):
        raise InvalidArgumentError("the camera must be a finite 3 x 4 matrix, got shape {}".format(camera.shape))
    if np.linalg.matrix_rank(camera) < 3:
        raise InvalidArgumentError("the camera matrix must have full rank")
    # examination done
    homogeneous = np.concatenate([points, np.ones((points.shape[0], 1))], axis=1) @ camera.T
    w = homogeneous[:, 2]
    visible = w > 0
    uv = np.zeros((points.shape[0], 2))
    uv[visible] = homogeneous[visible, :2] / w[visible, None]
    return uv, visible


def _pixel(coordinate: float) -> int:
    return int(np.floor(coordinate + 0.5))


def group_segments() -> List[Tuple[int, int]]:
    '''
    the (i, j) landmark pairs connected in the facial map, group by group.
    '''
    segments = []
    for indices, closed in LANDMARK_GROUPS.values():
        segments += list(zip(indices[:-1], indices[1:]))
        if closed:
            segments.append((indices[-1], indices[0]))
    return segments


def rasterize_facial_map(landmarks, camera: np.ndarray = None, size: int = None) -> FacialMap:
    '''
    draw 1-pixel lines between consecutive landmarks of every semantic group (Bresenham), clipped to the frame.
    '''
    points = Landmarks68.as_landmarks(landmarks).points
    size = Config.image_size if size is None else size
    camera = orthographic_camera() if camera is None else camera
    uv, visible = project_points(points, camera)
    if not visible.any():
        raise EmptyMapError("every landmark projects behind the camera")

    image = np.zeros((size, size), dtype=np.uint8)
    for i, j in group_segments():
        if not (visible[i] and visible[j]):
            continue
        rr, cc = line(_pixel(uv[i, 1]), _pixel(uv[i, 0]), _pixel(uv[j, 1]), _pixel(uv[j, 0]))
        inside = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
        image[rr[inside], cc[inside]] = 1
    return FacialMap(image)


def _orientation(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _self_intersecting(xy: np.ndarray) -> bool:
    n = xy.shape[0]
    for i in range(n):
        a, b = xy[i], xy[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            c, d = xy[j], xy[(j + 1) % n]
            d1, d2 = _orientation(a, b, c), _orientation(a, b, d)
            d3, d4 = _orientation(c, d, a), _orientation(c, d, b)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return True
    return False


def polygon_area(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _fill(mask: np.ndarray, xy: np.ndarray, value: float, region: str) -> None:
    if _self_intersecting(xy):
        raise DegenerateRegionError("the {} polygon intersects itself".format(region))
    rr, cc = polygon(xy[:, 1], xy[:, 0], shape=mask.shape)
    mask[rr, cc] = value


def build_weight_mask(landmarks, size: int = None) -> WeightMask:
    '''
    mouth (outer lips) 5, eyes 3, the rest of the jaw-brow hull 1, background 0.
    Mouth wins over eyes, eyes over skin.
    '''
    points = Landmarks68.as_landmarks(landmarks).points[:, :2]
    size = Config.image_size if size is None else size
    hull = points[FACE_HULL_INDICES]
    if polygon_area(hull) < 1.:
        raise DegenerateRegionError("the face hull has no area")

    weights = np.zeros((size, size))
    _fill(weights, hull, SKIN_WEIGHT, "face hull")
    for eye in EYE_INDICES:
        _fill(weights, points[eye], EYE_WEIGHT, "eye")
    _fill(weights, points[OUTER_LIP_INDICES], MOUTH_WEIGHT, "mouth")
    return WeightMask(weights)


def save_facial_map(path: str, facial_map: FacialMap) -> None:
    try:
        Image.fromarray((facial_map.image * 255).astype(np.uint8)).save(path)
    except OSError as e:
        raise DatasetIOError("cannot write facial map ({})".format(e), path) from e

def load_facial_map(path: str) -> FacialMap:
    raster = _read_gray(path)
    if not np.all(np.isin(raster, (0, 255))):
        raise DatasetValidationError("{}: a facial map holds only 0 and 255".format(path))
    return FacialMap(raster // 255)


def save_weight_mask(path: str, mask: WeightMask) -> None:
    try:
        Image.fromarray((mask.weights * WEIGHT_PNG_SCALE).astype(np.uint8)).save(path)
    except OSError as e:
        raise DatasetIOError("cannot write weight mask ({})".format(e), path) from e

def load_weight_mask(path: str) -> WeightMask:
    raster = _read_gray(path)
    stored = [int(v * WEIGHT_PNG_SCALE) for v in WEIGHT_VALUES]
    if not np.all(np.isin(raster, stored)):
        raise DatasetValidationError("{}: weight mask values must be in {}".format(path, stored))
    return WeightMask(raster.astype(np.float64) / WEIGHT_PNG_SCALE)


def _read_gray(path: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("L"))
    except OSError as e:
        raise DatasetIOError("cannot read PNG ({})".format(e), path) from e


def facial_maps(sequence: Sequence, camera: np.ndarray = None, size: int = None) -> List[FacialMap]:
    return [rasterize_facial_map(lm, camera, size) for lm in sequence]
