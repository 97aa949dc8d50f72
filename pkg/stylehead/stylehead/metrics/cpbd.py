'''
Cumulative probability of blur detection, a no-reference sharpness score in [0, 1] (higher is sharper).
Vertical edges from a horizontal Sobel response, Marziliano edge widths along rows and
just-noticeable-blur widths from the local block contrast.
'''
from __future__ import annotations
import logging

import numpy as np
from scipy import ndimage
from skimage.color import rgb2gray, rgba2rgb

from ..errors import InvalidArgumentError

logger = logging.getLogger(__name__)

BETA = 3.6
BLUR_THRESHOLD = 0.63
BLOCK = 64
# just noticeable blur widths: low-contrast blocks tolerate wider edges
JNB_LOW_CONTRAST = 5.
JNB_HIGH_CONTRAST = 3.
CONTRAST_SPLIT = 50.


def to_gray255(image) -> np.ndarray:
    '''
    grayscale in [0, 255] from an H x W, H x W x 3 or H x W x 4 image (uint8 or real in [0, 1]).
    '''
    try:
        image = np.asarray(image)
    except Exception as e:
        raise InvalidArgumentError("CPBD needs an image, got {}".format(type(image).__name__)) from e
    if image.dtype == object or not (np.issubdtype(image.dtype, np.number) or image.dtype == bool):
        raise InvalidArgumentError("CPBD needs a numeric image, got dtype {}".format(image.dtype))
    if image.ndim == 3 and image.shape[2] == 4:
        image = rgba2rgb(image)
    if image.ndim == 3 and image.shape[2] == 3:
        return rgb2gray(image) * 255.
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if image.ndim != 2 or min(image.shape) < 3:
        raise InvalidArgumentError("CPBD needs a 2-D image of at least 3 x 3 pixels, got shape {}".format(image.shape))
    if image.dtype == np.uint8:
        return image.astype(np.float64)
    return image.astype(np.float64) * 255.


def detect_edges(gray: np.ndarray) -> np.ndarray:
    '''
    thinned vertical edges: Sobel strength above twice its rms, kept where it peaks along the row.
    '''
    strength = np.abs(ndimage.sobel(gray, axis=1, mode="reflect")) / 8.
    rms = np.sqrt(np.mean(strength ** 2))
    if rms == 0.:
        return np.zeros(gray.shape, dtype=bool)
    strong = np.where(strength > 2. * rms, strength, 0.)
    left = np.pad(strong[:, :-1], ((0, 0), (1, 0)))
    right = np.pad(strong[:, 1:], ((0, 0), (0, 1)))
    edges = (strong > 0) & (strong >= left) & (strong > right)
    edges[:, 0] = False
    edges[:, -1] = False
    return edges


def edge_width(row: np.ndarray, col: int) -> int:
    '''
    distance between the intensity extrema enclosing the edge at col.
    '''
    sign = np.sign(row[col + 1] - row[col - 1])
    if sign == 0:
        return 0
    left = col
    while left > 0 and sign * (row[left - 1] - row[left]) < 0:
        left -= 1
    right = col
    while right < row.shape[0] - 1 and sign * (row[right + 1] - row[right]) > 0:
        right += 1
    return right - left


def metric_cpbd(image) -> float:
    gray = to_gray255(image)
    edges = detect_edges(gray)
    rows, cols = np.nonzero(edges)

    probabilities = []
    for r, c in zip(rows, cols):
        width = edge_width(gray[r], c)
        if width == 0:
            continue
        br, bc = (r // BLOCK) * BLOCK, (c // BLOCK) * BLOCK
        block = gray[br:br + BLOCK, bc:bc + BLOCK]
        jnb = JNB_LOW_CONTRAST if block.max() - block.min() <= CONTRAST_SPLIT else JNB_HIGH_CONTRAST
        probabilities.append(1. - np.exp(-(width / jnb) ** BETA))

    if not probabilities:
        logger.warning("CPBD: the image has no edges, reporting 0.0")
        return 0.
    return float(np.mean(np.asarray(probabilities) <= BLUR_THRESHOLD))
