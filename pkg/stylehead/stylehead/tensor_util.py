from __future__ import annotations
from typing import Any
import numpy as np
import torch

from .config import Config


def _U_(p, *a, **kw):
    '''
    to unify the torch calculation with specified device and dtype
    p : torch method
    *a : parameters for p
    '''
    return p(*a, device = Config.device, dtype = Config.dtype, **kw)

def np2tensor(array: Any) -> torch.Tensor:
    '''
    transform the input (numpy array, list or tensor) into a tensor on the configured device and dtype.
    '''
    if isinstance(array, torch.Tensor):
        return array.to(device = Config.device, dtype = Config.dtype)
    return _U_(torch.as_tensor, np.asarray(array, dtype = np.float64))

def tensor2np(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy()

def image2tensor(image: np.ndarray) -> torch.Tensor:
    '''
    H x W x 3 image (uint8 in [0, 255] or real in [0, 1]) -> 3 x H x W tensor in [-1, 1]
    '''
    image = np.asarray(image)
    if image.dtype == np.uint8:
        image = image.astype(np.float64) / 255.
    return np2tensor(image).permute(2, 0, 1) * 2. - 1.

def tensor2image(tensor: torch.Tensor) -> np.ndarray:
    '''
    3 x H x W tensor in [-1, 1] -> H x W x 3 uint8 image
    '''
    image = (tensor2np(tensor).transpose(1, 2, 0) + 1.) / 2.
    return np.clip(np.rint(image * 255.), 0, 255).astype(np.uint8)
