import random
from typing import Dict

import numpy as np
import torch

from .config import Config


def get_config() -> Dict:
    return {
        "device cuda": Config.device == 'cuda',
        "dtype double": Config.dtype == torch.float64,
        "thread num": torch.get_num_threads(),
        "parameter check": Config.para_check,
        "image size": Config.image_size,
    }


# the current configuration is recorded
class GlobalVar:
    current_config = get_config()
    seed = 0


def reset(seed: int = 0, thread_num: int = 4, device_cuda: bool = False,
          dtype_double: bool = True) -> None:
    '''
    seed every random source, then update the device, dtype and thread settings.
    '''
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(thread_num)
    Config.setting_update(device_cuda, dtype_double)

    GlobalVar.seed = seed
    GlobalVar.current_config = get_config()
