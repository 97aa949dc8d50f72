'''
Core metrics of the windowed style metrics. A core exposes a per-step distance matrix
between a reference and a generated sequence, so that a window value is the mean of a
diagonal run of that matrix times a scale.
'''
from __future__ import annotations
from typing import Dict

import numpy as np

from ..errors import InvalidArgumentError
from ..geometry import MOUTH_INDICES
from .distance import (face_area, face_diagonal, frame_distance, metric_da, metric_dl, metric_dv, metric_lmd,
                       mouth_area, velocities)


class AbstractCoreMetric:

    def __init__(self):
        self.name = "Abstract Core Metric"

    def steps(self, window: int) -> int:
        '''
        number of per-step terms in a window of the given frame count.
        '''
        raise NotImplementedError("Core metric '{}' has not implemented steps.".format(self.name))

    def scale(self, reference: np.ndarray) -> float:
        raise NotImplementedError("Core metric '{}' has not implemented scale.".format(self.name))

    def step_distances(self, reference: np.ndarray, generated: np.ndarray) -> np.ndarray:
        '''
        M[i, j] = distance between step i of the reference and step j of the generated sequence.
        '''
        raise NotImplementedError("Core metric '{}' has not implemented step_distances.".format(self.name))

    def window_value(self, ref_window: np.ndarray, gen_window: np.ndarray, reference: np.ndarray) -> float:
        '''
        the core metric of two windows, through the synchronized metric functions.
        '''
        raise NotImplementedError("Core metric '{}' has not implemented window_value.".format(self.name))

    # the methods

    def feasible(self, window: int) -> bool:
        return self.steps(window) >= 1

    def _pairwise(self, reference: np.ndarray, generated: np.ndarray, indices=None) -> np.ndarray:
        out = np.empty((reference.shape[0], generated.shape[0]))
        for i in range(reference.shape[0]):
            out[i] = frame_distance(np.broadcast_to(reference[i], generated.shape), generated, indices)
        return out


class LandmarkDistanceCore(AbstractCoreMetric):
    def __init__(self):
        self.name = "D-L"

    def steps(self, window: int) -> int:
        return window

    def scale(self, reference: np.ndarray) -> float:
        return 100. / face_diagonal(reference)

    def step_distances(self, reference: np.ndarray, generated: np.ndarray) -> np.ndarray:
        return self._pairwise(reference, generated)

    def window_value(self, ref_window, gen_window, reference) -> float:
        return metric_dl(ref_window, gen_window, face_diagonal(reference))


class VelocityCore(AbstractCoreMetric):
    def __init__(self):
        self.name = "D-V"

    def steps(self, window: int) -> int:
        return window - 1

    def scale(self, reference: np.ndarray) -> float:
        return 100. / face_diagonal(reference)

    def step_distances(self, reference: np.ndarray, generated: np.ndarray) -> np.ndarray:
        return self._pairwise(velocities(reference), velocities(generated))

    def window_value(self, ref_window, gen_window, reference) -> float:
        return metric_dv(ref_window, gen_window, face_diagonal(reference))


class MouthDistanceCore(AbstractCoreMetric):
    def __init__(self):
        self.name = "LMD"

    def steps(self, window: int) -> int:
        return window

    def scale(self, reference: np.ndarray) -> float:
        return 1.

    def step_distances(self, reference: np.ndarray, generated: np.ndarray) -> np.ndarray:
        return self._pairwise(reference, generated, MOUTH_INDICES)

    def window_value(self, ref_window, gen_window, reference) -> float:
        return metric_lmd(ref_window, gen_window)


class MouthAreaCore(AbstractCoreMetric):
    def __init__(self):
        self.name = "mouth-area"

    def steps(self, window: int) -> int:
        return window

    def scale(self, reference: np.ndarray) -> float:
        return 100. / face_area(reference)

    def step_distances(self, reference: np.ndarray, generated: np.ndarray) -> np.ndarray:
        return np.abs(mouth_area(reference)[:, None] - mouth_area(generated)[None, :])

    def window_value(self, ref_window, gen_window, reference) -> float:
        return metric_da(ref_window, gen_window, face_area(reference))


CORES: Dict[str, type] = {
    "D-L": LandmarkDistanceCore,
    "D-V": VelocityCore,
    "LMD": MouthDistanceCore,
    "mouth-area": MouthAreaCore,
}


def get_core(core) -> AbstractCoreMetric:
    if isinstance(core, AbstractCoreMetric):
        return core
    if core not in CORES:
        raise InvalidArgumentError("unknown core metric '{}', expected one of {}".format(core, sorted(CORES)))
    return CORES[core]()
