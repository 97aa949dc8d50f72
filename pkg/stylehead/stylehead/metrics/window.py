'''
Style-aware windowed metrics: chunk the reference and the generated sequence into windows of
F frames at stride v, match every reference window with its closest generated window under a
core metric and average the matches. SLD uses D-L, SLV uses D-V and SMD uses LMD.
'''
from __future__ import annotations
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from ..errors import InvalidArgumentError
from .abstract_core import AbstractCoreMetric, get_core
from .distance import as_points

logger = logging.getLogger(__name__)

DEFAULT_F_SET = tuple(range(1, 101))
DEFAULT_V_SET = tuple(range(1, 21))


class WindowSpec:
    def __init__(self, F: int, v: int):
        if int(F) < 1 or int(v) < 1:
            raise InvalidArgumentError("window size and stride must be >= 1, got F={}, v={}".format(F, v))
        self.F = int(F)
        self.v = int(v)

    def kappa(self, n: int) -> int:
        '''
        number of windows after the first one in a sequence of n frames.
        '''
        return (n - self.F) // self.v

    def starts(self, n: int) -> np.ndarray:
        if n < self.F:
            raise InvalidArgumentError("window size {} exceeds the sequence length {}".format(self.F, n))
        return np.arange(self.kappa(n) + 1) * self.v

    def __repr__(self) -> str:
        return "WindowSpec(F={}, v={})".format(self.F, self.v)


def _diagonal_prefix(m: np.ndarray) -> np.ndarray:
    '''
    C[i, j] = sum_{k >= 1} M[i - k, j - k] while both indices stay >= 0.
    '''
    c = np.zeros((m.shape[0] + 1, m.shape[1] + 1))
    for i in range(m.shape[0]):
        c[i + 1, 1:] = c[i, :-1] + m[i]
    return c


class StyleMetricPlan:
    '''
    the per-step distance matrix of a sequence pair under one core and its diagonal prefix sums,
    shared by every window spec evaluated on the pair.
    '''
    def __init__(self, reference, generated, core="D-L", scale: Optional[float] = None):
        self.reference = as_points(reference)
        self.generated = as_points(generated)
        self.core: AbstractCoreMetric = get_core(core)
        self.scale = self.core.scale(self.reference) if scale is None else scale
        self.prefix = _diagonal_prefix(self.core.step_distances(self.reference, self.generated))

    def feasible(self, spec: WindowSpec) -> bool:
        return spec.F <= min(self.reference.shape[0], self.generated.shape[0]) and self.core.feasible(spec.F)

    def value(self, spec: WindowSpec) -> float:
        if spec.F > min(self.reference.shape[0], self.generated.shape[0]):
            raise InvalidArgumentError("window size {} exceeds the shorter sequence ({} frames)".format(
                spec.F, min(self.reference.shape[0], self.generated.shape[0])))
        if not self.core.feasible(spec.F):
            raise InvalidArgumentError("core '{}' needs more than {} frame(s) per window".format(
                self.core.name, spec.F))
        steps = self.core.steps(spec.F)
        s = spec.starts(self.reference.shape[0])
        g = spec.starts(self.generated.shape[0])
        sums = self.prefix[(s + steps)[:, None], (g + steps)[None, :]] - self.prefix[s[:, None], g[None, :]]
        return float(np.mean(sums.min(axis=1) / steps * self.scale))


def style_metric(reference, generated, spec: WindowSpec, core="D-L", scale: Optional[float] = None) -> float:
    '''
    mean over reference windows of the minimum core metric over generated windows.
    The normalizer of the percent cores comes from the whole reference sequence.
    '''
    return StyleMetricPlan(reference, generated, core, scale).value(spec)


def style_metric_naive(reference, generated, spec: WindowSpec, core="D-L") -> float:
    '''
    the same value by enumerating every window pair through the synchronized metric functions.
    '''
    reference, generated = as_points(reference), as_points(generated)
    core = get_core(core)
    if spec.F > min(reference.shape[0], generated.shape[0]):
        raise InvalidArgumentError("window size {} exceeds the shorter sequence".format(spec.F))
    values = []
    for s in spec.starts(reference.shape[0]):
        best = None
        for g in spec.starts(generated.shape[0]):
            d = core.window_value(reference[s:s + spec.F], generated[g:g + spec.F], reference)
            best = d if best is None or d < best else best
        values.append(best)
    return float(np.mean(values))


def sld(reference, generated, spec: WindowSpec) -> float:
    return style_metric(reference, generated, spec, "D-L")

def slv(reference, generated, spec: WindowSpec) -> float:
    return style_metric(reference, generated, spec, "D-V")

def smd(reference, generated, spec: WindowSpec, core: str = "LMD") -> float:
    return style_metric(reference, generated, spec, core)


def style_metric_grid(reference, generated, F_set: Iterable[int] = DEFAULT_F_SET,
                      v_set: Iterable[int] = DEFAULT_V_SET, core="D-L",
                      workers: int = 4) -> Tuple[float, Dict[Tuple[int, int], float]]:
    '''
    the style metric over every feasible (F, v) cell and the mean of the computed cells.
    Cells are evaluated on a thread pool; the reduction runs in (F, v) order.
    '''
    plan = StyleMetricPlan(reference, generated, core)
    cells = [(F, v) for F in F_set for v in v_set]
    specs = [WindowSpec(F, v) for F, v in cells]
    feasible = [(cell, spec) for cell, spec in zip(cells, specs) if plan.feasible(spec)]
    if not feasible:
        raise InvalidArgumentError("no (F, v) cell fits sequences of {} and {} frames".format(
            plan.reference.shape[0], plan.generated.shape[0]))
    skipped = len(cells) - len(feasible)
    if skipped:
        logger.debug("style metric grid: skipped %d infeasible cells", skipped)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(plan.value, [spec for _, spec in feasible]))
    else:
        values = [plan.value(spec) for _, spec in feasible]
    grid = {cell: value for (cell, _), value in zip(feasible, values)}
    return float(np.mean(values)), grid
