'''
The evaluation report: synchronized metrics, CPBD over frames and the style-aware grids.
'''
from __future__ import annotations
import json
import logging
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from ..errors import DatasetIOError, InvalidArgumentError
from .cpbd import metric_cpbd
from .distance import as_points, metric_da, metric_dl, metric_dv, metric_lmd
from .window import DEFAULT_F_SET, DEFAULT_V_SET, style_metric_grid

logger = logging.getLogger(__name__)

Grid = Dict[Tuple[int, int], float]


class MetricReport:
    '''
    cpbd is None when no generated frames were supplied.
    '''
    def __init__(self, cpbd: Optional[float], lmd: float, d_l: float, d_v: float, d_a: float,
                 sld: float, slv: float, smd: float, grids: Dict[str, Grid]):
        values = {"lmd": lmd, "d_l": d_l, "d_v": d_v, "d_a": d_a, "sld": sld, "slv": slv, "smd": smd}
        for name, value in values.items():
            if not np.isfinite(value) or value < 0.:
                raise InvalidArgumentError("metric {} must be finite and >= 0, got {}".format(name, value))
        self.cpbd = cpbd
        self.lmd, self.d_l, self.d_v, self.d_a = lmd, d_l, d_v, d_a
        self.sld, self.slv, self.smd = sld, slv, smd
        self.grids = grids

    def as_dict(self) -> Dict:
        out = {"cpbd": self.cpbd, "lmd": self.lmd, "d_l": self.d_l, "d_v": self.d_v, "d_a": self.d_a,
               "sld": self.sld, "slv": self.slv, "smd": self.smd}
        for name, grid in self.grids.items():
            out[name + "_grid"] = [{"F": F, "v": v, "value": value} for (F, v), value in sorted(grid.items())]
        return out

    def to_json(self, path: Optional[str] = None) -> str:
        text = json.dumps(self.as_dict(), indent=1)
        if path is not None:
            try:
                with open(path, "w") as f:
                    f.write(text)
            except OSError as e:
                raise DatasetIOError("cannot write metric report ({})".format(e.strerror), path) from e
        return text


def evaluate_sequences(reference, generated, frames: Optional[Sequence[np.ndarray]] = None,
                       F_set: Iterable[int] = DEFAULT_F_SET, v_set: Iterable[int] = DEFAULT_V_SET,
                       smd_core: str = "LMD", workers: int = 4) -> MetricReport:
    '''
    every metric of a generated landmark sequence against a reference one.
    The synchronized metrics compare the first min(len) frames; CPBD averages over the generated frames.
    '''
    reference, generated = as_points(reference), as_points(generated)
    n = min(reference.shape[0], generated.shape[0])
    if n < 2:
        raise InvalidArgumentError("evaluation needs >= 2 frames in both sequences")
    ref_sync, gen_sync = reference[:n], generated[:n]
    F_set, v_set = list(F_set), list(v_set)

    sld, sld_grid = style_metric_grid(reference, generated, F_set, v_set, "D-L", workers)
    slv, slv_grid = style_metric_grid(reference, generated, F_set, v_set, "D-V", workers)
    smd, smd_grid = style_metric_grid(reference, generated, F_set, v_set, smd_core, workers)
    cpbd = float(np.mean([metric_cpbd(frame) for frame in frames])) if frames else None

    report = MetricReport(cpbd=cpbd, lmd=metric_lmd(ref_sync, gen_sync), d_l=metric_dl(ref_sync, gen_sync),
                          d_v=metric_dv(ref_sync, gen_sync), d_a=metric_da(ref_sync, gen_sync),
                          sld=sld, slv=slv, smd=smd, grids={"sld": sld_grid, "slv": slv_grid, "smd": smd_grid})
    logger.info("evaluation: SLD=%.4f SLV=%.4f SMD=%.4f", sld, slv, smd)
    return report
