from .distance import metric_dl, metric_dv, metric_da, metric_lmd, face_diagonal, face_area, shoelace_area
from .cpbd import metric_cpbd

# core metrics of the windowed style metrics
from .abstract_core import AbstractCoreMetric, get_core
from .abstract_core import LandmarkDistanceCore, VelocityCore, MouthDistanceCore, MouthAreaCore
from .window import WindowSpec, style_metric, style_metric_naive, style_metric_grid, sld, slv, smd
from .report import MetricReport, evaluate_sequences
