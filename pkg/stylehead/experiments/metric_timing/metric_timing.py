import sys
import time

import numpy as np
import tqdm

import stylehead
from stylehead.dataharness import get_style
from stylehead.metrics import WindowSpec, style_metric, style_metric_naive, style_metric_grid


#timing method
def timing(method, count=1):
    t1 = time.perf_counter()
    for i in range(count):
        method()
    t2 = time.perf_counter()
    print('total time: {}s, average time: {}s'.format(t2-t1, (t2-t1)/count))
    return (t2-t1)/count


def sequences(duration_s: float):
    reference = stylehead.synth_generate(get_style("rap"), duration_s, seed=0, render=False).landmarks
    generated = stylehead.synth_generate(get_style("opera"), duration_s, seed=1, render=False).landmarks
    return reference, generated


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "metric_timing.csv"
    stylehead.reset(0)
    spec = WindowSpec(10, 2)
    with open(out, "w") as pfile:
        pfile.write("duration_s, frames, naive, prefix, grid\n")
        for duration in tqdm.tqdm([2., 4., 8., 16.]):
            reference, generated = sequences(duration)
            t_naive = timing(lambda: style_metric_naive(reference, generated, spec, "D-L"))
            t_prefix = timing(lambda: style_metric(reference, generated, spec, "D-L"), 5)
            t_grid = timing(lambda: style_metric_grid(reference, generated, range(1, 21), range(1, 6), "D-L", 4))
            assert np.isclose(style_metric_naive(reference, generated, spec), style_metric(reference, generated, spec))
            pfile.write("{}, {}, {}, {}, {}\n".format(duration, len(reference), t_naive, t_prefix, t_grid))
