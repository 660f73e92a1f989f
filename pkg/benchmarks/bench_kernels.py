"""Time the compiled and numpy convolution kernels side by side.

    python benchmarks/bench_kernels.py [--repeats 20]

Reports the median wall time of im2col, col2im and one forward/backward
pass of the tiny and res15 students per backend.  The compiled rows are
skipped when the extension was not built.
"""
import argparse
import statistics
import time
from unittest import mock

import numpy as np

from fskws import _pykernels, kernels
from fskws import tensor as T
from fskws.models import StudentResNet
from fskws.tensor import Tape, Tensor

try:
    from fskws import _ckernels
except ImportError:
    _ckernels = None


def median_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def student_step(preset, batch):
    model = StudentResNet.from_preset(preset, seed=0)
    x = np.random.default_rng(0).normal(size=(batch, 49, 10)).astype(np.float32)

    def run():
        with Tape() as tape:
            loss = T.sum(T.square(model.forward(Tensor(x))))
        tape.backward(loss, wrt=list(model.params.values()))
    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    xp = rng.normal(size=(32, 16, 51, 12)).astype(np.float32)
    h_out, w_out = 49, 10
    cols = _pykernels.im2col(xp, 3, 3, 1, 1, h_out, w_out)

    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    print(f"{'case':28s} " + " ".join(f"{n:>10s}" for n, _ in backends) + "   speedup")
    cases = [
        ("im2col 32x16x49x10", lambda m: (lambda: m.im2col(xp, 3, 3, 1, 1, h_out, w_out))),
        ("col2im 32x16x49x10", lambda m: (lambda: m.col2im(cols, 51, 12, 1, 1))),
    ]
    for preset, batch in (("tiny", 64), ("res15", 8)):
        cases.append((f"{preset} fwd+bwd batch {batch}", lambda m, p=preset, b=batch: _patched(m, student_step(p, b))))
    for name, make in cases:
        times = [median_time(make(m), args.repeats) for _, m in backends]
        speed = f"{times[0] / times[1]:8.2f}x" if len(times) > 1 else "       -"
        print(f"{name:28s} " + " ".join(f"{t * 1e3:8.2f}ms" for t in times) + f"  {speed}")


def _patched(module, fn):
    def run():
        with mock.patch.object(kernels, "im2col", module.im2col), mock.patch.object(kernels, "col2im", module.col2im):
            fn()
    return run


if __name__ == "__main__":
    main()
