"""Central finite-difference comparison against the tape's gradients."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor, record_kinks, wide_precision


@dataclass
class GradReport:
    max_rel_error: float
    n_checked: int
    n_skipped: int

    @property
    def ok(self) -> bool:
        return self.n_checked > 0


def finite_diff_check(f, point: dict, h: float = 1e-3, eps: float = 1e-6,
                      max_coords: int | None = None, rng=None, wide_analytic: bool = True) -> GradReport:
    """Compare analytic and central-difference gradients of a scalar ``f``.

    ``f`` takes keyword Tensors named as in ``point`` and returns a scalar
    Tensor.  The central differences run in float64.  By default the tape
    gradient does too, which isolates the derivative formulas from float32
    rounding; ``wide_analytic=False`` takes it in float32 instead.  Coordinates whose ±h
    perturbation changes the branch pattern of any non-smooth primitive
    (relu, hinge, max, clamp) are skipped as kink-adjacent.

    Error per coordinate is |a - c| / (|a| + |c| + eps); the maximum is
    reported, never raised.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    dtype = np.float64 if wide_analytic else np.float32
    with wide_precision() if wide_analytic else contextlib.nullcontext():
        leaves = {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=True) for k, v in point.items()}
        with Tape() as tape:
            loss = f(**leaves)
        tape.backward(loss, wrt=list(leaves.values()))
    analytic = {k: t.grad.astype(np.float64) for k, t in leaves.items()}

    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}

    def evaluate(values):
        log = []
        with wide_precision(), record_kinks(log):
            out = f(**{k: Tensor(v) for k, v in values.items()})
        return float(out.data), log

    _, base_kinks = evaluate(base)
    worst = 0.0
    checked = skipped = 0
    for name, arr in base.items():
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_idx = np.sort(rng.choice(arr.size, size=max_coords, replace=False))
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            fp, kp = evaluate(base)
            arr[idx] = orig - h
            fm, km = evaluate(base)
            arr[idx] = orig
            if kp != base_kinks or km != base_kinks:
                skipped += 1
                continue
            central = (fp - fm) / (2 * h)
            a = analytic[name][idx]
            err = abs(a - central) / (abs(a) + abs(central) + eps)
            worst = max(worst, err)
            checked += 1
    return GradReport(worst, checked, skipped)
