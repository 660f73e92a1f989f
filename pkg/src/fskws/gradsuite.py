"""The finite-difference suite behind ``fskws gradcheck``: every primitive,
every loss and the three encoders at tiny sizes, each at several random
points."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import tensor as T
from .gradcheck import finite_diff_check
from .models import STUDENT_PRESETS, AttentionEncoder, PoolingEncoder, StudentResNet

TOLERANCE = 1e-3


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    n_checked: int
    n_skipped: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error <= TOLERANCE


def _proj(out, rng_state):
    """Scalarize an op output with a fixed random projection."""
    r = np.random.default_rng(rng_state).normal(size=out.shape)
    return T.sum(T.mul(out, r))


def _unary(op, positive=False, shape=(3, 4)):
    def make(rng):
        x = rng.normal(size=shape)
        if positive:
            x = np.abs(x) + 0.5
        return (lambda x: _proj(op(x), 1)), {"x": x}
    return make


def _binary(op, shape_a=(3, 4), shape_b=(3, 4)):
    def make(rng):
        return (lambda a, b: _proj(op(a, b), 1)), {"a": rng.normal(size=shape_a), "b": rng.normal(size=shape_b)}
    return make


def _prelu(rng):
    return (lambda x, s: _proj(T.prelu(x, s), 1)), {"x": rng.normal(size=(2, 3, 4)), "s": rng.uniform(0, 0.5, 4)}


def _where(rng):
    cond = rng.random((3, 4)) > 0.5
    return (lambda a, b: _proj(T.where(cond, a, b), 1)), {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(1, 4))}


def _concat(rng):
    return (lambda a, b: _proj(T.concatenate([a, b], axis=1), 1)), {"a": rng.normal(size=(2, 3)),
                                                                      "b": rng.normal(size=(2, 2))}


def _take(rng):
    idx = np.array([2, 0, 2, 1])
    return (lambda x: _proj(T.take(x, idx, axis=0), 1)), {"x": rng.normal(size=(3, 4))}


def _conv1d(rng):
    return (lambda x, w: _proj(T.conv1d_time(x, w, dilation=2), 1)), {"x": rng.normal(size=(2, 7, 3)),
                                                                       "w": rng.normal(size=3)}


def _conv2d(rng):
    return ((lambda x, w, b: _proj(T.conv2d(x, w, b, padding=(2, 2), dilation=(2, 2)), 1)),
            {"x": rng.normal(size=(2, 2, 5, 4)), "w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3)})


def _cross_entropy(rng):
    labels = rng.integers(0, 4, size=5)
    return (lambda z: T.cross_entropy(z, labels)), {"z": rng.normal(size=(5, 4)) * 2}


def _mse(rng):
    return (lambda a, b: T.mse(a, b)), {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))}


def _triplet(rng):
    return ((lambda a, p, n: L.triplet_loss(a, p, n, margin=0.5)),
            {k: rng.normal(size=(6, 4)) for k in ("a", "p", "n")})


def _arcface(rng):
    labels = rng.integers(0, 4, size=6)
    w = rng.normal(size=(4, 5))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return ((lambda e, w: L.arcface_loss(e, labels, w, margin=math.radians(28.6), scale=8.0)),
            {"e": rng.normal(size=(6, 5)), "w": w})


def _scaf(rng):
    labels = rng.integers(0, 4, size=6)
    return ((lambda e, c: L.scaf_loss(e, labels, c, margin=math.radians(28.6), scale=32.0)),
            {"e": rng.normal(size=(6, 5)), "c": L.init_subcenters(4, 3, 5, rng)})


def _kd(rng):
    return (lambda s, t: L.kd_mse(s, t)), {"s": rng.normal(size=(4, 6)), "t": rng.normal(size=(4, 6))}


def _kd_scaf(rng):
    labels = rng.integers(0, 3, size=5)

    def f(s, t, c):
        return L.combined_loss(L.kd_mse(s, t), L.scaf_loss(s, labels, c), 0.3)
    return f, {"s": rng.normal(size=(5, 4)), "t": rng.normal(size=(5, 4)), "c": L.init_subcenters(3, 3, 4, rng)}


def _kd_triplet(rng):
    def f(s, t):
        task = L.triplet_loss(T.take(s, np.arange(3)), T.take(s, np.arange(3, 6)), T.take(s, np.arange(6, 9)))
        return L.combined_loss(L.kd_mse(s, t), task, 0.3)
    return f, {"s": rng.normal(size=(9, 4)), "t": rng.normal(size=(9, 4))}


def _encoder(build, input_shape):
    def make(rng):
        model = build(int(rng.integers(1 << 31)))
        names = list(model.params)

        def f(x, **params):
            model.params = {k: params[k] for k in names}
            return _proj(model.forward(x), 2)
        point = {k: p.data.astype(np.float64) for k, p in model.params.items()}
        point["x"] = rng.normal(size=(2,) + input_shape)
        return f, point
    return make


def _tiny_student(seed):
    return StudentResNet(**STUDENT_PRESETS["tiny"], emb_dim=4, input_shape=(8, 6), seed=seed, preset="tiny")


# name -> (builder(rng) -> (f, point), max_coords per tensor)
CASES = {
    "add": (_binary(T.add, (3, 4), (4,)), None),
    "sub": (_binary(T.sub, (3, 1), (3, 4)), None),
    "mul": (_binary(T.mul), None),
    "residual_add": (_binary(T.residual_add), None),
    "matmul": (_binary(T.matmul, (2, 3, 4), (4, 5)), None),
    "exp": (_unary(T.exp), None),
    "log": (_unary(T.log, positive=True), None),
    "sqrt": (_unary(T.sqrt, positive=True), None),
    "square": (_unary(T.square), None),
    "relu": (_unary(T.relu), None),
    "prelu": (_prelu, None),
    "clamp": (_unary(lambda x: T.clamp(x, -0.5, 0.5)), None),
    "maximum": (_unary(lambda x: T.maximum(x, 0.2)), None),
    "where": (_where, None),
    "sum": (_unary(lambda x: T.sum(x, axis=1, keepdims=True)), None),
    "mean": (_unary(lambda x: T.mean(x, axis=0)), None),
    "max": (_unary(lambda x: T.max(x, axis=1)), None),
    "softmax": (_unary(lambda x: T.softmax(x, axis=-1)), None),
    "l2_normalize": (_unary(lambda x: T.l2_normalize(x, axis=-1)), None),
    "transpose": (_unary(lambda x: T.transpose(x), shape=(2, 3, 4)), None),
    "reshape": (_unary(lambda x: T.reshape(x, (4, 3))), None),
    "concatenate": (_concat, None),
    "take": (_take, None),
    "conv1d_time": (_conv1d, None),
    "conv2d": (_conv2d, None),
    "cross_entropy": (_cross_entropy, None),
    "mse": (_mse, None),
    "triplet_loss": (_triplet, None),
    "arcface_loss": (_arcface, None),
    "scaf_loss": (_scaf, None),
    "kd_mse": (_kd, None),
    "kd+scaf": (_kd_scaf, None),
    "kd+triplet": (_kd_triplet, None),
    "pooling_encoder": (_encoder(lambda s: PoolingEncoder(3, frames=4, emb_dim=2, seed=s), (4, 3)), None),
    "attention_encoder": (_encoder(lambda s: AttentionEncoder(3, frames=4, emb_dim=2, seed=s), (4, 3)), None),
    "student_tiny": (_encoder(_tiny_student, (8, 6)), 12),
}


def run_case(name: str, n_points: int = 10, seed: int = 0, wide_analytic: bool = True) -> CaseResult:
    make, max_coords = CASES[name]
    rng = np.random.default_rng([seed, sum(name.encode())])
    t0 = time.perf_counter()
    worst, checked, skipped = 0.0, 0, 0
    for _ in range(n_points):
        f, point = make(rng)
        rep = finite_diff_check(f, point, max_coords=max_coords, rng=rng, wide_analytic=wide_analytic)
        worst = max(worst, rep.max_rel_error)
        checked += rep.n_checked
        skipped += rep.n_skipped
    return CaseResult(name, worst, checked, skipped, time.perf_counter() - t0)


def run_suite(n_points: int = 10, seed: int = 0, names=None, wide_analytic: bool = True) -> list:
    return [run_case(n, n_points, seed, wide_analytic) for n in (names or CASES)]
