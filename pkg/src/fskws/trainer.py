"""Batch sampling, the training loop for heads and students, checkpoint
selection and seed-stability reporting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import tensor as T
from .io import write_kv
from .models import Encoder, save_model
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    strategy: str = "kd+scaf"
    lam: float | None = None
    batch_size: int = 512
    n_batches: int | None = None
    epochs: int | None = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_interval: int | None = None
    val_triplets: int = 512
    triplet_margin: float = 0.5
    scaf_margin: float = math.radians(28.6)
    scaf_scale: float = 32.0
    subcenters: int = 3

    def loss_config(self) -> L.LossConfig:
        return L.LossConfig(self.strategy, self.lam, self.triplet_margin, self.scaf_margin,
                            self.scaf_scale, self.subcenters)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    teacher: np.ndarray | None = None
    names: list = field(default_factory=list)

    def __len__(self):
        return self.x.shape[0]


@dataclass
class Checkpoint:
    step: int
    weights: dict
    val_loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list  # (step, train_loss, val_loss)
    snapshots: list  # (step, val_loss)
    initial_train_loss: float
    final_train_loss: float


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return self.anchors.shape[0]


def sample_triplets(labels: np.ndarray, n: int, rng) -> TripletBatch:
    """Uniform anchor class, two distinct samples of it, and one sample of a
    different, uniformly drawn class.  Returns sample indices."""
    labels = np.asarray(labels)
    classes, inverse, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2 or not np.any(sizes >= 2):
        raise ValueError("triplets need two labels and a label with at least two samples")
    order = np.argsort(inverse, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    eligible = np.flatnonzero(sizes >= 2)
    anchor_cls = eligible[rng.integers(eligible.size, size=n)]
    first = rng.integers(0, sizes[anchor_cls])
    second = rng.integers(0, sizes[anchor_cls] - 1)
    second += second >= first
    neg_cls = rng.integers(0, classes.size - 1, size=n)
    neg_cls += neg_cls >= anchor_cls
    neg_pos = rng.integers(0, sizes[neg_cls])
    a = order[offsets[anchor_cls] + first]
    p = order[offsets[anchor_cls] + second]
    neg = order[offsets[neg_cls] + neg_pos]
    return TripletBatch(a, p, neg)


class Objective:
    """Evaluates one strategy's loss for a batch of sample indices."""

    def __init__(self, model: Encoder, loss_cfg: L.LossConfig, n_classes: int, rng):
        self.model = model
        self.cfg = loss_cfg
        self.centers = None
        if loss_cfg.task == "scaf":
            self.centers = Tensor(L.init_subcenters(n_classes, loss_cfg.subcenters, model.emb_dim, rng),
                                  requires_grad=True)

    @property
    def uses_triplets(self) -> bool:
        return self.cfg.task == "triplet"

    def params(self) -> dict:
        params = dict(self.model.params)
        if self.centers is not None:
            params["loss.centers"] = self.centers
        return params

    def __call__(self, data: Dataset, batch) -> Tensor:
        cfg = self.cfg
        if isinstance(batch, TripletBatch):
            idx = np.concatenate([batch.anchors, batch.positives, batch.negatives])
        else:
            idx = np.asarray(batch)
        emb = self.model.forward(Tensor(data.x[idx]))
        task = None
        if cfg.task == "triplet":
            n = len(batch)
            task = L.triplet_loss(T.take(emb, np.arange(n)), T.take(emb, np.arange(n, 2 * n)),
                                  T.take(emb, np.arange(2 * n, 3 * n)), cfg.triplet_margin)
        elif cfg.task == "scaf":
            task = L.scaf_loss(emb, data.y[idx], self.centers, cfg.scaf_margin, cfg.scaf_scale)
        if not cfg.uses_kd:
            return task
        if data.teacher is None:
            raise ValueError(f"strategy {cfg.kind!r} needs teacher embeddings")
        kd = L.kd_mse(emb, Tensor(data.teacher[idx]))
        if task is None:
            return kd
        return L.combined_loss(kd, task, cfg.lam)


def _chunk_triplets(batch: TripletBatch, size: int) -> list:
    return [TripletBatch(batch.anchors[i:i + size], batch.positives[i:i + size], batch.negatives[i:i + size])
            for i in range(0, len(batch), size)]


def _mean_loss(objective: Objective, data: Dataset, batches: list) -> float:
    total = count = 0.0
    for b in batches:
        n = len(b)
        total += float(objective(data, b).data) * n
        count += n
    return total / count


def fit(model: Encoder, train: Dataset, val: Dataset, cfg: TrainConfig) -> TrainResult:
    """Train ``model`` in place and return the minimum-validation-loss checkpoint.

    The returned weights are also loaded back into ``model``; for SCAF
    strategies they include ``loss.centers``.
    """
    loss_cfg = cfg.loss_config()
    if loss_cfg.uses_kd and (train.teacher is None or val.teacher is None):
        raise ValueError(f"strategy {cfg.strategy!r} needs teacher embeddings for every sample")
    if len(val) == 0:
        raise ValueError("validation split is empty")
    rng = np.random.default_rng(cfg.seed)
    n_classes = int(max(train.y.max(), val.y.max())) + 1
    objective = Objective(model, loss_cfg, n_classes, np.random.default_rng([cfg.seed, 2]))
    params = objective.params()
    state = AdamState()

    batches_per_epoch = max(1, math.ceil(len(train) / cfg.batch_size))
    total = cfg.n_batches if cfg.n_batches is not None else cfg.epochs * batches_per_epoch
    interval = cfg.val_interval or (100 if objective.uses_triplets and cfg.n_batches else batches_per_epoch)

    val_rng = np.random.default_rng([cfg.seed, 1])
    if objective.uses_triplets:
        val_batches = _chunk_triplets(sample_triplets(val.y, cfg.val_triplets, val_rng), cfg.batch_size)
        probe = _chunk_triplets(sample_triplets(train.y, cfg.val_triplets, val_rng), cfg.batch_size)
    else:
        val_batches = [np.arange(s, min(s + cfg.batch_size, len(val))) for s in range(0, len(val), cfg.batch_size)]
        probe = [np.arange(s, min(s + cfg.batch_size, len(train))) for s in range(0, len(train), cfg.batch_size)]

    def snapshot(step):
        return Checkpoint(step, {k: p.data.copy() for k, p in params.items()},
                          _mean_loss(objective, val, val_batches))

    initial_train = _mean_loss(objective, train, probe)
    best = snapshot(0)
    snapshots = [(0, best.val_loss)]
    history = [(0, initial_train, best.val_loss)]
    order = rng.permutation(len(train))
    cursor = 0
    running = []
    for step in range(1, total + 1):
        if objective.uses_triplets:
            batch = sample_triplets(train.y, cfg.batch_size, rng)
        else:
            if cursor >= len(train):
                order = rng.permutation(len(train))
                cursor = 0
            batch = order[cursor:cursor + cfg.batch_size]
            cursor += cfg.batch_size
        with Tape() as tape:
            loss = objective(train, batch)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(step, value)
        tape.backward(loss, wrt=list(params.values()))
        adam_step(params, {k: p.grad for k, p in params.items()}, state, cfg.lr, cfg.beta1, cfg.beta2,
                  cfg.adam_eps)
        if objective.centers is not None:
            L.renormalize_centers(objective.centers)
        running.append(value)
        if step % interval == 0 or step == total:
            snap = snapshot(step)
            snapshots.append((step, snap.val_loss))
            history.append((step, float(np.mean(running)), snap.val_loss))
            running = []
            if snap.val_loss < best.val_loss:
                best = snap
    final_train = _mean_loss(objective, train, probe)
    for k, p in params.items():
        p.data = best.weights[k].copy()
    return TrainResult(best, history, snapshots, initial_train, final_train)


def train_teacher_head(model: Encoder, train: Dataset, val: Dataset, cfg: TrainConfig) -> TrainResult:
    if cfg.strategy not in ("triplet", "scaf"):
        raise ValueError(f"teacher heads train with triplet or scaf, not {cfg.strategy!r}")
    return fit(model, train, val, cfg)


def train_student(model: Encoder, train: Dataset, val: Dataset, cfg: TrainConfig) -> TrainResult:
    return fit(model, train, val, cfg)


def write_log(path, history: list) -> None:
    lines = ["step,train_loss,val_loss"] + [f"{s},{tr!r},{va!r}" for s, tr, va in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_checkpoint(model: Encoder, result: TrainResult, cfg: TrainConfig, weights_path) -> None:
    extra = {k: v for k, v in result.checkpoint.weights.items() if k.startswith("loss.")}
    save_model(model, weights_path, extra)
    write_kv(str(weights_path) + ".meta", dict(strategy=cfg.strategy, lam=cfg.loss_config().lam,
                                              seed=cfg.seed, step=result.checkpoint.step,
                                              val_loss=result.checkpoint.val_loss))


def relative_spread(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    m = v.mean()
    return 0.0 if m == 0 else float((v.max() - v.min()) / abs(m))


def seed_stability(run, seeds) -> dict:
    """``run(seed) -> (val_loss, auroc)``; report (max - min) / mean of each."""
    results = [run(s) for s in seeds]
    return {"val_loss_spread": relative_spread([r[0] for r in results]),
            "auroc_spread": relative_spread([r[1] for r in results]),
            "runs": results}
