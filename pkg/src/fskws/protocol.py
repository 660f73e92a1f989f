"""K-shot enrollment, open-set cosine matching, threshold sweeps and the
two evaluation protocols (single-keyword trials and 11-class open set)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OTHERS = "__others__"
GRID_POINTS = 2001


@dataclass
class PrototypeSet:
    labels: list
    prototypes: np.ndarray  # (C, E), mean of normalized embeddings
    shots: int

    def __post_init__(self):
        if len(self.labels) != self.prototypes.shape[0]:
            raise ValueError("one prototype per label required")
        if not np.all(np.isfinite(self.prototypes)):
            raise ValueError("prototypes must be finite")


@dataclass
class TrialScoreSet:
    pos_dist: np.ndarray
    pos_correct: np.ndarray
    neg_dist: np.ndarray

    def __post_init__(self):
        self.pos_dist = np.asarray(self.pos_dist, dtype=np.float64)
        self.pos_correct = np.asarray(self.pos_correct, dtype=bool)
        self.neg_dist = np.asarray(self.neg_dist, dtype=np.float64)
        if self.pos_dist.shape != self.pos_correct.shape:
            raise ValueError("positive distances and correctness flags must align")


@dataclass
class EvalCurve:
    thresholds: np.ndarray
    far: np.ndarray
    rate: np.ndarray
    auroc: float

    def rate_at(self, far: float) -> float:
        """Detection rate (or accuracy) at a false-alarm rate, interpolating
        linearly between consecutive sweep points."""
        f, r = self.far, self.rate
        i = int(np.searchsorted(f, far, side="right")) - 1
        if i < 0:
            return 0.0
        if i >= len(f) - 1:
            return float(r[-1])
        f0, f1 = f[i], f[i + 1]
        if f1 == f0:
            return float(r[i])
        return float(r[i] + (r[i + 1] - r[i]) * (far - f0) / (f1 - f0))

    def summary(self) -> dict:
        return {"at_far_0.01": self.rate_at(0.01), "at_far_0.05": self.rate_at(0.05), "auroc": self.auroc}

    def to_csv(self) -> str:
        lines = ["threshold,far,rate"]
        lines += [f"{t!r},{f!r},{r!r}" for t, f, r in zip(self.thresholds.tolist(), self.far.tolist(),
                                                            self.rate.tolist())]
        lines.append(f"# auroc={self.auroc!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "EvalCurve":
        rows, auroc = [], None
        for line in text.splitlines():
            if line.startswith("# auroc="):
                auroc = float(line.split("=", 1)[1])
            elif line and not line.startswith("threshold"):
                rows.append([float(v) for v in line.split(",")])
        arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], auroc)


# ------------------------------------------------------------------ matching

def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero-norm embedding")
    return x / norm


def enroll(groups: dict, shots: int, rng) -> PrototypeSet:
    """Prototype per label = mean of ``shots`` randomly drawn normalized embeddings."""
    labels = sorted(groups)
    protos = []
    for label in labels:
        emb = np.asarray(groups[label])
        if emb.shape[0] < shots:
            raise ValueError(f"label {label!r} has {emb.shape[0]} samples, fewer than {shots} shots")
        pick = rng.choice(emb.shape[0], size=shots, replace=False)
        protos.append(_unit(emb[np.sort(pick)]).mean(axis=0))
    return PrototypeSet(labels, np.array(protos), shots)


def nearest(queries: np.ndarray, protos: PrototypeSet) -> tuple:
    """Cosine distance to the nearest prototype and its index (ties -> lowest index)."""
    if len(protos.labels) == 0:
        raise ValueError("empty prototype set")
    q = _unit(np.atleast_2d(queries))
    dist = 1.0 - q @ _unit(protos.prototypes).T
    idx = np.argmin(dist, axis=1)
    return dist[np.arange(q.shape[0]), idx], idx


def classify(e: np.ndarray, protos: PrototypeSet, threshold: float):
    dist, idx = nearest(e, protos)
    return protos.labels[int(idx[0])] if dist[0] < threshold else OTHERS


# -------------------------------------------------------------------- sweeps

def sweep(scores: TrialScoreSet, grid: np.ndarray | None = None) -> EvalCurve:
    """Sweep the acceptance threshold (accept when distance < T).

    Without a grid, thresholds sit at 0, every distinct observed distance and
    just above the largest one, so the trapezoidal area equals the pairwise
    probability P(pos < neg) + P(pos == neg)/2 with mislabelled positives
    never counted as detections.
    """
    pos, ok, neg = scores.pos_dist, scores.pos_correct, scores.neg_dist
    if pos.size == 0 or neg.size == 0:
        raise ValueError("sweep needs non-empty positive and negative score lists")
    if grid is None:
        top = np.nextafter(max(2.0, pos.max(), neg.max()), np.inf)
        grid = np.unique(np.concatenate([[0.0], pos, neg, [top]]))
    grid = np.asarray(grid, dtype=np.float64)
    neg_sorted = np.sort(neg)
    hit_sorted = np.sort(pos[ok])
    far = np.searchsorted(neg_sorted, grid, side="left") / neg.size
    rate = np.searchsorted(hit_sorted, grid, side="left") / pos.size
    return EvalCurve(grid, far, rate, _area(far, rate))


def _area(far: np.ndarray, rate: np.ndarray) -> float:
    if far[-1] < 1.0:
        far = np.append(far, 1.0)
        rate = np.append(rate, rate[-1])
    return float(np.sum((far[1:] - far[:-1]) * (rate[1:] + rate[:-1]) / 2.0))


def fixed_grid(n: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 2.0, n)


def average_curves(curves: list) -> EvalCurve:
    grid = curves[0].thresholds
    for c in curves[1:]:
        if not np.array_equal(c.thresholds, grid):
            raise ValueError("curves must share one threshold grid")
    far = np.mean([c.far for c in curves], axis=0)
    rate = np.mean([c.rate for c in curves], axis=0)
    return EvalCurve(grid, far, rate, _area(far, rate))


# ----------------------------------------------------------------- protocols

def embed_groups(model, groups: dict, normalize: bool = True) -> dict:
    return {label: model.embed(np.asarray(x), normalize=normalize) for label, x in groups.items()}


def mswc_scores(groups: dict, shots: int, n_trials: int, master_seed: int) -> TrialScoreSet:
    """Single-keyword trials: enroll ``shots`` samples of a random keyword,
    score one held-out positive and one sample of another keyword."""
    labels = sorted(groups)
    if len(labels) < 2:
        raise ValueError("single-keyword trials need at least two labels")
    for label in labels:
        if len(groups[label]) < shots + 1:
            raise ValueError(f"label {label!r} needs at least {shots + 1} samples, has {len(groups[label])}")
    mats = [_unit(groups[label]) for label in labels]
    offsets = np.cumsum([0] + [m.shape[0] for m in mats])
    flat = np.concatenate(mats, axis=0)
    n_labels = len(labels)

    enroll_idx = np.empty((n_trials, shots), dtype=np.int64)
    pos_idx = np.empty(n_trials, dtype=np.int64)
    neg_idx = np.empty(n_trials, dtype=np.int64)
    for trial in range(n_trials):
        rng = np.random.default_rng([master_seed, trial])
        kw = int(rng.integers(n_labels))
        pick = rng.choice(mats[kw].shape[0], size=shots + 1, replace=False)
        other = int(rng.integers(n_labels - 1))
        other += other >= kw
        enroll_idx[trial] = offsets[kw] + pick[:shots]
        pos_idx[trial] = offsets[kw] + pick[shots]
        neg_idx[trial] = offsets[other] + int(rng.integers(mats[other].shape[0]))

    pos = np.empty(n_trials)
    neg = np.empty(n_trials)
    chunk = 8192
    for s in range(0, n_trials, chunk):
        sl = slice(s, s + chunk)
        proto = _unit(flat[enroll_idx[sl]].mean(axis=1))
        pos[sl] = 1.0 - np.einsum("ij,ij->i", proto, flat[pos_idx[sl]])
        neg[sl] = 1.0 - np.einsum("ij,ij->i", proto, flat[neg_idx[sl]])
    return TrialScoreSet(pos, np.ones(n_trials, dtype=bool), neg)


def mswc_protocol(groups: dict, shots: int, n_trials: int = 100000, master_seed: int = 0,
                  model=None) -> EvalCurve:
    if model is not None:
        groups = embed_groups(model, groups)
    return sweep(mswc_scores(groups, shots, n_trials, master_seed))


def gsc_protocol(train: dict, test: dict, enrolled: list, others: list, shots: int,
                 repeats: int = 100, master_seed: int = 0, model=None,
                 grid: np.ndarray | None = None) -> EvalCurve:
    """Open-set classification over the enrolled classes, rejecting ``others``.

    Accuracy counts an enrolled-class test sample only when it is accepted
    and matched to its own label; the false-alarm rate is the fraction of
    others-class test samples accepted as any enrolled label.  Per-repeat
    curves are averaged on a fixed threshold grid.
    """
    for label in enrolled:
        if label not in train:
            raise ValueError(f"enrolled class {label!r} missing from the train split")
        if label not in test:
            raise ValueError(f"enrolled class {label!r} missing from the test split")
    for label in others:
        if label not in test:
            raise ValueError(f"others class {label!r} missing from the test split")
    if model is not None:
        train = embed_groups(model, {k: train[k] for k in enrolled})
        test = embed_groups(model, {k: test[k] for k in list(enrolled) + list(others)})
    grid = fixed_grid() if grid is None else grid

    enrolled_sorted = sorted(enrolled)
    pos_q = np.concatenate([_unit(test[k]) for k in enrolled_sorted])
    pos_lab = np.concatenate([np.full(len(test[k]), i) for i, k in enumerate(enrolled_sorted)])
    neg_q = np.concatenate([_unit(test[k]) for k in sorted(others)])
    curves = []
    for rep in range(repeats):
        rng = np.random.default_rng([master_seed, rep])
        protos = enroll({k: train[k] for k in enrolled_sorted}, shots, rng)
        pd, pi = nearest(pos_q, protos)
        nd, _ = nearest(neg_q, protos)
        curves.append(sweep(TrialScoreSet(pd, pi == pos_lab, nd), grid))
    return average_curves(curves)


def distance_stats(embeddings: np.ndarray, labels) -> tuple:
    """Mean cosine distance over same-label pairs and over cross-label pairs."""
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("distance_stats needs at least two labels")
    e = _unit(embeddings)
    dist = 1.0 - e @ e.T
    iu = np.triu_indices(e.shape[0], k=1)
    same = labels[iu[0]] == labels[iu[1]]
    d = dist[iu]
    if not same.any():
        raise ValueError("distance_stats needs a label with at least two samples")
    return float(d[same].mean()), float(d[~same].mean())
