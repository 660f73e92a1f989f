"""Dataset manifests and the synthetic corpus generator."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .io import read_fmap, read_kv, write_fmap, write_kv

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
GSC_KEYWORDS = ["on", "off", "left", "right", "up", "down", "go", "stop", "yes", "no"]
GSC_SILENCE = "silence"
GSC_OTHERS = ["backward", "bed", "bird", "cat", "dog", "eight", "five", "follow", "forward", "four",
              "happy", "house", "learn", "marvin", "nine", "one", "seven", "sheila", "six", "three",
              "tree", "two", "visual", "wow", "zero"]


@dataclass
class ManifestRow:
    path: Path
    label: str
    split: str


@dataclass
class Manifest:
    rows: list
    root: Path
    meta: dict

    def split(self, name: str) -> list:
        return [r for r in self.rows if r.split == name]

    def labels(self, split: str | None = None) -> list:
        rows = self.rows if split is None else self.split(split)
        return sorted({r.label for r in rows})

    def load_groups(self, split: str, labels=None) -> dict:
        """Feature maps grouped by label, stacked in manifest order."""
        groups: dict = {}
        for r in self.split(split):
            if labels is None or r.label in labels:
                groups.setdefault(r.label, []).append(read_fmap(r.path))
        return {k: np.stack(v) for k, v in sorted(groups.items())}

    def load_split(self, split: str, with_teacher: bool = False):
        """Stacked features, integer labels (index into ``names``), label names
        and, optionally, the teacher embeddings stored beside each map."""
        rows = self.split(split)
        names = self.labels()
        index = {n: i for i, n in enumerate(names)}
        x = np.stack([read_fmap(r.path) for r in rows]) if rows else np.zeros((0, 0, 0), np.float32)
        y = np.array([index[r.label] for r in rows], dtype=np.int64)
        teacher = None
        if with_teacher:
            missing = [r.path for r in rows if not teacher_path(r.path).exists()]
            if missing:
                raise FileNotFoundError(f"teacher embedding missing for {missing[0]}")
            teacher = np.stack([read_fmap(teacher_path(r.path))[0] for r in rows])
        return x, y, names, teacher


def teacher_path(feature_path) -> Path:
    p = Path(feature_path)
    return p.with_name(p.stem + ".teacher" + p.suffix)


def meta_path(manifest_path) -> Path:
    p = Path(manifest_path)
    return p.with_suffix(".meta")


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    root = path.parent
    rows, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise ValueError(f"{path}: header must be path,label,split, got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}: row {lineno}: expected 3 fields, got {len(rec)}")
            p, label, split = (v.strip() for v in rec)
            if split not in SPLITS:
                raise ValueError(f"{path}: row {lineno}: unknown split {split!r}")
            if not label:
                raise ValueError(f"{path}: row {lineno}: empty label")
            full = Path(p) if Path(p).is_absolute() else root / p
            if not full.exists():
                raise FileNotFoundError(f"{path}: row {lineno}: missing file {p}")
            if p in seen:
                log.warning("%s: row %d reuses %s", path, lineno, p)
            seen.add(p)
            rows.append(ManifestRow(full, label, split))
    meta = read_kv(meta_path(path)) if meta_path(path).exists() else {}
    return Manifest(rows, root, meta)


def write_manifest(path, rows: list, root=None, meta: dict | None = None) -> None:
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "split"])
        for r in rows:
            p = Path(r.path)
            try:
                p = p.relative_to(root)
            except ValueError:
                pass
            w.writerow([p.as_posix(), r.label, r.split])
    if meta:
        write_kv(meta_path(path), meta)


# ------------------------------------------------------------------ synthetic

@dataclass
class SyntheticConfig:
    """Clustered frame maps with a per-sample keyword span.

    Each class owns a unit-norm center.  A sample is a frames x dim map whose
    rows inside a span of ``word_frames`` consecutive frames carry
    ``center * separation``; every row gets Gaussian noise of scale
    ``sigma``.  The span start jitters by up to ``sigma * jitter_frames``
    frames around the middle, so ``sigma -> 0`` yields identical samples per
    class.  With ``label_noise`` > 0 a train/val sample keeps its label but
    carries another class's content, while its teacher embedding follows
    the content actually present.
    """

    n_classes: int = 20
    samples_per_class: int = 50
    frames: int = 49
    dim: int = 32
    separation: float = 4.0
    sigma: float = 1.0
    seed: int = 0
    word_frames: int = 8
    jitter_frames: float = 25.0
    variants: int = 1
    variant_spread: float = 0.0
    teacher_dim: int = 64
    teacher_noise: float = 0.05
    teacher_seed: int = 0
    label_noise: float = 0.15
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    gsc_shape: bool = False
    silence_gain: float = 0.0

    def __post_init__(self):
        if self.separation <= 0 or self.sigma <= 0:
            raise ValueError("separation and sigma must be positive")
        if not 1 <= self.word_frames <= self.frames:
            raise ValueError("word_frames must lie in [1, frames]")
        if not 0 <= self.label_noise < 1:
            raise ValueError("label_noise must lie in [0, 1)")


PRESETS = {
    "default": SyntheticConfig(),
    # student training corpus: MFCC-sized maps, many words
    "mswc-shape": SyntheticConfig(n_classes=40, samples_per_class=40, dim=10),
    # evaluation corpus: 10 keywords + silence enrolled, 25 others; enrollment needs clean labels
    "gsc-shape": SyntheticConfig(n_classes=36, samples_per_class=40, dim=10, gsc_shape=True, label_noise=0.0,
                                 val_fraction=0.0, test_fraction=0.5),
}


def preset(name: str, **overrides) -> SyntheticConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = asdict(PRESETS[name])
    base.update(overrides)
    return SyntheticConfig(**base)


def teacher_lift(dim: int, teacher_dim: int, seed: int) -> np.ndarray:
    """Fixed (teacher_dim, dim) map with orthonormal columns when teacher_dim >= dim."""
    rng = np.random.default_rng([seed, dim, teacher_dim])
    a = rng.normal(size=(teacher_dim, dim))
    if teacher_dim >= dim:
        q, r = np.linalg.qr(a)
        return q * np.sign(np.diag(r))
    return a / np.sqrt(dim)


def class_labels(cfg: SyntheticConfig) -> list:
    if cfg.gsc_shape:
        return GSC_KEYWORDS + [GSC_SILENCE] + GSC_OTHERS
    width = len(str(cfg.n_classes - 1))
    return [f"w{i:0{width}d}" for i in range(cfg.n_classes)]


def generate(cfg: SyntheticConfig):
    """Return (features, teacher embeddings, label names, splits) in memory."""
    rng = np.random.default_rng(cfg.seed)
    names = class_labels(cfg)
    n_cls = len(names)
    centers = rng.normal(size=(n_cls, cfg.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    offsets = rng.normal(size=(n_cls, max(cfg.variants, 1), cfg.dim)) * cfg.variant_spread
    lift = teacher_lift(cfg.dim, cfg.teacher_dim, cfg.teacher_seed)
    gains = np.ones(n_cls)
    if cfg.gsc_shape:
        gains[names.index(GSC_SILENCE)] = cfg.silence_gain

    n = cfg.samples_per_class
    n_test = int(round(n * cfg.test_fraction))
    n_val = int(round(n * cfg.val_fraction))
    split_of = ["test"] * n_test + ["val"] * n_val + ["train"] * (n - n_test - n_val)

    feats, teach, labels, splits = [], [], [], []
    for c in range(n_cls):
        for s in range(n):
            variant = int(rng.integers(max(cfg.variants, 1)))
            src = c
            flip = rng.random() < cfg.label_noise
            if flip and split_of[s] != "test":
                src = (c + 1 + int(rng.integers(n_cls - 1))) % n_cls
            clean = gains[src] * cfg.separation * (centers[src] + offsets[src, variant])
            noise = rng.normal(size=(cfg.frames, cfg.dim)) * cfg.sigma
            free = cfg.frames - cfg.word_frames
            shift = rng.uniform(-1.0, 1.0) * cfg.sigma * cfg.jitter_frames
            start = int(np.clip(np.rint(free // 2 + shift), 0, free))
            x = noise
            x[start:start + cfg.word_frames] += clean
            feats.append(x.astype(np.float32))
            target = lift @ (gains[src] * cfg.separation * centers[src])
            target = target + rng.normal(size=cfg.teacher_dim) * cfg.teacher_noise * cfg.sigma
            teach.append(target.astype(np.float32))
            labels.append(names[c])
            splits.append(split_of[s])
    return np.stack(feats), np.stack(teach), labels, splits


def synth_dataset(cfg: SyntheticConfig, out_dir) -> Manifest:
    """Write one FMAP per sample plus its ``.teacher`` embedding and a manifest."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    feats, teach, labels, splits = generate(cfg)
    rows = []
    counters: dict = {}
    for x, t, label, split in zip(feats, teach, labels, splits):
        i = counters.get(label, 0)
        counters[label] = i + 1
        path = out / "feats" / f"{label}_{i:04d}.fmap"
        write_fmap(path, x)
        write_fmap(teacher_path(path), t)
        rows.append(ManifestRow(path, label, split))
    meta = {f"synth.{f.name}": getattr(cfg, f.name) for f in fields(cfg)}
    if cfg.gsc_shape:
        meta["enrolled"] = GSC_KEYWORDS + [GSC_SILENCE]
        meta["others"] = GSC_OTHERS
    write_manifest(out / "manifest.csv", rows, root=out, meta=meta)
    return load_manifest(out / "manifest.csv")
