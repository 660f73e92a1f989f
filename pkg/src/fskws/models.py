"""Embedding encoders: pooling and attention heads over frame features, and
the residual convnet student over MFCC maps.

Every model exposes ``params`` (name -> Tensor leaf), a batched
``forward(x)`` taking a (B, T, D) Tensor, and ``embed`` for tape-free
inference on numpy arrays.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .io import read_kv, read_weights, write_kv, write_weights
from .tensor import Tensor

MFCC_SHAPE = (49, 10)

STUDENT_PRESETS = {
    # 66 maps rather than 45 keep the 13-conv stack near the 480k budget
    "res15": dict(channels=66, n_blocks=6, dilations=(1, 1, 1, 2, 2, 2, 4, 4, 4, 8, 8, 8)),
    "tiny": dict(channels=8, n_blocks=2, dilations=(1, 1, 1, 2)),
    "desk": dict(channels=16, n_blocks=2, dilations=(1, 1, 2, 2)),
}


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Encoder:
    arch = ""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _add(self, name, value):
        self.params[name] = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    @property
    def input_shape(self) -> tuple:
        raise NotImplementedError

    def check_input(self, x) -> None:
        shape = tuple(x.shape[-2:])
        if len(x.shape) != 3 or shape != tuple(self.input_shape):
            raise ValueError(f"{self.arch}: expected input (B, {self.input_shape[0]}, {self.input_shape[1]}), "
                             f"got {tuple(x.shape)}")

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise KeyError(f"missing weight {k!r}")
            if state[k].shape != p.data.shape:
                raise ValueError(f"weight {k!r}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float32)

    def embed(self, x: np.ndarray, normalize: bool = True, batch_size: int = 256) -> np.ndarray:
        """Tape-free forward over a stack of feature maps, optionally L2-normalized."""
        x = np.asarray(x, dtype=np.float32)
        single = x.ndim == 2
        if single:
            x = x[None]
        self.check_input(x)
        out = np.concatenate([self.forward(Tensor(x[i:i + batch_size])).data
                              for i in range(0, x.shape[0], batch_size)], axis=0)
        if normalize:
            out = normalize_rows(out)
        return out[0] if single else out


def normalize_rows(e: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(e, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero-norm embedding")
    return (e / norm).astype(np.float32)


class PoolingEncoder(Encoder):
    """Mean over time, then a linear projection."""

    arch = "pooling"

    def __init__(self, in_dim: int, frames: int = 49, emb_dim: int = 64, seed: int = 0):
        super().__init__()
        self.in_dim, self.frames, self.emb_dim = in_dim, frames, emb_dim
        rng = np.random.default_rng(seed)
        self._add("proj_weight", _uniform(rng, (in_dim, emb_dim), in_dim))
        self._add("proj_bias", np.zeros(emb_dim))

    @property
    def input_shape(self):
        return (self.frames, self.in_dim)

    def forward(self, x):
        x = T._as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"pooling: input dim {x.shape[-1]} != {self.in_dim}")
        pooled = T.mean(x, axis=1)
        return T.matmul(pooled, self.params["proj_weight"]) + self.params["proj_bias"]

    def config(self):
        return dict(arch=self.arch, in_dim=self.in_dim, frames=self.frames, emb_dim=self.emb_dim)


class AttentionEncoder(Encoder):
    """Single-head self-attention, PReLU, a shared T-tap temporal filter and
    a linear output layer."""

    arch = "attention"

    def __init__(self, in_dim: int, frames: int = 49, emb_dim: int = 64, seed: int = 0):
        super().__init__()
        self.in_dim, self.frames, self.emb_dim = in_dim, frames, emb_dim
        rng = np.random.default_rng(seed)
        for name in ("wq", "wk", "wv"):
            self._add(name, _uniform(rng, (in_dim, in_dim), in_dim))
        self._add("prelu_slopes", np.full(in_dim, 0.25))
        self._add("temporal_weights", np.full(frames, 1.0 / frames))
        self._add("out_weight", _uniform(rng, (in_dim, emb_dim), in_dim))
        self._add("out_bias", np.zeros(emb_dim))

    @property
    def input_shape(self):
        return (self.frames, self.in_dim)

    def attention(self, x):
        """Return (softmax weights, attended values) for a (B, T, D) input."""
        p = self.params
        q = T.matmul(x, p["wq"])
        k = T.matmul(x, p["wk"])
        v = T.matmul(x, p["wv"])
        scores = T.mul(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(self.in_dim))
        weights = T.softmax(scores, axis=-1)
        return weights, T.matmul(weights, v)

    def forward(self, x):
        x = T._as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.in_dim or x.shape[1] != self.frames:
            raise ValueError(f"attention: expected (B, {self.frames}, {self.in_dim}), got {x.shape}")
        p = self.params
        _, attended = self.attention(x)
        act = T.prelu(attended, p["prelu_slopes"])
        summary = T.conv1d_time(act, p["temporal_weights"])  # (B, 1, D)
        summary = T.reshape(summary, (x.shape[0], self.in_dim))
        return T.matmul(summary, p["out_weight"]) + p["out_bias"]

    def config(self):
        return dict(arch=self.arch, in_dim=self.in_dim, frames=self.frames, emb_dim=self.emb_dim)


class StudentResNet(Encoder):
    """Residual 3x3 convnet on a 1-channel MFCC image, global average pool,
    linear head."""

    arch = "student"

    def __init__(self, channels: int = 8, n_blocks: int = 2, dilations=(1, 1, 1, 2),
                 emb_dim: int = 64, input_shape=MFCC_SHAPE, seed: int = 0, preset: str = "custom"):
        super().__init__()
        dilations = tuple(int(d) for d in dilations)
        if len(dilations) != 2 * n_blocks:
            raise ValueError(f"need {2 * n_blocks} dilations for {n_blocks} blocks, got {len(dilations)}")
        self.channels, self.n_blocks, self.dilations = channels, n_blocks, dilations
        self.emb_dim, self.preset = emb_dim, preset
        self._input_shape = tuple(input_shape)
        rng = np.random.default_rng(seed)
        c = channels
        self._add("stem.w", _uniform(rng, (c, 1, 3, 3), 9))
        self._add("stem.b", np.zeros(c))
        for i in range(n_blocks):
            for j in (1, 2):
                self._add(f"block{i}.conv{j}.w", _uniform(rng, (c, c, 3, 3), 9 * c))
                self._add(f"block{i}.conv{j}.b", np.zeros(c))
        self._add("head.w", _uniform(rng, (c, emb_dim), c))
        self._add("head.b", np.zeros(emb_dim))

    @classmethod
    def from_preset(cls, name: str, emb_dim: int = 64, seed: int = 0):
        return cls(**STUDENT_PRESETS[name], emb_dim=emb_dim, seed=seed, preset=name)

    @property
    def input_shape(self):
        return self._input_shape

    def analytic_param_count(self) -> int:
        c = self.channels
        return (9 * c + c) + 2 * self.n_blocks * (9 * c * c + c) + (c * self.emb_dim + self.emb_dim)

    def macs(self) -> int:
        positions = self._input_shape[0] * self._input_shape[1]
        c = self.channels
        return positions * 9 * c + 2 * self.n_blocks * positions * 9 * c * c + c * self.emb_dim

    def forward(self, x):
        x = T._as_tensor(x)
        self.check_input(x)
        p = self.params
        h = T.reshape(x, (x.shape[0], 1) + self._input_shape)
        h = T.relu(T.conv2d(h, p["stem.w"], p["stem.b"], padding=(1, 1)))
        for i in range(self.n_blocks):
            d1, d2 = self.dilations[2 * i], self.dilations[2 * i + 1]
            y = T.relu(T.conv2d(h, p[f"block{i}.conv1.w"], p[f"block{i}.conv1.b"],
                                padding=(d1, d1), dilation=(d1, d1)))
            y = T.conv2d(y, p[f"block{i}.conv2.w"], p[f"block{i}.conv2.b"],
                         padding=(d2, d2), dilation=(d2, d2))
            h = T.relu(T.residual_add(y, h))
        pooled = T.mean(h, axis=(2, 3))
        return T.matmul(pooled, p["head.w"]) + p["head.b"]

    def config(self):
        return dict(arch=self.arch, preset=self.preset, channels=self.channels, n_blocks=self.n_blocks,
                    dilations=list(self.dilations), emb_dim=self.emb_dim,
                    frames=self._input_shape[0], in_dim=self._input_shape[1])


def build_model(config: dict, seed: int = 0) -> Encoder:
    cfg = {k: v for k, v in config.items()}
    arch = cfg.pop("arch")
    if arch == "pooling":
        return PoolingEncoder(int(cfg["in_dim"]), int(cfg.get("frames", 49)), int(cfg.get("emb_dim", 64)), seed)
    if arch == "attention":
        return AttentionEncoder(int(cfg["in_dim"]), int(cfg.get("frames", 49)), int(cfg.get("emb_dim", 64)), seed)
    if arch == "student":
        preset = str(cfg.get("preset", "custom"))
        if preset in STUDENT_PRESETS and "channels" not in cfg:
            cfg.update(STUDENT_PRESETS[preset])
        dil = cfg["dilations"]
        if isinstance(dil, str):
            dil = [int(d) for d in dil.split(",")]
        return StudentResNet(int(cfg["channels"]), int(cfg["n_blocks"]), dil, int(cfg.get("emb_dim", 64)),
                             (int(cfg.get("frames", 49)), int(cfg.get("in_dim", 10))), seed, preset)
    raise ValueError(f"unknown arch {arch!r}")


def config_path_for(weights_path) -> str:
    return str(weights_path) + ".cfg"


def save_model(model: Encoder, weights_path, extra: dict | None = None) -> None:
    """Write WGT1 weights plus a ``<weights>.cfg`` key=value model config."""
    weights = model.state_dict()
    if extra:
        weights.update(extra)
    write_weights(weights_path, weights)
    write_kv(config_path_for(weights_path), model.config())


def load_model(weights_path) -> Encoder:
    cfg = read_kv(config_path_for(weights_path))
    model = build_model(cfg)
    model.load_state_dict(read_weights(weights_path))
    return model
