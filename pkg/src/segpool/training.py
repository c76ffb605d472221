"""The emotion model (pooling -> 32-d projection -> three heads) and its training loop.

Each utterance is pooled on its own, so attention never needs padding;
mini-batches are formed from the pooled fixed-size vectors.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, DivergedLoss, ShapeMismatch, TruncatedPayload, VersionUnsupported
from .neural import (Adam, Linear, MultiHeadSelfAttention, class_weights, lr_schedule,
                     mae_loss, mtl_loss, weighted_cross_entropy, warmup_steps)
from .pooling import effective_keep

EMOTIONS = ("angry", "happy", "neutral", "sad")
POOLING_MODES = ("gap_only", "sap_only", "sr")


@dataclass
class ModelConfig:
    d: int
    n_classes: int = 4
    projection_dim: int = 32
    heads: int = 4
    residual: bool = True
    alpha: float = 0.5
    beta: float = 0.25
    gamma: float = 0.25
    pooling_mode: str = "sr"
    bypass_attention: bool = False
    batch_size: int = 64
    epochs: int = 30
    base_lr: float = 3e-5
    warmup_ratio: float = 0.1
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.pooling_mode not in POOLING_MODES:
            raise ValueError(f"pooling_mode must be one of {POOLING_MODES}")
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("loss coefficients must be non-negative with a positive sum")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.d % self.heads:
            raise ValueError(f"feature dim {self.d} not divisible by {self.heads} heads")

    @property
    def uses_sap(self) -> bool:
        return self.pooling_mode != "gap_only"

    @property
    def representation_dim(self) -> int:
        return 2 * self.d if self.pooling_mode == "sr" else self.d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class Example:
    """One utterance ready for the model. Valence/arousal are already scaled to [0, 1]."""

    features: np.ndarray
    keep: np.ndarray
    label: int
    valence: float
    arousal: float
    id: str = ""


@dataclass
class Prepared:
    gap: np.ndarray
    speech: np.ndarray | None
    fallback: bool


@dataclass
class LossParts:
    total: float
    discrete: float
    valence: float
    arousal: float

    def as_dict(self) -> dict:
        return asdict(self)


class EmotionModel:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        c = config
        self.attention = None
        if c.uses_sap and not c.bypass_attention:
            self.attention = MultiHeadSelfAttention(c.d, c.heads, c.residual, rng, dtype)
        self.projection = Linear(c.representation_dim, c.projection_dim, rng, dtype)
        self.classifier = Linear(c.projection_dim, c.n_classes, rng, dtype)
        self.valence_head = Linear(c.projection_dim, 1, rng, dtype)
        self.arousal_head = Linear(c.projection_dim, 1, rng, dtype)
        self.input_mean = np.zeros(c.d, dtype=dtype)
        self.input_scale = np.ones(c.d, dtype=dtype)

    def modules(self) -> dict:
        mods = {"projection": self.projection, "classifier": self.classifier,
                "valence": self.valence_head, "arousal": self.arousal_head}
        if self.attention is not None:
            mods = {"attention": self.attention, **mods}
        return mods

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": v for m, mod in self.modules().items() for k, v in mod.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": v for m, mod in self.modules().items() for k, v in mod.grads.items()}

    def zero_grad(self) -> None:
        for mod in self.modules().values():
            mod.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus input-normalization buffers, as copies."""
        blocks = {k: v.copy() for k, v in self.named_parameters().items()}
        blocks["input.mean"] = self.input_mean.copy()
        blocks["input.scale"] = self.input_scale.copy()
        return blocks

    def load_state(self, blocks: dict[str, np.ndarray]) -> None:
        target = self.named_parameters()
        expected = set(target) | {"input.mean", "input.scale"}
        if set(blocks) != expected:
            raise ShapeMismatch(f"checkpoint blocks {sorted(blocks)} do not match model blocks {sorted(expected)}")
        for name, arr in blocks.items():
            dest = self.input_mean if name == "input.mean" else self.input_scale if name == "input.scale" else target[name]
            if dest.shape != arr.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {arr.shape}, model shape {dest.shape}")
            dest[...] = arr

    def fit_scaler(self, examples: list[Example]) -> None:
        frames = np.concatenate([ex.features for ex in examples]).astype(np.float64)
        self.input_mean[...] = frames.mean(axis=0)
        self.input_scale[...] = 1.0 / np.maximum(frames.std(axis=0), 1e-6)

    def prepare(self, features: np.ndarray, keep: np.ndarray) -> Prepared:
        if features.ndim != 2 or features.shape[1] != self.config.d:
            raise ShapeMismatch(f"model expects d={self.config.d} features, got {features.shape}")
        x = ((features - self.input_mean) * self.input_scale).astype(self.dtype)
        speech, fallback = None, False
        if self.config.uses_sap:
            keep, fallback = effective_keep(keep)
            if keep.shape != (x.shape[0],):
                raise ShapeMismatch(f"mask of length {keep.shape} for {x.shape[0]} frames")
            speech = x[keep]
        return Prepared(x.mean(axis=0), speech, fallback)

    def _represent(self, prep: Prepared, train: bool):
        mode = self.config.pooling_mode
        if mode == "gap_only":
            return prep.gap, None
        cache = None
        if self.attention is None:
            h = prep.speech
        elif train:
            h, cache = self.attention.forward_train(prep.speech)
        else:
            h = self.attention.forward(prep.speech)
        pooled = h.mean(axis=0)
        rep = pooled if mode == "sap_only" else np.concatenate([prep.gap, pooled])
        return rep, cache

    def forward_batch(self, preps: list[Prepared], train: bool = False):
        reps, caches = zip(*(self._represent(p, train) for p in preps))
        reps = np.stack(reps)
        z = self.projection.forward(reps)
        logits = self.classifier.forward(z)
        valence = self.valence_head.forward(z)[:, 0]
        arousal = self.arousal_head.forward(z)[:, 0]
        return logits, valence, arousal, (reps, z, caches)

    def backward_batch(self, preps: list[Prepared], saved, d_logits, d_valence, d_arousal) -> None:
        reps, z, caches = saved
        dz = self.classifier.backward(z, d_logits)
        dz += self.valence_head.backward(z, d_valence[:, None])
        dz += self.arousal_head.backward(z, d_arousal[:, None])
        d_rep = self.projection.backward(reps, dz)
        if self.attention is None:
            return
        d = self.config.d
        offset = d if self.config.pooling_mode == "sr" else 0
        for prep, cache, grad in zip(preps, caches, d_rep):
            n = prep.speech.shape[0]
            d_h = np.broadcast_to(grad[offset:offset + d] / n, (n, d)).astype(self.dtype)
            self.attention.backward(cache, d_h)

    def forward_utterance(self, features: np.ndarray, keep: np.ndarray) -> tuple[np.ndarray, float, float]:
        logits, valence, arousal, _ = self.forward_batch([self.prepare(features, keep)])
        return logits[0], float(valence[0]), float(arousal[0])


def batch_loss(model: EmotionModel, preps: list[Prepared], labels: np.ndarray, valence: np.ndarray,
               arousal: np.ndarray, weights: np.ndarray, backward: bool = False) -> LossParts:
    c = model.config
    logits, v_pred, a_pred, saved = model.forward_batch(preps, train=backward)
    ce, d_logits = weighted_cross_entropy(logits, labels, weights)
    mae_v, d_v = mae_loss(v_pred, valence.astype(v_pred.dtype))
    mae_a, d_a = mae_loss(a_pred, arousal.astype(a_pred.dtype))
    total = mtl_loss(ce, mae_v, mae_a, c.alpha, c.beta, c.gamma)
    if backward:
        dt = model.dtype
        model.backward_batch(preps, saved, (c.alpha * d_logits).astype(dt),
                             (c.beta * d_v).astype(dt), (c.gamma * d_a).astype(dt))
    return LossParts(total, ce, mae_v, mae_a)


class EarlyStopping:
    """Track the best monitored loss; signal a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch: int | None = None
        self.best_state = None
        self.stale = 0

    def update(self, epoch: int, loss: float, snapshot) -> bool:
        if loss < self.best_loss:
            self.best_loss, self.best_epoch = loss, epoch
            self.best_state = snapshot()
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainedModel:
    model: EmotionModel
    config: ModelConfig
    diagnostics: dict = field(default_factory=dict)


def _arrays(examples: list[Example]):
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    valence = np.array([ex.valence for ex in examples], dtype=np.float64)
    arousal = np.array([ex.arousal for ex in examples], dtype=np.float64)
    return labels, valence, arousal


def train(config: ModelConfig, train_set: list[Example], val_set: list[Example] | None = None,
          log_path=None) -> TrainedModel:
    """Mini-batch MTL training with warmup+cosine Adam and early stopping on validation loss.

    When ``val_set`` is empty the training-set loss is monitored instead.
    The returned model carries the parameters of the best epoch.
    """
    if not train_set:
        raise ValueError("training set is empty")
    labels, valence, arousal = _arrays(train_set)
    weights = class_weights(np.bincount(labels, minlength=config.n_classes))

    model = EmotionModel(config)
    model.fit_scaler(train_set)
    preps = [model.prepare(ex.features, ex.keep) for ex in train_set]
    monitor_set = val_set if val_set else train_set
    monitor_preps = [model.prepare(ex.features, ex.keep) for ex in monitor_set]
    m_labels, m_valence, m_arousal = _arrays(monitor_set)

    n = len(train_set)
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    optimizer = Adam(model.named_parameters(), config.base_lr, total_steps, config.warmup_ratio)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    stopper = EarlyStopping(config.patience)
    fallback_count = sum(p.fallback for p in preps) + sum(p.fallback for p in monitor_preps)

    log = []
    log.append({"type": "config", "alpha": config.alpha, "beta": config.beta, "gamma": config.gamma,
                "projection_dim": config.projection_dim, "patience": config.patience,
                "warmup_ratio": config.warmup_ratio, "warmup_steps": warmup_steps(total_steps, config.warmup_ratio),
                "lr_schedule": "cosine", "base_lr": config.base_lr, "batch_size": config.batch_size,
                "epochs": config.epochs, "total_steps": total_steps, "pooling_mode": config.pooling_mode,
                "seed": config.seed, "class_weights": weights.tolist(), "fallback_count": fallback_count})
    curves = {"train_total": [], "val_total": []}
    epochs_run = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for b in range(batches_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            model.zero_grad()
            step = optimizer.step_count
            parts = batch_loss(model, [preps[i] for i in idx], labels[idx], valence[idx], arousal[idx],
                               weights, backward=True)
            if not math.isfinite(parts.total):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}, step {step}")
            multiplier = optimizer.current_multiplier()
            lr = optimizer.step(model.named_grads())
            log.append({"type": "step", "epoch": epoch, "step": step, "lr": lr,
                        "lr_multiplier": multiplier, "loss": parts.total})
            epoch_loss += parts.total * len(idx)
        val = batch_loss(model, monitor_preps, m_labels, m_valence, m_arousal, weights)
        if not math.isfinite(val.total):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        epochs_run = epoch
        curves["train_total"].append(epoch_loss / n)
        curves["val_total"].append(val.total)
        log.append({"type": "epoch", "epoch": epoch, "train_loss": epoch_loss / n,
                    "val_loss": val.as_dict(), "lr": config.base_lr * optimizer.current_multiplier(),
                    "fallback_count": fallback_count})
        if stopper.update(epoch, val.total, model.state):
            break
    if optimizer.step_count == total_steps:
        log.append({"type": "schedule_end", "step": total_steps,
                    "lr_multiplier": lr_schedule(total_steps, total_steps, config.warmup_ratio)})

    model.load_state(stopper.best_state)
    diagnostics = {"best_epoch": stopper.best_epoch, "best_val_loss": stopper.best_loss,
                   "epochs_run": epochs_run, "total_steps": total_steps, "steps_run": optimizer.step_count,
                   "fallback_count": fallback_count, "seed": config.seed, "loss_curves": curves}
    if log_path is not None:
        Path(log_path).write_text("".join(json.dumps(rec, sort_keys=True) + "\n" for rec in log))
    return TrainedModel(model, config, diagnostics)


def predict(model: EmotionModel, examples: list[Example]):
    """Return predicted class indices, valence and arousal (both on the [0, 1] scale)."""
    preps = [model.prepare(ex.features, ex.keep) for ex in examples]
    logits, valence, arousal, _ = model.forward_batch(preps)
    return logits.argmax(axis=1), valence.astype(np.float64), arousal.astype(np.float64), sum(p.fallback for p in preps)


# Checkpoint layout (little-endian):
#   magic b"SAPC" | version u32 | meta_len u32 | meta JSON (config + diagnostics)
#   | n_blocks u32 | per block: name_len u16, name utf-8, ndim u8, dims u32 * ndim, float32 data
CKPT_MAGIC = b"SAPC"
CKPT_VERSION = 1


def save_checkpoint(trained: TrainedModel, path) -> None:
    meta = json.dumps({"config": trained.config.to_dict(), "diagnostics": trained.diagnostics},
                      sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta]
    blocks = trained.model.state()
    parts.append(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype="<f4")
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayload(f"{self.path}: checkpoint ends early at byte {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expect_pooling: str | None = None) -> TrainedModel:
    """Read a checkpoint; ``expect_pooling`` guards against evaluating with the wrong pooling mode."""
    reader = _Reader(Path(path).read_bytes(), path)
    if len(reader.data) < 8:
        raise VersionUnsupported(f"{path}: file too short to hold a checkpoint header")
    if reader.take(4) != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint")
    version, meta_len = reader.unpack("<II")
    if version != CKPT_VERSION:
        raise VersionUnsupported(f"{path}: checkpoint version {version}")
    meta = json.loads(reader.take(meta_len))
    config = ModelConfig.from_dict(meta["config"])
    if expect_pooling is not None and config.pooling_mode != expect_pooling:
        raise ShapeMismatch(f"checkpoint was trained with {config.pooling_mode}, evaluation expects {expect_pooling}")
    (n_blocks,) = reader.unpack("<I")
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode()
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    model = EmotionModel(config)
    model.load_state(blocks)
    return TrainedModel(model, config, meta["diagnostics"])
