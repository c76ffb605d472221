"""Small numpy neural kernels with hand-written backward passes.

Layers keep their parameters in ``params`` and accumulate gradients in
``grads`` (same keys, same shapes). Backward calls add to ``grads``;
call ``zero_grad`` between optimizer steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BadLabel, EmptyClass, NonFiniteGradient, NonPositiveWeight, ShapeMismatch


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)


class Module:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def _init_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Linear(Module):
    """Affine map y = x W^T + b with W of shape (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = {
            "weight": xavier_uniform(rng, out_dim, in_dim, dtype),
            "bias": np.zeros(out_dim, dtype=dtype),
        }
        self._init_grads()

    @property
    def in_dim(self) -> int:
        return self.params["weight"].shape[1]

    @property
    def out_dim(self) -> int:
        return self.params["weight"].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"linear expects (n, {self.in_dim}), got {x.shape}")
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        if grad_out.shape != (x.shape[0], self.out_dim):
            raise ShapeMismatch(f"linear upstream gradient shape {grad_out.shape}")
        self.grads["weight"] += grad_out.T @ x
        self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"]


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AttentionCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    concat: np.ndarray


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention with ``heads`` heads over an (n, d) sequence.

    No biases and no normalization; an optional residual adds the input
    to the output projection.
    """

    def __init__(self, dim: int, heads: int = 4, residual: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if dim % heads:
            raise ShapeMismatch(f"model dim {dim} not divisible by {heads} heads")
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim, self.heads, self.residual = dim, heads, residual
        self.params = {name: xavier_uniform(rng, dim, dim, dtype) for name in ("w_q", "w_k", "w_v", "w_o")}
        self._init_grads()

    def _split(self, m: np.ndarray) -> np.ndarray:
        n = m.shape[0]
        return m.reshape(n, self.heads, self.dim // self.heads).transpose(1, 0, 2)

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, AttentionCache]:
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != self.dim:
            raise ShapeMismatch(f"attention expects (n >= 1, {self.dim}), got {x.shape}")
        p = self.params
        q = self._split(x @ p["w_q"].T)
        k = self._split(x @ p["w_k"].T)
        v = self._split(x @ p["w_v"].T)
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        attn = softmax(q @ k.transpose(0, 2, 1) * scale)
        concat = (attn @ v).transpose(1, 0, 2).reshape(x.shape[0], self.dim)
        out = concat @ p["w_o"].T
        if self.residual:
            out = out + x
        return out, AttentionCache(x, q, k, v, attn, concat)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_train(x)[0]

    def backward(self, cache: AttentionCache, grad_out: np.ndarray) -> np.ndarray:
        x = cache.x
        if grad_out.shape != x.shape:
            raise ShapeMismatch(f"attention upstream gradient {grad_out.shape} vs input {x.shape}")
        p, g = self.params, self.grads
        n = x.shape[0]
        scale = 1.0 / math.sqrt(self.dim // self.heads)

        g["w_o"] += grad_out.T @ cache.concat
        d_heads = self._split(grad_out @ p["w_o"])
        d_attn = d_heads @ cache.v.transpose(0, 2, 1)
        d_v = cache.attn.transpose(0, 2, 1) @ d_heads
        d_scores = cache.attn * (d_attn - np.sum(d_attn * cache.attn, axis=-1, keepdims=True)) * scale
        d_q = d_scores @ cache.k
        d_k = d_scores.transpose(0, 2, 1) @ cache.q

        grad_x = grad_out.copy() if self.residual else np.zeros_like(x)
        for name, d in (("w_q", d_q), ("w_k", d_k), ("w_v", d_v)):
            merged = d.transpose(1, 0, 2).reshape(n, self.dim)
            g[name] += merged.T @ x
            grad_x += merged @ p[name]
        return grad_x


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights N / (K * n_c); they average to one over samples."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a non-empty 1-D sequence")
    if np.any(counts < 1):
        raise EmptyClass(f"every class needs at least one sample, got counts {counts.tolist()}")
    return counts.sum() / (counts.size * counts)


def weighted_cross_entropy(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Weight-normalized cross-entropy and its gradient w.r.t. the logits.

    loss = sum_i w[y_i] * nll_i / sum_i w[y_i]
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    weights = np.asarray(weights)
    if weights.shape != (k,):
        raise ShapeMismatch(f"expected {k} class weights, got {weights.shape}")
    if np.any(weights <= 0):
        raise NonPositiveWeight("class weights must be positive")
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= k):
        raise BadLabel(f"labels must be {n} indices in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w = weights[labels].astype(logits.dtype)
    total = w.sum()
    rows = np.arange(n)
    loss = -(w * log_probs[rows, labels]).sum() / total
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad *= (w / total)[:, None]
    return float(loss), grad


def mae_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error; the subgradient at an exact tie is 0."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def mtl_loss(discrete: float, valence: float, arousal: float,
             alpha: float = 0.5, beta: float = 0.25, gamma: float = 0.25) -> float:
    if min(alpha, beta, gamma) < 0:
        raise ValueError("loss coefficients must be non-negative")
    return alpha * discrete + beta * valence + gamma * arousal


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return math.ceil(total_steps * warmup_ratio)


def lr_schedule(step: int, total_steps: int, warmup_ratio: float = 0.1) -> float:
    """Linear warmup from 0 to 1, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_steps(total_steps, warmup_ratio)
    if step < warm:
        return step / warm
    progress = (step - warm) / max(1, total_steps - warm)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam with bias correction over a dict of named parameter arrays (updated in place).

    With ``total_steps`` set, update number s (0-based) uses
    ``base_lr * lr_schedule(s, total_steps, warmup_ratio)``; otherwise
    the rate is constant.
    """

    def __init__(self, params: dict[str, np.ndarray], base_lr: float, total_steps: int | None = None,
                 warmup_ratio: float = 0.1, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.warmup_ratio = warmup_ratio
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def current_multiplier(self) -> float:
        if self.total_steps is None:
            return 1.0
        return lr_schedule(self.step_count, self.total_steps, self.warmup_ratio)

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """Apply one update and return the learning rate that was used."""
        if grads.keys() != self.params.keys():
            raise ShapeMismatch("gradient names do not match parameter names")
        lr = self.base_lr * self.current_multiplier()
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return lr


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance


# denominators below this are treated as this, so entries that are
# analytically ~0 are judged by absolute error
GRAD_CHECK_FLOOR = 1e-6


def grad_check(loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], eps: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients with central differences, per parameter.

    ``loss_and_grads`` evaluates the fragment at the current (mutable)
    values in ``params`` and returns the loss and analytic gradients
    keyed like ``params``. Run it on float64 parameters.
    """
    _, analytic = loss_and_grads()
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    report = GradCheckReport()
    for name, p in params.items():
        if not np.all(np.isfinite(analytic[name])):
            raise NonFiniteGradient(f"analytic gradient of {name} is not finite")
        numeric = np.zeros_like(analytic[name])
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_and_grads()[0]
            flat[i] = orig - eps
            down = loss_and_grads()[0]
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        if not np.all(np.isfinite(numeric)):
            raise NonFiniteGradient(f"numeric gradient of {name} is not finite")
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), GRAD_CHECK_FLOOR)
        report.errors[name] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    return report
