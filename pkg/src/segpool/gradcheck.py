"""Finite-difference checks of every hand-written backward pass, in float64."""

from __future__ import annotations

import numpy as np

from .neural import GradCheckReport, Linear, MultiHeadSelfAttention, grad_check, mae_loss, weighted_cross_entropy
from .training import EmotionModel, ModelConfig, batch_loss


def _projection_loss(out: np.ndarray, probe: np.ndarray) -> float:
    return float(np.sum(out * probe))


def check_linear(rng: np.random.Generator) -> GradCheckReport:
    layer = Linear(5, 3, rng, dtype=np.float64)
    layer.params["bias"][:] = rng.normal(size=3)
    x = rng.normal(size=(4, 5))
    probe = rng.normal(size=(4, 3))
    params = {**layer.params, "input": x}

    def fn():
        layer.zero_grad()
        out = layer.forward(x)
        dx = layer.backward(x, probe)
        return _projection_loss(out, probe), {**layer.grads, "input": dx}

    return grad_check(fn, params)


def check_mhsa(rng: np.random.Generator, residual: bool = True) -> GradCheckReport:
    block = MultiHeadSelfAttention(8, heads=2, residual=residual, rng=rng, dtype=np.float64)
    x = rng.normal(size=(int(rng.integers(1, 7)), 8))
    probe = rng.normal(size=x.shape)
    params = {**block.params, "input": x}

    def fn():
        block.zero_grad()
        out, cache = block.forward_train(x)
        dx = block.backward(cache, probe)
        return _projection_loss(out, probe), {**block.grads, "input": dx}

    return grad_check(fn, params)


def check_weighted_ce(rng: np.random.Generator) -> GradCheckReport:
    logits = rng.normal(size=(6, 4)) * 2
    labels = rng.integers(0, 4, size=6)
    weights = rng.uniform(0.3, 3.0, size=4)

    def fn():
        loss, grad = weighted_cross_entropy(logits, labels, weights)
        return loss, {"logits": grad}

    return grad_check(fn, {"logits": logits})


def check_mae(rng: np.random.Generator) -> GradCheckReport:
    target = rng.normal(size=7)
    # keep every prediction at least 0.1 away from its target, clear of the kink
    pred = target + rng.choice([-1.0, 1.0], size=7) * rng.uniform(0.1, 1.0, size=7)

    def fn():
        loss, grad = mae_loss(pred, target)
        return loss, {"pred": grad}

    return grad_check(fn, {"pred": pred})


def check_sr_head(rng: np.random.Generator, residual: bool = True) -> GradCheckReport:
    """MHSA over speech frames, GAP ++ SAP, projection, classifier and regressors, full MTL loss."""
    config = ModelConfig(d=8, heads=2, projection_dim=6, residual=residual, pooling_mode="sr",
                         seed=int(rng.integers(0, 2**31)))
    model = EmotionModel(config, dtype=np.float64)
    for name, p in model.named_parameters().items():
        if name.endswith("bias"):
            p[:] = rng.normal(scale=0.1, size=p.shape)
    preps = []
    for _ in range(3):
        t = int(rng.integers(2, 7))
        keep = rng.random(t) < 0.6
        preps.append(model.prepare(rng.normal(size=(t, 8)), keep))
    labels = rng.integers(0, 4, size=3)
    weights = rng.uniform(0.5, 2.0, size=4)
    logits, v0, a0, _ = model.forward_batch(preps)
    # regression targets far from the current predictions so MAE stays differentiable
    valence = v0 + rng.choice([-1.0, 1.0], size=3) * rng.uniform(0.5, 1.0, size=3)
    arousal = a0 + rng.choice([-1.0, 1.0], size=3) * rng.uniform(0.5, 1.0, size=3)
    params = model.named_parameters()

    def fn():
        model.zero_grad()
        parts = batch_loss(model, preps, labels, valence, arousal, weights, backward=True)
        return parts.total, {k: v.copy() for k, v in model.named_grads().items()}

    return grad_check(fn, params)


FRAGMENTS = {
    "linear": check_linear,
    "mhsa_residual": lambda rng: check_mhsa(rng, True),
    "mhsa_plain": lambda rng: check_mhsa(rng, False),
    "weighted_ce": check_weighted_ce,
    "mae": check_mae,
    "sr_head": check_sr_head,
}


def run_gradcheck(instances: int = 20, seed: int = 0) -> dict[str, float]:
    """Worst relative error per fragment over ``instances`` random draws."""
    rng = np.random.default_rng(seed)
    worst = {}
    for name, check in FRAGMENTS.items():
        worst[name] = max(check(rng).max_error for _ in range(instances))
    return worst
