import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segpool.errors import BadLabel, EmptyClass, NonPositiveWeight, ShapeMismatch
from segpool.gradcheck import check_linear, check_mae, check_mhsa, check_sr_head, check_weighted_ce
from segpool.neural import (Adam, Linear, MultiHeadSelfAttention, class_weights, grad_check, lr_schedule, mae_loss,
                            mtl_loss, softmax, weighted_cross_entropy)


def reference_mhsa(x, wq, wk, wv, wo, heads, residual):
    """Loop-by-loop attention, written independently of the vectorized kernel."""
    n, d = x.shape
    dh = d // heads
    q, k, v = x @ wq.T, x @ wk.T, x @ wv.T
    concat = np.zeros((n, d))
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            scores = [sum(q[i, c] * k[j, c] for c in range(cols.start, cols.stop)) / math.sqrt(dh) for j in range(n)]
            top = max(scores)
            w = [math.exp(s - top) for s in scores]
            z = sum(w)
            for c in range(cols.start, cols.stop):
                concat[i, c] = sum(w[j] / z * v[j, c] for j in range(n))
    out = concat @ wo.T
    return out + x if residual else out


# --- linear -----------------------------------------------------------------

def test_linear_identity_and_constant():
    layer = Linear(3, 3, dtype=np.float64)
    layer.params["weight"][:] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(layer.forward(x), x)
    layer.params["weight"][:] = 0
    layer.params["bias"][:] = [1, 2, 3]
    assert np.all(layer.forward(x) == [1, 2, 3])


def test_linear_matches_triple_loop():
    rng = np.random.default_rng(1)
    layer = Linear(4, 2, rng, dtype=np.float64)
    layer.params["bias"][:] = rng.normal(size=2)
    x = rng.normal(size=(3, 4))
    w, b = layer.params["weight"], layer.params["bias"]
    expected = np.array([[sum(x[i, k] * w[j, k] for k in range(4)) + b[j] for j in range(2)] for i in range(3)])
    assert np.allclose(layer.forward(x), expected, atol=1e-6)


def test_linear_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Linear(4, 2).forward(np.zeros((3, 5)))


# --- attention --------------------------------------------------------------

def test_single_token_attention():
    rng = np.random.default_rng(2)
    block = MultiHeadSelfAttention(8, 2, residual=False, rng=rng, dtype=np.float64)
    x = rng.normal(size=(1, 8))
    p = block.params
    assert np.allclose(block.forward(x), x @ p["w_v"].T @ p["w_o"].T, atol=1e-12)


def test_identical_tokens_give_identical_outputs():
    block = MultiHeadSelfAttention(8, 4, rng=np.random.default_rng(3), dtype=np.float64)
    x = np.tile(np.random.default_rng(4).normal(size=(1, 8)), (5, 1))
    out = block.forward(x)
    assert np.allclose(out, out[0], atol=1e-12)


@pytest.mark.parametrize("residual", [True, False])
def test_mhsa_matches_reference(residual):
    rng = np.random.default_rng(5)
    block = MultiHeadSelfAttention(8, 2, residual=residual, rng=rng, dtype=np.float64)
    x = rng.normal(size=(5, 8))
    p = block.params
    expected = reference_mhsa(x, p["w_q"], p["w_k"], p["w_v"], p["w_o"], 2, residual)
    assert np.allclose(block.forward(x), expected, atol=1e-5)


def test_attention_rows_sum_to_one():
    block = MultiHeadSelfAttention(8, 2, rng=np.random.default_rng(6))
    _, cache = block.forward_train(np.random.default_rng(7).normal(scale=50, size=(9, 8)).astype(np.float32))
    assert np.allclose(cache.attn.sum(axis=-1), 1.0, atol=1e-6)


def test_head_divisibility():
    with pytest.raises(ShapeMismatch):
        MultiHeadSelfAttention(10, 4)


def test_mhsa_zero_upstream_gives_zero_gradients():
    block = MultiHeadSelfAttention(8, 2, residual=False, rng=np.random.default_rng(8), dtype=np.float64)
    x = np.random.default_rng(9).normal(size=(4, 8))
    _, cache = block.forward_train(x)
    dx = block.backward(cache, np.zeros_like(x))
    assert not dx.any() and not any(g.any() for g in block.grads.values())


def test_residual_adds_upstream_to_input_grad():
    rng = np.random.default_rng(10)
    plain = MultiHeadSelfAttention(8, 2, residual=False, rng=np.random.default_rng(11), dtype=np.float64)
    resid = MultiHeadSelfAttention(8, 2, residual=True, rng=np.random.default_rng(11), dtype=np.float64)
    x, g = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    dx_plain = plain.backward(plain.forward_train(x)[1], g)
    dx_resid = resid.backward(resid.forward_train(x)[1], g)
    assert np.allclose(dx_resid, dx_plain + g, atol=1e-12)


# --- finite-difference checks ------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_backward_passes_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    assert check_linear(rng).max_error < 1e-6
    assert check_mhsa(rng, True).max_error < 1e-4
    assert check_mhsa(rng, False).max_error < 1e-4
    assert check_weighted_ce(rng).max_error < 1e-4
    assert check_mae(rng).max_error < 1e-4
    assert check_sr_head(rng).max_error < 1e-4


def test_grad_check_catches_sign_flip():
    rng = np.random.default_rng(0)
    layer = Linear(4, 3, rng, dtype=np.float64)
    x = rng.normal(size=(2, 4))
    probe = rng.normal(size=(2, 3))

    def broken():
        layer.zero_grad()
        out = layer.forward(x)
        layer.backward(x, probe)
        return float(np.sum(out * probe)), {k: -v for k, v in layer.grads.items()}

    report = grad_check(broken, layer.params)
    assert report.max_error > 1e-1 and not report.passed(1e-4)


# --- losses -----------------------------------------------------------------

def test_softmax_shift_invariance_and_normalization():
    z = np.random.default_rng(1).normal(size=(5, 7)) * 30
    assert np.allclose(softmax(z).sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(softmax(z), softmax(z + 123.4), atol=1e-12)


def test_uniform_logits_give_log_k():
    loss, _ = weighted_cross_entropy(np.zeros((5, 4)), np.array([0, 1, 2, 3, 0]), np.ones(4))
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert round(loss, 4) == 1.3863


def test_single_sample_weight_cancels():
    logits = np.array([[0.3, -1.2, 2.0, 0.1]])
    a, ga = weighted_cross_entropy(logits, np.array([2]), np.array([1.0, 1.0, 1.0, 1.0]))
    b, gb = weighted_cross_entropy(logits, np.array([2]), np.array([1.0, 1.0, 7.5, 1.0]))
    assert a == pytest.approx(b, abs=1e-15) and np.allclose(ga, gb)


def test_uniform_weights_equal_plain_cross_entropy():
    rng = np.random.default_rng(2)
    logits, labels = rng.normal(size=(9, 4)), rng.integers(0, 4, 9)
    plain = -np.mean(np.log(softmax(logits)[np.arange(9), labels]))
    assert weighted_cross_entropy(logits, labels, np.full(4, 2.5))[0] == pytest.approx(plain, abs=1e-12)


def test_weighting_equals_duplicating_samples():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(6, 4))
    labels = np.array([0, 0, 1, 2, 3, 3])
    weights = np.array([1.0, 3.0, 2.0, 1.0])
    reps = weights[labels].astype(int)
    dup_logits = np.repeat(logits, reps, axis=0)
    dup_labels = np.repeat(labels, reps)
    weighted = weighted_cross_entropy(logits, labels, weights)[0]
    duplicated = weighted_cross_entropy(dup_logits, dup_labels, np.ones(4))[0]
    assert weighted == pytest.approx(duplicated, abs=1e-6)


def test_cross_entropy_errors():
    with pytest.raises(BadLabel):
        weighted_cross_entropy(np.zeros((2, 4)), np.array([0, 4]), np.ones(4))
    with pytest.raises(NonPositiveWeight):
        weighted_cross_entropy(np.zeros((2, 4)), np.array([0, 1]), np.array([1.0, 0.0, 1.0, 1.0]))


def test_class_weights():
    counts = [1103, 1636, 1708, 1084]
    n = sum(counts)
    assert np.allclose(class_weights(counts), [n / (4 * c) for c in counts], atol=1e-9, rtol=0)
    assert np.allclose(class_weights(counts), [1.2537, 0.8452, 0.8095, 1.2757], atol=2e-4)
    assert np.array_equal(class_weights([10, 10, 10, 10]), np.ones(4))
    assert np.allclose(class_weights([1, 3]), [2.0, 2 / 3])
    with pytest.raises(EmptyClass):
        class_weights([4, 0, 2])


def test_mae():
    assert mae_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))[0] == 0.0
    loss, grad = mae_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
    assert loss == 1.5 and grad.tolist() == [0.5, 0.5]
    assert mae_loss(np.array([2.0]), np.array([2.0]))[1].tolist() == [0.0]
    with pytest.raises(ShapeMismatch):
        mae_loss(np.zeros(2), np.zeros(3))


def test_mtl_loss():
    assert mtl_loss(2, 4, 4, 0.5, 0.25, 0.25) == 3.0
    assert mtl_loss(2, 4, 4, 0.5, 0.0, 0.0) == 1.0
    assert mtl_loss(0, 0, 0) == 0.0
    with pytest.raises(ValueError):
        mtl_loss(1, 1, 1, -0.1, 0.5, 0.5)


# --- optimizer and schedule ----------------------------------------------------

def test_schedule_landmarks():
    assert lr_schedule(0, 100, 0.1) == 0.0
    assert lr_schedule(10, 100, 0.1) == 1.0
    assert lr_schedule(5, 100, 0.1) == 0.5
    assert lr_schedule(100, 100, 0.1) == pytest.approx(0.0, abs=1e-15)
    assert lr_schedule(55, 100, 0.1) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        lr_schedule(101, 100)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 5000), st.floats(0.01, 0.5))
def test_schedule_bounded_and_continuous_at_boundary(total, ratio):
    warm = math.ceil(total * ratio)
    values = [lr_schedule(s, total, ratio) for s in range(0, total + 1, max(1, total // 50))]
    assert all(0.0 <= v <= 1.0 for v in values)
    if 1 <= warm < total:
        before = lr_schedule(warm - 1, total, ratio)
        after = lr_schedule(warm, total, ratio)
        # one step on either side of the peak differs by at most one warmup increment
        assert after == 1.0 and 1.0 - before <= 1.0 / warm + 1e-12


def test_adam_first_step_is_lr_sign():
    p = {"w": np.array([0.5, -0.5, 2.0])}
    opt = Adam(p, base_lr=0.01)
    opt.step({"w": np.array([3.0, -0.02, 1e3])})
    assert np.allclose(p["w"], [0.5 - 0.01, -0.5 + 0.01, 2.0 - 0.01], atol=1e-8)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.0, -2.0]), "b": np.array([0.3])}
    before = {k: v.copy() for k, v in p.items()}
    opt = Adam(p, base_lr=0.1, total_steps=20)
    for _ in range(20):
        opt.step({k: np.zeros_like(v) for k, v in p.items()})
    assert all(np.array_equal(p[k], before[k]) for k in p)


def test_adam_three_steps_on_quadratic_match_hand_unrolling():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = {"x": np.array([3.0])}
    opt = Adam(p, base_lr=lr)
    x, m, v = 3.0, 0.0, 0.0
    for t in (1, 2, 3):
        g = 2 * x  # d/dx x^2
        opt.step({"x": np.array([2 * p["x"][0]])})
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert p["x"][0] == pytest.approx(x, abs=1e-10)


def test_adam_uses_schedule():
    p = {"w": np.zeros(1)}
    opt = Adam(p, base_lr=1.0, total_steps=10, warmup_ratio=0.2)
    lrs = [opt.step({"w": np.ones(1)}) for _ in range(10)]
    assert lrs == [lr_schedule(s, 10, 0.2) for s in range(10)]
    assert lrs[0] == 0.0 and lrs[2] == 1.0


def test_adam_shape_mismatch():
    opt = Adam({"w": np.zeros(2)}, 0.1)
    with pytest.raises(ShapeMismatch):
        opt.step({"w": np.zeros(3)})
