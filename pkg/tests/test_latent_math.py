import numpy as np
import pytest

from partlat.errors import DimensionError, NumericError
from partlat.latent_math import (
    AttentionParams,
    attention,
    attention_weights,
    pool_part,
    residual_update,
)


def test_single_context_token_returns_projected_context():
    params = AttentionParams.identity(2)
    out = attention(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]), params)
    assert np.array_equal(out, np.array([[0.0, 2.0]]))


def test_two_row_softmax_hand_oracle():
    # queries [[1,0]] against {[1,0], [-1,0]} with identity projections:
    # logits are +-1/sqrt(2), so the blend weight is the 2-way softmax.
    params = AttentionParams.identity(2)
    q = np.array([[1.0, 0.0]])
    ctx = np.array([[1.0, 0.0], [-1.0, 0.0]])
    sig = np.exp(1 / np.sqrt(2)) / (np.exp(1 / np.sqrt(2)) + np.exp(-1 / np.sqrt(2)))
    expected = sig * ctx[0] + (1 - sig) * ctx[1]
    assert np.allclose(attention(q, ctx, params)[0], expected, atol=1e-12)


def test_self_attention_single_token_identity():
    params = AttentionParams.identity(1)
    q = np.array([[3.7]])
    assert np.array_equal(attention(q, q, params), q)


def test_rows_sum_to_one(rng):
    for _ in range(20):
        d = int(rng.integers(1, 6))
        params = AttentionParams.seeded(d, int(rng.integers(1000)))
        q = rng.normal(size=(int(rng.integers(1, 7)), d))
        k = rng.normal(size=(int(rng.integers(1, 7)), d))
        w = attention_weights(q, k, params)
        assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-9


def test_scale_stability_large_inputs(rng):
    params = AttentionParams.identity(3)
    q = rng.uniform(-1e3, 1e3, size=(4, 3))
    k = rng.uniform(-1e3, 1e3, size=(5, 3))
    out = attention(q, k, params)
    assert np.all(np.isfinite(out))


def test_masked_rows_get_zero_weight(rng):
    params = AttentionParams.seeded(3, 5)
    q = rng.normal(size=(2, 3))
    ctx = rng.normal(size=(4, 3))
    mask = np.array([True, True, False, False])
    masked = attention(q, ctx, params, context_mask=mask)
    prefix = attention(q, ctx[:2], params)
    assert np.allclose(masked, prefix, atol=1e-12)
    # fully masked context contributes nothing
    none = attention(q, ctx, params, context_mask=np.zeros(4, dtype=bool))
    assert np.array_equal(none, np.zeros_like(q))


def test_width_mismatch_raises():
    params = AttentionParams.identity(2)
    with pytest.raises(DimensionError):
        attention(np.ones((1, 2)), np.ones((1, 3)), params)
    with pytest.raises(DimensionError):
        attention(np.ones((1, 3)), np.ones((1, 3)), params)


def test_nonfinite_input_raises():
    params = AttentionParams.identity(2)
    bad = np.array([[np.nan, 0.0]])
    with pytest.raises(NumericError):
        attention(bad, np.ones((1, 2)), params)


def test_residual_update_zero_coeff_is_bitwise_noop(rng):
    params = AttentionParams.seeded(3, 9)
    target = rng.normal(size=(4, 3))
    out = residual_update(target, rng.normal(size=(2, 3)), 0.0, params)
    assert np.array_equal(out, target)


def test_residual_update_from_attention_oracle():
    params = AttentionParams.identity(2)
    target = np.array([[1.0, 0.0]])
    ctx = np.array([[0.0, 2.0]])
    out = residual_update(target, ctx, 1.0, params)
    assert np.allclose(out, [[1.0, 2.0]], atol=1e-12)
    # zero-valued context rows leave the target at coeff 0.5 too
    out2 = residual_update(np.array([[2.0, 2.0]]), np.array([[0.0, 0.0]]), 0.5, params)
    assert np.allclose(out2, [[2.0, 2.0]], atol=1e-15)


def test_residual_update_linear_in_coeff(rng):
    params = AttentionParams.seeded(4, 2)
    target = rng.normal(size=(3, 4))
    src = rng.normal(size=(5, 4))
    c1, c2 = 0.3, 1.1
    lhs = residual_update(target, src, c1, params) + residual_update(target, src, c2, params) - 2 * target
    rhs = residual_update(target, src, c1 + c2, params) - target
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_pool_part_mean_and_projection():
    eye = np.eye(2)
    assert np.allclose(pool_part([[1.0, 1.0]], [[3.0, 3.0]], eye), [2.0, 2.0])
    assert np.allclose(pool_part([[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0]], np.ones((2, 2))), [0.0, 0.0])
    assert np.allclose(pool_part([[1.0, 0.0], [3.0, 0.0]], [[2.0, 0.0]], eye), [2.0, 0.0])


def test_pool_part_width_mismatch():
    with pytest.raises(DimensionError):
        pool_part(np.ones((1, 2)), np.ones((1, 3)), np.eye(2))
