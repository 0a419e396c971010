import numpy as np
import pytest

from app.services.fast_weight_memory import (
    FastWeightConfig,
    FastWeightGradients,
    FastWeights,
    SlowParams,
    fast_weight_param_count,
    finite_diff_gradient,
    gradient_relative_error,
    head_queries,
    init_fast_weights,
    init_slow_params,
    predict_decay,
    predict_lr,
    read_prior,
    read_prior_detailed,
    static_prior,
    swiglu_forward,
    ttt_gradient,
    ttt_loss,
    update_weights,
    zero_fast_weights,
)
from app.services.frame_packet import FramePacket
from app.services.gradcheck_service import random_instance
from app.utils.contracts import ContractError


def test_param_count_at_default_dims():
    assert fast_weight_param_count(FastWeightConfig()) == 1_575_216


def test_param_count_at_unit_dims():
    cfg = FastWeightConfig(d_in=1, d_model=1, heads=1, d_head=1)
    assert fast_weight_param_count(cfg) == 16


def test_param_count_matches_allocated_arrays(toy_fw_config, rng):
    fw = init_fast_weights(toy_fw_config, rng)
    sp = init_slow_params(toy_fw_config, rng)
    allocated = sum(a.size for a in sp.arrays()) + sum(w.size for w in fw.matrices())
    assert allocated == fast_weight_param_count(toy_fw_config)


def test_config_rejects_inconsistent_heads():
    with pytest.raises(ValueError):
        FastWeightConfig(d_model=100, heads=12, d_head=64)


def test_swiglu_identity_weights_on_basis_vector():
    eye = np.eye(3)
    out = swiglu_forward((eye, eye, eye), np.array([1.0, 0.0, 0.0]))
    assert out[0] == pytest.approx(0.7310585786300049, abs=1e-15)
    assert out[1] == 0.0 and out[2] == 0.0


def test_swiglu_zero_weights_give_zero():
    z = np.zeros((4, 4))
    assert np.array_equal(swiglu_forward((z, z, z), np.ones(4)), np.zeros(4))


def test_empty_frame_is_rejected():
    with pytest.raises(ContractError):
        FramePacket.from_tokens(np.zeros((0, 8)))


def test_pooled_is_token_mean(rng):
    tokens = rng.normal(size=(7, 16))
    frame = FramePacket.from_tokens(tokens)
    np.testing.assert_allclose(frame.pooled, tokens.mean(axis=0), rtol=0, atol=1e-12)


def test_zero_query_projection_reads_the_static_prior(toy_fw_config, rng, make_frame):
    sp = init_slow_params(toy_fw_config, rng)
    sp.query_w[:] = 0.0
    sp.out_b[:] = rng.normal(size=sp.out_b.shape)
    frame = make_frame(rng)

    assert np.array_equal(head_queries(sp, frame), np.zeros((4, 12)))
    fw = init_fast_weights(toy_fw_config, rng)
    np.testing.assert_array_equal(read_prior(fw, sp, frame), static_prior(sp))


def test_read_prior_is_deterministic(toy_fw_config, rng, make_frame):
    fw = init_fast_weights(toy_fw_config, rng)
    sp = init_slow_params(toy_fw_config, rng)
    frame = make_frame(rng)
    assert np.array_equal(read_prior(fw, sp, frame), read_prior(fw, sp, frame))


def test_read_prior_rejects_width_mismatch(toy_fw_config, rng):
    fw = init_fast_weights(toy_fw_config, rng)
    sp = init_slow_params(toy_fw_config, rng)
    with pytest.raises(ContractError):
        read_prior(fw, sp, FramePacket.from_tokens(np.ones((2, 10))))


def test_ttt_loss_is_a_dot_product():
    assert ttt_loss(np.array([1.0, 2.0, 3.0]), np.array([4.0, -5.0, 6.0])) == 12.0


@pytest.mark.parametrize("d_head", [2, 4, 8])
def test_analytic_gradient_matches_central_differences(d_head):
    rng = np.random.default_rng(d_head)
    for _ in range(5):
        fw, queries, posterior = random_instance(rng, heads=2, d_head=d_head)
        analytic = ttt_gradient(fw, queries, posterior)
        reference = finite_diff_gradient(fw, queries, posterior, step=1e-5)
        assert gradient_relative_error(analytic, reference) < 1e-6


def test_central_difference_error_is_second_order():
    rng = np.random.default_rng(21)
    fw, queries, posterior = random_instance(rng, heads=2, d_head=4)
    analytic = ttt_gradient(fw, queries, posterior)
    coarse = gradient_relative_error(analytic, finite_diff_gradient(fw, queries, posterior, step=2e-2))
    fine = gradient_relative_error(analytic, finite_diff_gradient(fw, queries, posterior, step=1e-2))
    assert fine < coarse
    assert 3.0 < coarse / fine < 5.0


def test_gradient_is_zero_for_zero_posterior(rng):
    fw, queries, _ = random_instance(rng, heads=3, d_head=4)
    grads = ttt_gradient(fw, queries, np.zeros(12))
    assert not np.any(grads.flat())


def test_update_with_zero_lr_is_pure_decay(toy_fw_config, rng):
    fw = init_fast_weights(toy_fw_config, rng)
    grads = FastWeightGradients(*(rng.normal(size=w.shape) for w in fw.matrices()))
    alpha = rng.uniform(0.99, 1.0, size=4)
    updated = update_weights(fw, grads, alpha, np.zeros((3, 4)))
    for new, old in zip(updated.matrices(), fw.matrices()):
        assert np.array_equal(new, alpha[:, None, None] * old)


def test_update_with_unit_decay_and_zero_lr_is_identity(toy_fw_config, rng):
    fw = init_fast_weights(toy_fw_config, rng)
    grads = FastWeightGradients(*(rng.normal(size=w.shape) for w in fw.matrices()))
    updated = update_weights(fw, grads, np.ones(4), np.zeros((3, 4)))
    for new, old in zip(updated.matrices(), fw.matrices()):
        assert np.array_equal(new, old)


def test_update_from_zero_weights_is_scaled_gradient(rng):
    fw = zero_fast_weights(2, 3)
    grads = FastWeightGradients(*(rng.normal(size=(2, 3, 3)) for _ in range(3)))
    eta = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
    updated = update_weights(fw, grads, np.full(2, 0.995), eta)
    for i, (new, g) in enumerate(zip(updated.matrices(), grads.matrices())):
        np.testing.assert_allclose(new, eta[i][:, None, None] * g, rtol=0, atol=1e-15)


def test_update_is_linear_in_the_gradient(rng):
    fw = FastWeights(*(rng.normal(size=(2, 3, 3)) for _ in range(3)))
    g1 = FastWeightGradients(*(rng.normal(size=(2, 3, 3)) for _ in range(3)))
    g2 = FastWeightGradients(*(rng.normal(size=(2, 3, 3)) for _ in range(3)))
    a, b = 0.7, -1.3
    alpha = np.array([0.995, 0.991])
    eta = rng.uniform(0.1, 1.0, size=(3, 2))
    mixed = FastWeightGradients(*(a * x + b * y for x, y in zip(g1.matrices(), g2.matrices())))

    combined = update_weights(fw, mixed, alpha, eta)
    write_1 = update_weights(fw, g1, np.zeros(2), eta)
    write_2 = update_weights(fw, g2, np.zeros(2), eta)
    for new, old, w1, w2 in zip(combined.matrices(), fw.matrices(), write_1.matrices(), write_2.matrices()):
        np.testing.assert_allclose(new, alpha[:, None, None] * old + a * w1 + b * w2, rtol=0, atol=1e-12)


def test_update_rejects_misshaped_lr(toy_fw_config, rng):
    fw = init_fast_weights(toy_fw_config, rng)
    grads = FastWeightGradients(*(np.zeros_like(w) for w in fw.matrices()))
    with pytest.raises(ContractError):
        update_weights(fw, grads, np.ones(4), np.zeros(12))


def test_hebbian_step_increases_alignment(rng):
    fw, queries, posterior = random_instance(rng, heads=2, d_head=4)
    p = posterior.reshape(2, 4)

    def objective(weights):
        return sum(float(swiglu_forward(weights.head(h), queries[h]) @ p[h]) for h in range(2))

    grads = ttt_gradient(fw, queries, posterior)
    updated = update_weights(fw, grads, np.ones(2), np.full((3, 2), 1e-3))
    assert objective(updated) > objective(fw)


def _random_slow_params(rng, heads, d_in, std) -> SlowParams:
    cfg = FastWeightConfig(d_in=d_in, d_model=heads * 2, heads=heads, d_head=2)
    sp = init_slow_params(cfg, rng)
    sp.decay_w = rng.normal(0.0, std, size=sp.decay_w.shape)
    sp.decay_b = rng.normal(0.0, std, size=sp.decay_b.shape)
    sp.lr_w = rng.normal(0.0, std, size=sp.lr_w.shape)
    sp.lr_b = rng.normal(0.0, std, size=sp.lr_b.shape)
    return sp


def test_decay_and_lr_ranges_over_many_inputs():
    rng = np.random.default_rng(0)
    alphas, etas = [], []
    for i in range(10_000):
        std = [0.1, 10.0, 1e3][i % 3]
        sp = _random_slow_params(rng, heads=3, d_in=4, std=std)
        frame = FramePacket.from_tokens(rng.normal(0.0, 5.0, size=(2, 4)))
        alphas.append(predict_decay(sp, frame, gamma=0.01))
        etas.append(predict_lr(sp, frame, c_base=0.001))
    alphas, etas = np.concatenate(alphas), np.concatenate([e.ravel() for e in etas])
    assert np.all(alphas > 0.99) and np.all(alphas < 1.0)
    assert np.all(etas > 0.0)


def test_lr_shape_and_default_value(toy_fw_config, rng, make_frame):
    sp = init_slow_params(toy_fw_config, rng)
    eta = predict_lr(sp, make_frame(rng), c_base=0.001)
    assert eta.shape == (3, 4)
    np.testing.assert_allclose(eta, np.log1p(np.exp(0.001)), rtol=1e-15)


def test_lr_for_a_large_head_output(toy_fw_config, rng, make_frame):
    sp = init_slow_params(toy_fw_config, rng)
    sp.lr_b = np.full_like(sp.lr_b, 10.0)
    eta = predict_lr(sp, make_frame(rng), c_base=0.0)
    np.testing.assert_allclose(eta, 10.0000454, rtol=0, atol=1e-7)


def test_default_decay_is_half_gamma(toy_fw_config, rng, make_frame):
    sp = init_slow_params(toy_fw_config, rng)
    alpha = predict_decay(sp, make_frame(rng), gamma=0.01)
    np.testing.assert_allclose(alpha, np.full(4, 0.995), rtol=0, atol=1e-15)


def test_prior_detail_exposes_readout(toy_fw_config, rng, make_frame):
    fw = init_fast_weights(toy_fw_config, rng)
    sp = init_slow_params(toy_fw_config, rng)
    detail = read_prior_detailed(fw, sp, make_frame(rng))
    assert detail.queries.shape == (4, 12)
    np.testing.assert_allclose(np.linalg.norm(detail.queries, axis=1), 1.0, atol=1e-12)
    assert detail.readout.shape == (48,) and detail.prior.shape == (48,)
