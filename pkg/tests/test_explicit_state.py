import numpy as np
import pytest
from scipy.special import erf

from app.services.explicit_state import (
    GateConfig,
    GateParams,
    GateStrategy,
    StateTokens,
    TokenGate,
    apply_strategy,
    compute_gate,
    gate_param_count,
    gated_update,
    gated_update_with_token_gate,
    init_gate_params,
    init_state,
    state_from_bytes,
    state_to_bytes,
    zero_gate_params,
)
from app.services.frame_packet import FramePacket
from app.utils.contracts import ContractError


def _states(rng, shape=(5, 3)):
    return StateTokens(rng.normal(size=shape)), StateTokens(rng.normal(size=shape))


# ===============================
# Parameter counts
# ===============================
def test_gate_param_count_at_defaults():
    assert gate_param_count(GateConfig()) == 984_192


def test_gate_param_count_unit_bottleneck():
    assert gate_param_count(GateConfig(bottleneck=1)) == 3_329


def test_gate_param_count_unit_dims():
    assert gate_param_count(GateConfig(channels=1, d_in=1, bottleneck=1)) == 5


def test_gate_param_count_matches_allocation(toy_gate_config, rng):
    gp = init_gate_params(toy_gate_config, rng)
    assert sum(a.size for a in gp.arrays()) == gate_param_count(toy_gate_config)


# ===============================
# compute_gate
# ===============================
def test_zero_gate_params_give_one_half(toy_gate_config, rng, make_frame):
    gp = zero_gate_params(toy_gate_config)
    zeta = compute_gate(gp, make_frame(rng), init_state(toy_gate_config, rng))
    assert zeta.shape == (32, 48)
    assert np.all(zeta == 0.5)


@pytest.mark.parametrize("bias, expected", [(1e3, 1.0), (-1e3, 0.0)])
def test_gate_saturates_inside_open_interval(bias, expected, rng):
    cfg = GateConfig(state_tokens=3, channels=4, d_in=5, bottleneck=2)
    gp = zero_gate_params(cfg)
    gp.b2[:] = bias
    zeta = compute_gate(gp, FramePacket.from_tokens(rng.normal(size=(2, 5))), init_state(cfg, rng))
    assert np.all(zeta > 0.0) and np.all(zeta < 1.0)
    np.testing.assert_allclose(zeta, expected, atol=1e-12)


def test_gate_matches_staged_oracle(rng):
    cfg = GateConfig(state_tokens=4, channels=6, d_in=8, bottleneck=5)
    gp = init_gate_params(cfg, rng)
    gp.b1 = rng.normal(size=5)
    gp.b2 = rng.normal(size=6)
    frame = FramePacket.from_tokens(rng.normal(size=(3, 8)))
    state = StateTokens(rng.normal(size=(4, 6)))

    expected = np.empty((4, 6))
    pooled = frame.tokens.sum(axis=0) / 3.0
    for i in range(4):
        x = np.concatenate([state.tokens[i], pooled])
        h = gp.w1 @ x + gp.b1
        h = 0.5 * h * (1.0 + erf(h / np.sqrt(2.0)))
        expected[i] = 1.0 / (1.0 + np.exp(-(gp.w2 @ h + gp.b2)))

    np.testing.assert_allclose(compute_gate(gp, frame, state), expected, rtol=0, atol=1e-12)


def test_gate_range_over_random_inputs():
    rng = np.random.default_rng(5)
    cfg = GateConfig(state_tokens=4, channels=3, d_in=5, bottleneck=4)
    values = []
    for i in range(2_500):
        std = [0.5, 20.0, 1e3][i % 3]
        gp = GateParams(
            w1=rng.normal(0.0, std, size=(4, 8)), b1=rng.normal(0.0, std, size=4),
            w2=rng.normal(0.0, std, size=(3, 4)), b2=rng.normal(0.0, std, size=3),
        )
        frame = FramePacket.from_tokens(rng.normal(size=(2, 5)))
        values.append(compute_gate(gp, frame, StateTokens(rng.normal(size=(4, 3)))).ravel())
    values = np.concatenate(values)
    assert values.size >= 10_000
    assert np.all(values > 0.0) and np.all(values < 1.0)


def test_gate_rejects_width_mismatch(toy_gate_config, rng):
    gp = init_gate_params(toy_gate_config, rng)
    with pytest.raises(ContractError):
        compute_gate(gp, FramePacket.from_tokens(np.ones((2, 10))), init_state(toy_gate_config, rng))


# ===============================
# Updates
# ===============================
def test_overwrite_and_freeze_limits(rng):
    prev, cand = _states(rng)
    assert np.array_equal(gated_update(prev, cand, np.ones(prev.shape)).tokens, cand.tokens)
    assert np.array_equal(gated_update(prev, cand, np.zeros(prev.shape)).tokens, prev.tokens)


def test_midpoint_update(rng):
    prev, cand = _states(rng)
    out = gated_update(prev, cand, np.full(prev.shape, 0.5))
    np.testing.assert_allclose(out.tokens, (cand.tokens + prev.tokens) / 2.0, rtol=0, atol=1e-15)


def test_update_is_convex_per_entry(rng):
    prev, cand = _states(rng, (16, 8))
    out = gated_update(prev, cand, rng.uniform(size=(16, 8))).tokens
    lo = np.minimum(prev.tokens, cand.tokens)
    hi = np.maximum(prev.tokens, cand.tokens)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_update_rejects_shape_mismatch(rng):
    prev, _ = _states(rng)
    with pytest.raises(ContractError):
        gated_update(prev, StateTokens(np.zeros((4, 3))), np.zeros(prev.shape))
    with pytest.raises(ContractError):
        gated_update(prev, prev, np.zeros((5, 4)))


def test_unit_token_gate_reduces_to_base_update(rng):
    prev, cand = _states(rng)
    zeta = rng.uniform(size=prev.shape)
    base = gated_update(prev, cand, zeta)
    composed = gated_update_with_token_gate(prev, cand, zeta, TokenGate(np.ones(5)))
    assert np.array_equal(base.tokens, composed.tokens)


def test_zero_token_gate_annihilates_token(rng):
    prev, cand = _states(rng)
    g = np.ones(5)
    g[2] = 0.0
    out = gated_update_with_token_gate(prev, cand, rng.uniform(size=prev.shape), TokenGate(g))
    assert np.all(out.tokens[2] == 0.0)


def test_token_gate_rescales_retained_state(rng):
    prev, cand = _states(rng)
    out = gated_update_with_token_gate(prev, cand, np.zeros(prev.shape), TokenGate(np.full(5, 2.0)))
    assert np.array_equal(out.tokens, 2.0 * prev.tokens)


def test_token_gate_must_be_non_negative(rng):
    prev, cand = _states(rng)
    with pytest.raises(ContractError):
        gated_update_with_token_gate(prev, cand, np.zeros(prev.shape), TokenGate(-np.ones(5)))


def test_freeze_over_many_steps_is_bit_exact(rng):
    prev, _ = _states(rng)
    state = prev
    for _ in range(50):
        cand = StateTokens(rng.normal(size=prev.shape))
        state = gated_update_with_token_gate(state, cand, np.zeros(prev.shape), TokenGate(np.ones(5)))
    assert np.array_equal(state.tokens, prev.tokens)


# ===============================
# Strategies
# ===============================
def test_overwrite_strategy(rng):
    prev, cand = _states(rng)
    assert np.array_equal(apply_strategy(GateStrategy(kind="overwrite"), prev, cand).g, np.ones(5))


def test_constant_strategy(rng):
    prev, cand = _states(rng)
    gate = apply_strategy(GateStrategy(kind="constant", params={"value": 0.3}), prev, cand)
    assert np.all(gate.g == 0.3)


@pytest.mark.parametrize("temperature", [0.5, 1.0, 4.0])
def test_similarity_of_identical_tokens(temperature, rng):
    prev, _ = _states(rng)
    strategy = GateStrategy(kind="similarity", params={"temperature": temperature})
    gate = apply_strategy(strategy, prev, prev.copy())
    np.testing.assert_allclose(gate.g, 1.0 / (1.0 + np.exp(-1.0 / temperature)), rtol=0, atol=1e-12)


def test_similarity_zero_norm_token_gets_neutral_gate(rng):
    prev, cand = _states(rng)
    cand.tokens[1] = 0.0
    gate = apply_strategy(GateStrategy(kind="similarity"), prev, cand)
    assert gate.g[1] == 0.5
    assert np.all(np.isfinite(gate.g))


def test_strategy_validation():
    with pytest.raises(ValueError):
        GateStrategy(kind="constant")
    with pytest.raises(ValueError):
        GateStrategy(kind="constant", params={"value": -1.0})
    with pytest.raises(ValueError):
        GateStrategy(kind="similarity", params={"temperature": 0.0})


# ===============================
# Snapshots
# ===============================
def test_state_snapshot_layout(rng):
    state = StateTokens(rng.normal(size=(3, 2)))
    buffer = state_to_bytes(state)
    assert len(buffer) == 16 + 3 * 2 * 8
    assert np.frombuffer(buffer[:16], dtype="<i8").tolist() == [3, 2]
    restored, end = state_from_bytes(buffer)
    assert end == len(buffer)
    assert np.array_equal(restored.tokens, state.tokens)


def test_truncated_snapshot_is_rejected(rng):
    buffer = state_to_bytes(StateTokens(rng.normal(size=(3, 2))))
    with pytest.raises(ContractError):
        state_from_bytes(buffer[:-8])
