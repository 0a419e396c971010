"""
Per-frame recurrent loop over both memories.

  read_prior -> decode -> implicit-memory write -> gate -> token gate -> explicit-memory write -> heads

The decoder is a small stand-in for the pretrained interaction blocks: depth blocks of
bidirectional cross-attention between X_t = [p_hat, F_t] and the state, each with residual
connections, so zero weights give the identity on all three outputs.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.services.explicit_state import (
    GateConfig,
    GateParams,
    GateStrategy,
    StateTokens,
    TokenGate,
    apply_strategy,
    compute_gate,
    gated_update_with_token_gate,
    init_gate_params,
    init_state,
    state_from_bytes,
    state_to_bytes,
)
from app.services.fast_weight_memory import (
    FastWeightConfig,
    FastWeights,
    SlowParams,
    ensure_finite,
    init_fast_weights,
    init_slow_params,
    predict_decay,
    predict_lr,
    read_prior_detailed,
    static_prior,
    ttt_gradient,
    ttt_loss,
    update_weights,
)
from app.services.frame_packet import FramePacket
from app.services.geometry_metrics import TrajectoryPose
from app.services.objectives import PointMap
from app.utils.contracts import require, require_finite, require_shape
from app.utils.numerics import fan_in_gaussian, linear, multi_head_attention, rms_norm, softplus
from app.utils.rotations import IDENTITY_QUATERNION
from app.utils.state_io import decode_stack, encode_stack

logger = logging.getLogger(__name__)

CONFIDENCE_FLOOR = 1e-6
QUATERNION_FALLBACK_NORM = 1e-12
DECODER_OUTPUT_GAIN = 0.1


class DecoderConfig(BaseModel):
    depth: int = Field(1, ge=1)
    d_model: int = Field(768, gt=0, description="Attention width")
    heads: int = Field(12, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_heads(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"decoder d_model={self.d_model} is not divisible by heads={self.heads}")
        return self


class EngineConfig(BaseModel):
    fast_weight: FastWeightConfig = Field(default_factory=FastWeightConfig)
    gate: GateConfig = Field(default_factory=GateConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    gate_strategy: GateStrategy = Field(default_factory=GateStrategy)
    seed: int = 0
    use_fast_weights: bool = True
    use_channel_gate: bool = True

    @model_validator(mode="after")
    def _check_widths(self):
        if self.gate.d_in != self.fast_weight.d_in:
            raise ValueError(
                f"gate d_in={self.gate.d_in} must match fast-weight d_in={self.fast_weight.d_in}"
            )
        return self


# ============================================================
# Surrogate decoder
# ============================================================
@dataclass
class DecoderBlock:
    # tokens read the state
    q_pose: np.ndarray
    q_frame: np.ndarray
    k_state: np.ndarray
    v_state: np.ndarray
    o_pose: np.ndarray
    o_frame: np.ndarray
    # state reads the tokens
    q_state: np.ndarray
    k_pose: np.ndarray
    v_pose: np.ndarray
    k_frame: np.ndarray
    v_frame: np.ndarray
    o_state: np.ndarray


@dataclass
class DecoderParams:
    blocks: list[DecoderBlock]
    heads: int


@dataclass(frozen=True)
class DecodeResult:
    posterior_pose: np.ndarray
    refined_tokens: np.ndarray
    candidate_state: StateTokens


def _block_shapes(d_attn: int, d_pose: int, d_in: int, channels: int) -> dict[str, tuple[int, int]]:
    return {
        "q_pose": (d_attn, d_pose), "q_frame": (d_attn, d_in),
        "k_state": (d_attn, channels), "v_state": (d_attn, channels),
        "o_pose": (d_pose, d_attn), "o_frame": (d_in, d_attn),
        "q_state": (d_attn, channels),
        "k_pose": (d_attn, d_pose), "v_pose": (d_attn, d_pose),
        "k_frame": (d_attn, d_in), "v_frame": (d_attn, d_in),
        "o_state": (channels, d_attn),
    }


def init_decoder_params(cfg: DecoderConfig, d_pose: int, d_in: int, channels: int) -> DecoderParams:
    rng = np.random.default_rng(cfg.seed)
    blocks = []
    for _ in range(cfg.depth):
        weights = {}
        for name, (out_dim, in_dim) in _block_shapes(cfg.d_model, d_pose, d_in, channels).items():
            gain = DECODER_OUTPUT_GAIN if name.startswith("o_") else 1.0
            weights[name] = fan_in_gaussian(rng, out_dim, in_dim, gain)
        blocks.append(DecoderBlock(**weights))
    return DecoderParams(blocks=blocks, heads=cfg.heads)


def zero_decoder_params(cfg: DecoderConfig, d_pose: int, d_in: int, channels: int) -> DecoderParams:
    shapes = _block_shapes(cfg.d_model, d_pose, d_in, channels)
    blocks = [
        DecoderBlock(**{name: np.zeros(shape) for name, shape in shapes.items()})
        for _ in range(cfg.depth)
    ]
    return DecoderParams(blocks=blocks, heads=cfg.heads)


def _decoder_block(block: DecoderBlock, heads: int, pose: np.ndarray, feats: np.ndarray, state: np.ndarray):
    state_n = rms_norm(state)
    queries = np.vstack([linear(block.q_pose, None, rms_norm(pose))[None, :], linear(block.q_frame, None, rms_norm(feats))])
    read = multi_head_attention(queries, linear(block.k_state, None, state_n), linear(block.v_state, None, state_n), heads)
    pose = pose + linear(block.o_pose, None, read[0])
    feats = feats + linear(block.o_frame, None, read[1:])

    pose_n, feats_n = rms_norm(pose), rms_norm(feats)
    keys = np.vstack([linear(block.k_pose, None, pose_n)[None, :], linear(block.k_frame, None, feats_n)])
    values = np.vstack([linear(block.v_pose, None, pose_n)[None, :], linear(block.v_frame, None, feats_n)])
    write = multi_head_attention(linear(block.q_state, None, rms_norm(state)), keys, values, heads)
    state = state + linear(block.o_state, None, write)
    return pose, feats, state


def decode(params: DecoderParams, prior_pose: np.ndarray, frame: FramePacket, s_prev: StateTokens) -> DecodeResult:
    """X'_t, S_cand = Decoders([p_hat, F_t], S_{t-1}); returns (p_t, F'_t, S_cand)."""
    first = params.blocks[0]
    require_shape(np.asarray(prior_pose), (first.q_pose.shape[1],), "prior pose")
    require(
        frame.width == first.q_frame.shape[1],
        f"frame width {frame.width} does not match decoder input {first.q_frame.shape[1]}",
    )
    require(
        s_prev.shape[1] == first.k_state.shape[1],
        f"state width {s_prev.shape[1]} does not match decoder state width {first.k_state.shape[1]}",
    )
    pose, feats, state = np.asarray(prior_pose, dtype=np.float64), frame.tokens, s_prev.tokens
    for block in params.blocks:
        pose, feats, state = _decoder_block(block, params.heads, pose, feats, state)
    return DecodeResult(posterior_pose=pose, refined_tokens=feats, candidate_state=StateTokens(state))


# ============================================================
# Prediction heads
# ============================================================
@dataclass
class HeadParams:
    pose_w: np.ndarray  # (7, d_pose)
    pose_b: np.ndarray
    self_w: np.ndarray  # (4, d_in)
    self_b: np.ndarray
    world_w: np.ndarray  # (4, d_in + d_pose)
    world_b: np.ndarray


def init_head_params(d_pose: int, d_in: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        pose_w=fan_in_gaussian(rng, 7, d_pose),
        pose_b=np.zeros(7),
        self_w=fan_in_gaussian(rng, 4, d_in),
        self_b=np.zeros(4),
        world_w=fan_in_gaussian(rng, 4, d_in + d_pose),
        world_b=np.zeros(4),
    )


def head_pose(hp: HeadParams, posterior_pose: np.ndarray, timestamp: float = 0.0) -> TrajectoryPose:
    raw = linear(hp.pose_w, hp.pose_b, np.asarray(posterior_pose, dtype=np.float64))
    q = raw[:4]
    norm = float(np.linalg.norm(q))
    q = IDENTITY_QUATERNION.copy() if norm < QUATERNION_FALLBACK_NORM else q / norm
    return TrajectoryPose(timestamp=float(timestamp), quaternion=q, translation=raw[4:7])


def head_points(hp: HeadParams, refined_tokens: np.ndarray, posterior_pose: np.ndarray, mode: Literal["self", "world"]) -> PointMap:
    """One point and one confidence per token; the world head also sees the posterior pose."""
    require(mode in ("self", "world"), f"unknown point head mode '{mode}'")
    if mode == "self":
        raw = linear(hp.self_w, hp.self_b, refined_tokens)
    else:
        pose = np.broadcast_to(posterior_pose, (refined_tokens.shape[0], posterior_pose.shape[0]))
        raw = linear(hp.world_w, hp.world_b, np.concatenate([refined_tokens, pose], axis=1))
    confidence = softplus(raw[:, 3]) + CONFIDENCE_FLOOR
    return PointMap(points=raw[:, :3], confidence=confidence, valid=np.ones(raw.shape[0], dtype=bool))


# ============================================================
# Engine
# ============================================================
@dataclass
class Engine:
    config: EngineConfig
    fast_weights: FastWeights
    slow_params: SlowParams
    gate_params: GateParams
    decoder_params: DecoderParams
    head_params: HeadParams
    state: StateTokens
    steps: int = 0


@dataclass
class StepHooks:
    """Test overrides for the explicit-memory write."""

    zeta: np.ndarray | None = None
    token_gate: TokenGate | None = None


@dataclass(frozen=True)
class StepOutput:
    posterior_pose: np.ndarray
    refined_tokens: np.ndarray
    candidate_state: StateTokens
    predicted_pose: TrajectoryPose
    local_points: PointMap
    world_points: PointMap
    prior_pose: np.ndarray
    ttt_loss: float
    gate_stats: dict = field(default_factory=dict)


def build_engine(cfg: EngineConfig) -> Engine:
    fw_seq, slow_seq, gate_seq, state_seq, head_seq = np.random.SeedSequence(cfg.seed).spawn(5)
    fwc, gc = cfg.fast_weight, cfg.gate
    engine = Engine(
        config=cfg,
        fast_weights=init_fast_weights(fwc, np.random.default_rng(fw_seq)),
        slow_params=init_slow_params(fwc, np.random.default_rng(slow_seq)),
        gate_params=init_gate_params(gc, np.random.default_rng(gate_seq)),
        decoder_params=init_decoder_params(cfg.decoder, fwc.d_model, fwc.d_in, gc.channels),
        head_params=init_head_params(fwc.d_model, fwc.d_in, np.random.default_rng(head_seq)),
        state=init_state(gc, np.random.default_rng(state_seq)),
    )
    logger.info(
        f"[Recurrent] Engine built (d_in={fwc.d_in}, d_model={fwc.d_model}, heads={fwc.heads}, "
        f"state={gc.state_tokens}x{gc.channels}, depth={cfg.decoder.depth}, seed={cfg.seed})"
    )
    return engine


def persistent_footprint(engine: Engine) -> int:
    """Exact byte size of the fast weights, state tokens, slow params and gate params."""
    return (
        engine.fast_weights.nbytes
        + engine.state.nbytes
        + engine.slow_params.nbytes
        + engine.gate_params.nbytes
    )


def recurrent_step(engine: Engine, frame: FramePacket, hooks: StepHooks | None = None) -> StepOutput:
    """
    One frame of the loop. Each memory is written exactly once; on any error both memories
    are restored to their pre-step values and the error is re-raised.
    """
    cfg = engine.config
    hooks = hooks or StepHooks()
    fw_snapshot = engine.fast_weights.copy()
    state_snapshot = engine.state.copy()
    started = time.perf_counter()

    try:
        s_prev = engine.state
        if cfg.use_fast_weights:
            readout = read_prior_detailed(engine.fast_weights, engine.slow_params, frame)
            prior = readout.prior
        else:
            prior = static_prior(engine.slow_params)

        decoded = decode(engine.decoder_params, prior, frame, s_prev)
        require_shape(decoded.candidate_state.tokens, s_prev.shape, "candidate state")
        loss = ttt_loss(prior, decoded.posterior_pose)

        if cfg.use_fast_weights:
            grads = ttt_gradient(engine.fast_weights, readout.queries, decoded.posterior_pose)
            alpha = predict_decay(engine.slow_params, frame, cfg.fast_weight.gamma)
            eta = predict_lr(engine.slow_params, frame, cfg.fast_weight.c_base)
            engine.fast_weights = ensure_finite(update_weights(engine.fast_weights, grads, alpha, eta))

        if hooks.zeta is not None:
            zeta = np.asarray(hooks.zeta, dtype=np.float64)
        elif cfg.use_channel_gate:
            zeta = compute_gate(engine.gate_params, frame, s_prev)
        else:
            zeta = np.ones(s_prev.shape)
        token_gate = hooks.token_gate or apply_strategy(cfg.gate_strategy, s_prev, decoded.candidate_state)
        new_state = gated_update_with_token_gate(s_prev, decoded.candidate_state, zeta, token_gate)
        require_finite(new_state.tokens, "state tokens")
        engine.state = new_state

        hp = engine.head_params
        output = StepOutput(
            posterior_pose=decoded.posterior_pose,
            refined_tokens=decoded.refined_tokens,
            candidate_state=decoded.candidate_state,
            predicted_pose=head_pose(hp, decoded.posterior_pose, timestamp=float(frame.frame_index)),
            local_points=head_points(hp, decoded.refined_tokens, decoded.posterior_pose, "self"),
            world_points=head_points(hp, decoded.refined_tokens, decoded.posterior_pose, "world"),
            prior_pose=prior,
            ttt_loss=loss,
            gate_stats={
                "zeta_mean": float(zeta.mean()),
                "zeta_min": float(zeta.min()),
                "zeta_max": float(zeta.max()),
                "token_gate_mean": float(np.mean(token_gate.g)),
            },
        )
    except Exception as e:
        engine.fast_weights = fw_snapshot
        engine.state = state_snapshot
        logger.error(f"[Recurrent] Step failed at frame {frame.frame_index}; memories rolled back: {e}")
        raise

    engine.steps += 1
    logger.debug(
        f"[Recurrent] frame={frame.frame_index} ttt_loss={loss:.6g} "
        f"took {1000.0 * (time.perf_counter() - started):.2f}ms"
    )
    return output


# ============================================================
# Checkpoints
# ============================================================
def checkpoint_bytes(engine: Engine) -> bytes:
    fw = engine.fast_weights
    return state_to_bytes(engine.state) + encode_stack([fw.w1, fw.w2, fw.w3])


def restore_checkpoint_bytes(engine: Engine, buffer: bytes) -> None:
    state, offset = state_from_bytes(buffer)
    (w1, w2, w3), end = decode_stack(buffer, offset, 3)
    require(end == len(buffer), f"checkpoint has {len(buffer) - end} trailing bytes")
    require(
        state.shape == engine.state.shape,
        f"checkpoint state {state.shape} does not match engine state {engine.state.shape}",
    )
    require(
        w1.shape == engine.fast_weights.w1.shape,
        f"checkpoint fast weights {w1.shape} do not match engine {engine.fast_weights.w1.shape}",
    )
    engine.state = state
    engine.fast_weights = FastWeights(w1, w2, w3)


def save_checkpoint(engine: Engine, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(engine))
    logger.info(f"[Recurrent] Checkpoint written to {path}")
    return path


def load_checkpoint(engine: Engine, path: str | Path) -> None:
    restore_checkpoint_bytes(engine, Path(path).read_bytes())
    logger.info(f"[Recurrent] Checkpoint restored from {path}")
