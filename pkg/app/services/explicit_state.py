"""
Explicit geometric memory: a fixed grid of state tokens written through a channel-wise gate,
optionally composed with a per-token gate from a plug-in update strategy.
"""
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.services.frame_packet import FramePacket
from app.utils.contracts import require, require_finite, require_shape
from app.utils.numerics import fan_in_gaussian, gaussian, gelu, linear, open_sigmoid, sigmoid
from app.utils.state_io import decode_matrix, encode_matrix

logger = logging.getLogger(__name__)

STATE_INIT_STD = 0.02
NEUTRAL_TOKEN_GATE = 0.5


class GateConfig(BaseModel):
    state_tokens: int = Field(768, gt=0, description="N_s")
    channels: int = Field(768, gt=0, description="C")
    d_in: int = Field(1024, gt=0)
    bottleneck: int = Field(384, gt=0)


class GateStrategy(BaseModel):
    """
    Per-token gate provider.
      constant   -> params.value everywhere (>= 0)
      overwrite  -> 1 everywhere
      similarity -> sigmoid(cos(s_prev[i], s_cand[i]) / params.temperature)
    """

    kind: Literal["constant", "overwrite", "similarity"] = "overwrite"
    params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_params(self):
        if self.kind == "constant":
            value = self.params.get("value")
            if value is None or not np.isfinite(value) or value < 0.0:
                raise ValueError("constant gate strategy needs a finite params.value >= 0")
        if self.kind == "similarity":
            if self.params.get("temperature", 1.0) <= 0.0:
                raise ValueError("similarity gate strategy needs params.temperature > 0")
        return self

    @property
    def temperature(self) -> float:
        return float(self.params.get("temperature", 1.0))


@dataclass
class StateTokens:
    tokens: np.ndarray  # (N_s, C)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.tokens.shape)

    @property
    def nbytes(self) -> int:
        return int(self.tokens.nbytes)

    def copy(self) -> "StateTokens":
        return StateTokens(self.tokens.copy())


@dataclass
class GateParams:
    w1: np.ndarray  # (bottleneck, C + d_in)
    b1: np.ndarray
    w2: np.ndarray  # (C, bottleneck)
    b2: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def nbytes(self) -> int:
        return int(sum(a.nbytes for a in self.arrays()))


@dataclass(frozen=True)
class TokenGate:
    g: np.ndarray  # (N_s,)


# ============================================================
# Initialisation
# ============================================================
def init_state(cfg: GateConfig, rng: np.random.Generator) -> StateTokens:
    return StateTokens(gaussian(rng, (cfg.state_tokens, cfg.channels), STATE_INIT_STD))


def init_gate_params(cfg: GateConfig, rng: np.random.Generator) -> GateParams:
    return GateParams(
        w1=fan_in_gaussian(rng, cfg.bottleneck, cfg.channels + cfg.d_in),
        b1=np.zeros(cfg.bottleneck),
        w2=fan_in_gaussian(rng, cfg.channels, cfg.bottleneck),
        b2=np.zeros(cfg.channels),
    )


def zero_gate_params(cfg: GateConfig) -> GateParams:
    return GateParams(
        w1=np.zeros((cfg.bottleneck, cfg.channels + cfg.d_in)),
        b1=np.zeros(cfg.bottleneck),
        w2=np.zeros((cfg.channels, cfg.bottleneck)),
        b2=np.zeros(cfg.channels),
    )


# ============================================================
# Gates and updates
# ============================================================
def compute_gate(gp: GateParams, frame: FramePacket, s_prev: StateTokens) -> np.ndarray:
    """zeta[i] = sigmoid(layer2(GELU(layer1([s_prev[i], pooled F_t])))), strictly inside (0, 1)."""
    require(frame.token_count >= 1, "frame must contain at least one token")
    n_s = s_prev.tokens.shape[0]
    x = np.concatenate([s_prev.tokens, np.broadcast_to(frame.pooled, (n_s, frame.width))], axis=1)
    require(
        x.shape[1] == gp.w1.shape[1],
        f"gate input width {x.shape[1]} does not match layer1 input {gp.w1.shape[1]}",
    )
    hidden = gelu(linear(gp.w1, gp.b1, x))
    return open_sigmoid(linear(gp.w2, gp.b2, hidden))


def _check_update_operands(s_prev: StateTokens, s_cand: StateTokens, zeta: np.ndarray) -> None:
    require_shape(s_cand.tokens, s_prev.shape, "candidate state")
    require_shape(zeta, s_prev.shape, "gate")


def gated_update(s_prev: StateTokens, s_cand: StateTokens, zeta: np.ndarray) -> StateTokens:
    _check_update_operands(s_prev, s_cand, zeta)
    return StateTokens(zeta * s_cand.tokens + (1.0 - zeta) * s_prev.tokens)


def gated_update_with_token_gate(s_prev: StateTokens, s_cand: StateTokens, zeta: np.ndarray, g: TokenGate) -> StateTokens:
    """S_t = G * (zeta * S_cand + (1 - zeta) * S_prev); G multiplies both terms."""
    _check_update_operands(s_prev, s_cand, zeta)
    gate = np.asarray(g.g, dtype=np.float64).reshape(-1)
    require_shape(gate, (s_prev.shape[0],), "token gate")
    require(bool(np.all(gate >= 0.0)), "token gate entries must be non-negative")
    require_finite(gate, "token gate")
    return StateTokens(gate[:, None] * (zeta * s_cand.tokens + (1.0 - zeta) * s_prev.tokens))


def apply_strategy(strategy: GateStrategy, s_prev: StateTokens, s_cand: StateTokens) -> TokenGate:
    require_shape(s_cand.tokens, s_prev.shape, "candidate state")
    n_s = s_prev.shape[0]
    if strategy.kind == "overwrite":
        return TokenGate(np.ones(n_s))
    if strategy.kind == "constant":
        return TokenGate(np.full(n_s, float(strategy.params["value"])))

    prev_norm = np.linalg.norm(s_prev.tokens, axis=1)
    cand_norm = np.linalg.norm(s_cand.tokens, axis=1)
    degenerate = (prev_norm == 0.0) | (cand_norm == 0.0)
    denom = np.where(degenerate, 1.0, prev_norm * cand_norm)
    cosine = np.sum(s_prev.tokens * s_cand.tokens, axis=1) / denom
    gate = np.where(degenerate, NEUTRAL_TOKEN_GATE, sigmoid(cosine / strategy.temperature))
    if np.any(degenerate):
        logger.debug(f"[ExplicitState] {int(degenerate.sum())} zero-norm tokens got the neutral gate")
    return TokenGate(gate)


def gate_param_count(cfg: GateConfig) -> int:
    width = cfg.channels + cfg.d_in
    return (width * cfg.bottleneck + cfg.bottleneck) + (cfg.bottleneck * cfg.channels + cfg.channels)


# ============================================================
# Snapshots
# ============================================================
def state_to_bytes(state: StateTokens) -> bytes:
    return encode_matrix(state.tokens)


def state_from_bytes(buffer: bytes, offset: int = 0) -> tuple[StateTokens, int]:
    tokens, end = decode_matrix(buffer, offset)
    return StateTokens(tokens), end
