"""
Forgetting experiment for the explicit memory: write a known pattern into S_0, feed pure-noise
candidates through the gated update and track ||S_t - S_0||_F / ||S_0||_F.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.services.explicit_state import GateConfig, StateTokens, compute_gate, gated_update, init_gate_params
from app.services.frame_packet import FramePacket
from app.utils.contracts import require

logger = logging.getLogger(__name__)

LEARNED_MODE = "learned"
PROBE_TOKENS = 4


@dataclass(frozen=True)
class RetentionDims:
    state_tokens: int = 16
    channels: int = 16
    d_in: int = 16
    bottleneck: int = 8


def mode_name(zeta: float) -> str:
    return f"zeta={zeta:g}"


def known_pattern(state_tokens: int, channels: int) -> np.ndarray:
    i = np.arange(1, state_tokens + 1)[:, None]
    c = np.arange(1, channels + 1)[None, :]
    return np.sin(0.5 * i) * np.cos(0.3 * c) + 0.1 * np.sin(0.7 * i * c)


def retention_experiment(
    steps: int,
    zetas: Sequence[float] = (0.1, 1.0),
    learned_gate: bool = False,
    noise_level: float = 1.0,
    seed: int = 0,
    dims: RetentionDims | None = None,
) -> dict[str, list[float]]:
    """
    Retention curve per mode, entry t-1 holding the error after t updates.
    Every mode sees the same noise candidates.
    """
    require(steps >= 2, f"retention needs at least 2 steps, got {steps}")
    require(noise_level >= 0.0, f"noise level must be non-negative, got {noise_level}")
    for z in zetas:
        require(0.0 <= z <= 1.0, f"fixed gate value must lie in [0, 1], got {z}")
    dims = dims or RetentionDims()

    s0 = StateTokens(known_pattern(dims.state_tokens, dims.channels))
    s0_norm = float(np.linalg.norm(s0.tokens))
    noise_seq, gate_seq, frame_seq = np.random.SeedSequence(seed).spawn(3)
    noise = np.random.default_rng(noise_seq).normal(0.0, noise_level, size=(steps, *s0.shape))

    modes: dict[str, np.ndarray | None] = {mode_name(z): np.full(s0.shape, float(z)) for z in zetas}
    if learned_gate:
        modes[LEARNED_MODE] = None
        gate_cfg = GateConfig(
            state_tokens=dims.state_tokens, channels=dims.channels,
            d_in=dims.d_in, bottleneck=dims.bottleneck,
        )
        gate_params = init_gate_params(gate_cfg, np.random.default_rng(gate_seq))
        frame_rng = np.random.default_rng(frame_seq)
        frames = [
            FramePacket.from_tokens(frame_rng.normal(size=(PROBE_TOKENS, dims.d_in)), frame_index=t)
            for t in range(steps)
        ]

    curves: dict[str, list[float]] = {}
    for name, zeta in modes.items():
        state = s0
        curve = []
        for t in range(steps):
            z = zeta if zeta is not None else compute_gate(gate_params, frames[t], state)
            state = gated_update(state, StateTokens(noise[t]), z)
            curve.append(float(np.linalg.norm(state.tokens - s0.tokens) / s0_norm))
        curves[name] = curve

    logger.info(
        f"[Retention] {steps} steps, noise={noise_level}, seed={seed}: "
        + ", ".join(f"{k} -> {v[-1]:.4f}" for k, v in curves.items())
    )
    return curves


def expected_squared_error(zeta: float, t: int, noise_level: float, s0: np.ndarray) -> float:
    """
    E ||S_t - S_0||^2 / ||S_0||^2 for a fixed scalar gate and i.i.d. N(0, noise^2) candidates:
    S_t - S_0 = -(1 - (1-zeta)^t) S_0 + zeta * sum_k (1-zeta)^(t-k) N_k.
    """
    keep = (1.0 - zeta) ** t
    bias = (1.0 - keep) ** 2
    if zeta == 0.0:
        return bias
    variance = zeta**2 * (1.0 - (1.0 - zeta) ** (2 * t)) / (1.0 - (1.0 - zeta) ** 2)
    return float(bias + noise_level**2 * s0.size * variance / float(np.sum(s0 * s0)))
