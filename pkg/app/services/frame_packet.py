from dataclasses import dataclass

import numpy as np

from app.utils.contracts import require, require_finite


@dataclass(frozen=True)
class FramePacket:
    """Visual tokens F_t of one frame plus their cached mean."""

    tokens: np.ndarray
    pooled: np.ndarray
    frame_index: int = 0
    is_raymap: bool = False

    @classmethod
    def from_tokens(cls, tokens, frame_index: int = 0, is_raymap: bool = False) -> "FramePacket":
        tokens = np.array(tokens, dtype=np.float64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        require(tokens.ndim == 2, f"frame tokens must be a matrix, got ndim={tokens.ndim}")
        require(tokens.shape[0] >= 1, "frame must contain at least one token")
        require_finite(tokens, "frame tokens")
        return cls(
            tokens=tokens,
            pooled=tokens.mean(axis=0),
            frame_index=int(frame_index),
            is_raymap=bool(is_raymap),
        )

    @property
    def width(self) -> int:
        return int(self.tokens.shape[1])

    @property
    def token_count(self) -> int:
        return int(self.tokens.shape[0])
