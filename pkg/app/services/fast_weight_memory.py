"""
Implicit pose memory: a per-head SwiGLU MLP whose weights are rewritten online.

Read path:  pooled F_t -> query_proj -> per-head L2 normalisation -> f_W(q) -> RMSNorm -> out_proj.
Write path: W_t = alpha_t * W_{t-1} + eta_t * grad_W <f_W(q), p>, per head and per matrix.

The TTT objective is taken on the per-head SwiGLU output against the matching slice of the
posterior; readout_norm and out_proj are slow parameters that the online update never touches.
"""
import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.services.frame_packet import FramePacket
from app.utils.contracts import ContractError, require, require_finite, require_shape
from app.utils.numerics import (
    fan_in_gaussian,
    gaussian,
    l2_normalize_rows,
    linear,
    open_sigmoid,
    rms_norm,
    silu,
    silu_grad,
    softplus,
)

logger = logging.getLogger(__name__)

FAST_WEIGHT_INIT_STD = 0.02
_ALPHA_HIGH = np.nextafter(1.0, 0.0)
_ETA_FLOOR = np.finfo(np.float64).tiny


class FastWeightConfig(BaseModel):
    d_in: int = Field(1024, gt=0, description="Width of the visual tokens")
    d_model: int = Field(768, gt=0, description="Latent width of the memory read-out")
    heads: int = Field(12, gt=0)
    d_head: int = Field(64, gt=0)
    gamma: float = Field(0.01, gt=0.0, lt=1.0, description="Decay scale")
    c_base: float = Field(0.001, description="Base learning-rate constant inside the softplus")

    @model_validator(mode="after")
    def _check_heads(self):
        if self.d_model != self.heads * self.d_head:
            raise ValueError(
                f"d_model={self.d_model} must equal heads*d_head={self.heads * self.d_head}"
            )
        return self


@dataclass
class FastWeights:
    """W1, W2, W3 stacked over heads, each of shape (heads, d_head, d_head)."""

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray

    @property
    def heads(self) -> int:
        return int(self.w1.shape[0])

    @property
    def d_head(self) -> int:
        return int(self.w1.shape[1])

    @property
    def nbytes(self) -> int:
        return int(self.w1.nbytes + self.w2.nbytes + self.w3.nbytes)

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.w1, self.w2, self.w3

    def head(self, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.w1[h], self.w2[h], self.w3[h]

    def copy(self) -> "FastWeights":
        return FastWeights(self.w1.copy(), self.w2.copy(), self.w3.copy())


@dataclass
class FastWeightGradients:
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.g1, self.g2, self.g3

    def flat(self) -> np.ndarray:
        return np.concatenate([self.g1.ravel(), self.g2.ravel(), self.g3.ravel()])


@dataclass
class SlowParams:
    query_w: np.ndarray
    query_b: np.ndarray
    lr_w: np.ndarray
    lr_b: np.ndarray
    decay_w: np.ndarray
    decay_b: np.ndarray
    norm_scale: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @property
    def heads(self) -> int:
        return int(self.decay_w.shape[0])

    @property
    def d_model(self) -> int:
        return int(self.query_w.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.query_w.shape[1])

    def arrays(self) -> list[np.ndarray]:
        return [
            self.query_w, self.query_b,
            self.lr_w, self.lr_b,
            self.decay_w, self.decay_b,
            self.norm_scale,
            self.out_w, self.out_b,
        ]

    @property
    def nbytes(self) -> int:
        return int(sum(a.nbytes for a in self.arrays()))


@dataclass(frozen=True)
class PriorReadout:
    """Intermediate products of one memory read."""

    queries: np.ndarray  # (heads, d_head), L2-normalised
    readout: np.ndarray  # (d_model,), concatenated SwiGLU outputs before readout_norm
    prior: np.ndarray  # (d_model,), p_hat


# ============================================================
# Initialisation
# ============================================================
def init_fast_weights(cfg: FastWeightConfig, rng: np.random.Generator) -> FastWeights:
    shape = (cfg.heads, cfg.d_head, cfg.d_head)
    return FastWeights(
        w1=gaussian(rng, shape, FAST_WEIGHT_INIT_STD),
        w2=gaussian(rng, shape, FAST_WEIGHT_INIT_STD),
        w3=gaussian(rng, shape, FAST_WEIGHT_INIT_STD),
    )


def init_slow_params(cfg: FastWeightConfig, rng: np.random.Generator) -> SlowParams:
    """Fan-in scaled projections; the decay and learning-rate heads start at zero."""
    return SlowParams(
        query_w=fan_in_gaussian(rng, cfg.d_model, cfg.d_in),
        query_b=np.zeros(cfg.d_model),
        lr_w=np.zeros((3 * cfg.heads, cfg.d_in)),
        lr_b=np.zeros(3 * cfg.heads),
        decay_w=np.zeros((cfg.heads, cfg.d_in)),
        decay_b=np.zeros(cfg.heads),
        norm_scale=np.ones(cfg.d_model),
        out_w=fan_in_gaussian(rng, cfg.d_model, cfg.d_model),
        out_b=np.zeros(cfg.d_model),
    )


def zero_fast_weights(heads: int, d_head: int) -> FastWeights:
    shape = (heads, d_head, d_head)
    return FastWeights(np.zeros(shape), np.zeros(shape), np.zeros(shape))


# ============================================================
# Read path
# ============================================================
def swiglu_forward(weights_head, x: np.ndarray) -> np.ndarray:
    """W2 (SiLU(W1 x) * (W3 x)) for one head."""
    w1, w2, w3 = weights_head
    x = np.asarray(x, dtype=np.float64)
    require(x.ndim == 1, f"swiglu input must be a vector, got ndim={x.ndim}")
    d = x.shape[0]
    for name, w in (("W1", w1), ("W2", w2), ("W3", w3)):
        require_shape(w, (d, d), name)
    return w2 @ (silu(w1 @ x) * (w3 @ x))


def _swiglu_heads(fw: FastWeights, queries: np.ndarray) -> np.ndarray:
    a = np.einsum("hij,hj->hi", fw.w1, queries)
    g = np.einsum("hij,hj->hi", fw.w3, queries)
    return np.einsum("hij,hj->hi", fw.w2, silu(a) * g)


def head_queries(sp: SlowParams, frame: FramePacket) -> np.ndarray:
    """Mean-pooled tokens -> query_proj -> split into heads -> L2-normalise each head."""
    require(frame.token_count >= 1, "frame must contain at least one token")
    require(
        frame.width == sp.d_in,
        f"frame token width {frame.width} does not match query_proj input {sp.d_in}",
    )
    q = linear(sp.query_w, sp.query_b, frame.pooled)
    return l2_normalize_rows(q.reshape(sp.heads, sp.d_model // sp.heads))


def read_prior_detailed(fw: FastWeights, sp: SlowParams, frame: FramePacket) -> PriorReadout:
    queries = head_queries(sp, frame)
    require(
        fw.heads == sp.heads and fw.heads * fw.d_head == sp.d_model,
        f"fast weights ({fw.heads}x{fw.d_head}) do not match slow params "
        f"(heads={sp.heads}, d_model={sp.d_model})",
    )
    readout = _swiglu_heads(fw, queries).reshape(-1)
    prior = linear(sp.out_w, sp.out_b, rms_norm(readout, sp.norm_scale))
    return PriorReadout(queries=queries, readout=readout, prior=prior)


def read_prior(fw: FastWeights, sp: SlowParams, frame: FramePacket) -> np.ndarray:
    return read_prior_detailed(fw, sp, frame).prior


def static_prior(sp: SlowParams) -> np.ndarray:
    """The prior an empty memory reads: out_proj(readout_norm(0)), i.e. the out_proj bias."""
    return linear(sp.out_w, sp.out_b, rms_norm(np.zeros(sp.d_model), sp.norm_scale))


# ============================================================
# TTT objective and gradients
# ============================================================
def ttt_loss(prior: np.ndarray, posterior: np.ndarray) -> float:
    prior = np.asarray(prior, dtype=np.float64)
    posterior = np.asarray(posterior, dtype=np.float64)
    require(
        prior.shape == posterior.shape,
        f"prior shape {prior.shape} does not match posterior shape {posterior.shape}",
    )
    return float(np.dot(prior, posterior))


def _check_gradient_inputs(fw: FastWeights, queries: np.ndarray, posterior: np.ndarray) -> np.ndarray:
    require_shape(queries, (fw.heads, fw.d_head), "queries")
    require(
        posterior.size == fw.heads * fw.d_head,
        f"posterior has {posterior.size} entries, expected {fw.heads * fw.d_head}",
    )
    return np.asarray(posterior, dtype=np.float64).reshape(fw.heads, fw.d_head)


def ttt_gradient(fw: FastWeights, queries: np.ndarray, posterior: np.ndarray) -> FastWeightGradients:
    """
    Analytic gradient of sum_h <f_W[h](q[h]), p[h]> with respect to W1, W2, W3.
    The posterior is held constant.
    """
    p = _check_gradient_inputs(fw, queries, posterior)
    a = np.einsum("hij,hj->hi", fw.w1, queries)
    s = silu(a)
    g = np.einsum("hij,hj->hi", fw.w3, queries)
    hidden = s * g
    u = np.einsum("hji,hj->hi", fw.w2, p)

    g2 = p[:, :, None] * hidden[:, None, :]
    g1 = (u * g * silu_grad(a))[:, :, None] * queries[:, None, :]
    g3 = (u * s)[:, :, None] * queries[:, None, :]
    return FastWeightGradients(g1=g1, g2=g2, g3=g3)


def _head_objective(fw: FastWeights, queries: np.ndarray, p: np.ndarray) -> float:
    total = 0.0
    for h in range(fw.heads):
        total += ttt_loss(swiglu_forward(fw.head(h), queries[h]), p[h])
    return total


def finite_diff_gradient(fw: FastWeights, queries: np.ndarray, posterior: np.ndarray, step: float) -> FastWeightGradients:
    """Central differences of the TTT objective, one weight entry at a time."""
    require(step > 0.0, f"finite-difference step must be positive, got {step}")
    p = _check_gradient_inputs(fw, queries, posterior)
    shifted = fw.copy()
    grads = []
    for w in shifted.matrices():
        grad = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            original = w[idx]
            w[idx] = original + step
            f_plus = _head_objective(shifted, queries, p)
            w[idx] = original - step
            f_minus = _head_objective(shifted, queries, p)
            w[idx] = original
            grad[idx] = (f_plus - f_minus) / (2.0 * step)
        grads.append(grad)
    return FastWeightGradients(*grads)


def gradient_relative_error(analytic: FastWeightGradients, reference: FastWeightGradients) -> float:
    """Relative Frobenius error over all three matrices; absolute when the reference is zero."""
    diff = np.linalg.norm(analytic.flat() - reference.flat())
    scale = np.linalg.norm(reference.flat())
    return float(diff / scale) if scale > 0.0 else float(diff)


# ============================================================
# Update rule
# ============================================================
def predict_decay(sp: SlowParams, frame: FramePacket, gamma: float = 0.01) -> np.ndarray:
    """alpha_t = 1 - gamma * sigmoid(W_alpha F_t), one retention factor per head, in (1-gamma, 1)."""
    require(frame.token_count >= 1, "frame must contain at least one token")
    alpha = 1.0 - gamma * open_sigmoid(linear(sp.decay_w, sp.decay_b, frame.pooled))
    return np.clip(alpha, np.nextafter(1.0 - gamma, 1.0), _ALPHA_HIGH)


def predict_lr(sp: SlowParams, frame: FramePacket, c_base: float = 0.001) -> np.ndarray:
    """eta_t = softplus(W_eta F_t + c_base), returned as (3, heads): row i scales W_{i+1}."""
    require(frame.token_count >= 1, "frame must contain at least one token")
    raw = linear(sp.lr_w, sp.lr_b, frame.pooled) + c_base
    eta = np.maximum(softplus(raw), _ETA_FLOOR)
    return eta.reshape(3, sp.heads)


def update_weights(fw_prev: FastWeights, grads: FastWeightGradients, alpha: np.ndarray, eta: np.ndarray) -> FastWeights:
    alpha = np.asarray(alpha, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    require_shape(alpha, (fw_prev.heads,), "alpha")
    require_shape(eta, (3, fw_prev.heads), "eta")
    updated = []
    for i, (w, g) in enumerate(zip(fw_prev.matrices(), grads.matrices())):
        require_shape(g, w.shape, f"gradient G{i + 1}")
        updated.append(alpha[:, None, None] * w + eta[i][:, None, None] * g)
    return FastWeights(*updated)


def ensure_finite(fw: FastWeights) -> FastWeights:
    for i, w in enumerate(fw.matrices()):
        try:
            require_finite(w, f"fast weight W{i + 1}")
        except ContractError:
            logger.error(f"[FastWeight] W{i + 1} diverged (non-finite entries)")
            raise
    return fw


def fast_weight_param_count(cfg: FastWeightConfig) -> int:
    d_in, d_model, heads, d_head = cfg.d_in, cfg.d_model, cfg.heads, cfg.d_head
    return (
        (d_in * d_model + d_model)
        + heads * 3 * d_head * d_head
        + (d_in * 3 * heads + 3 * heads)
        + (d_in * heads + heads)
        + d_model
        + (d_model * d_model + d_model)
    )
