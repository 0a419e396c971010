"""
Small numeric primitives shared by the memory modules, the decoder and the heads.
Everything works on float64 numpy arrays.
"""
import numpy as np
from scipy.special import erf, expit, softmax

RMS_EPS = 1e-6

_OPEN_LOW = np.nextafter(0.0, 1.0)
_OPEN_HIGH = np.nextafter(1.0, 0.0)


def linear(weight: np.ndarray, bias: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """y = W x + b for a vector, or row-wise for a matrix of inputs. W has shape (out, in)."""
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def open_sigmoid(x: np.ndarray) -> np.ndarray:
    """Sigmoid clipped to the open interval (0, 1) so saturation never hits the endpoints."""
    return np.clip(expit(x), _OPEN_LOW, _OPEN_HIGH)


def silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    # d/dx x*sigma(x) = sigma(x) * (1 + x * (1 - sigma(x)))
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def rms_norm(x: np.ndarray, scale: np.ndarray | None = None, eps: float = RMS_EPS) -> np.ndarray:
    """Divide by the root-mean-square over the last axis, then apply the elementwise scale."""
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    y = x / rms
    if scale is not None:
        y = y * scale
    return y


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize each row; zero rows stay zero."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, x / safe, 0.0)


def multi_head_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    """
    Scaled dot-product attention of query rows over key/value rows, split into heads.
    q: (n, d), k and v: (m, d) -> (n, d).
    """
    n, d = q.shape
    m = k.shape[0]
    dh = d // heads
    qh = q.reshape(n, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(m, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(m, heads, dh).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    out = softmax(scores, axis=-1) @ vh
    return out.transpose(1, 0, 2).reshape(n, d)


def gaussian(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def fan_in_gaussian(rng: np.random.Generator, out_dim: int, in_dim: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain / np.sqrt(in_dim), size=(out_dim, in_dim))
