"""
Binary checkpoint layout, little-endian:
  state section:        int64 N_s, int64 C, then N_s*C float64 row-major
  fast-weight section:  int64 heads, int64 d_head, then W1, W2, W3 blocks (heads*d_head*d_head float64 each)
"""
import numpy as np

from app.utils.contracts import require

_INT = np.dtype("<i8")
_FLOAT = np.dtype("<f8")


def _pack_header(*values: int) -> bytes:
    return np.array(values, dtype=_INT).tobytes()


def _read_header(buffer: bytes, offset: int, count: int) -> tuple[list[int], int]:
    end = offset + count * _INT.itemsize
    require(len(buffer) >= end, "checkpoint truncated inside a header")
    values = np.frombuffer(buffer, dtype=_INT, count=count, offset=offset)
    return [int(v) for v in values], end


def _read_block(buffer: bytes, offset: int, shape: tuple) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    end = offset + count * _FLOAT.itemsize
    require(len(buffer) >= end, "checkpoint truncated inside a data block")
    block = np.frombuffer(buffer, dtype=_FLOAT, count=count, offset=offset).reshape(shape)
    return block.astype(np.float64, copy=True), end


def encode_matrix(matrix: np.ndarray) -> bytes:
    rows, cols = matrix.shape
    return _pack_header(rows, cols) + np.ascontiguousarray(matrix, dtype=_FLOAT).tobytes()


def decode_matrix(buffer: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    (rows, cols), offset = _read_header(buffer, offset, 2)
    require(rows > 0 and cols > 0, f"invalid matrix header ({rows}, {cols})")
    return _read_block(buffer, offset, (rows, cols))


def encode_stack(blocks: list[np.ndarray]) -> bytes:
    heads, d, _ = blocks[0].shape
    payload = b"".join(np.ascontiguousarray(b, dtype=_FLOAT).tobytes() for b in blocks)
    return _pack_header(heads, d) + payload


def decode_stack(buffer: bytes, offset: int, count: int) -> tuple[list[np.ndarray], int]:
    (heads, d), offset = _read_header(buffer, offset, 2)
    require(heads > 0 and d > 0, f"invalid fast-weight header ({heads}, {d})")
    blocks = []
    for _ in range(count):
        block, offset = _read_block(buffer, offset, (heads, d, d))
        blocks.append(block)
    return blocks, offset
