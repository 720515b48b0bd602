"""Dense tensor substrate: validated numpy arrays, deterministic matmul,
activations, RMSNorm, a splitmix64 PRNG and the VLMF binary tensor format.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 or float64.
Every routine here is a pure function of its arguments.
"""
from __future__ import annotations

import os
import struct

import numpy as np
from scipy.special import erf

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class TensorError(ValueError):
    """Raised on shape, precision or finiteness contract violations."""


def tensor(data, dtype=np.float32) -> np.ndarray:
    """Build a validated tensor: float32/float64, at least 1-d, all finite."""
    arr = np.array(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        raise TensorError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(s <= 0 for s in arr.shape):
        raise TensorError(f"all dimensions must be positive, got shape {arr.shape}")
    check_finite(arr, "tensor construction")
    return arr


def check_finite(x: np.ndarray, where: str = "") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise TensorError(f"non-finite values encountered{' in ' + where if where else ''}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed, sequential-over-k summation order.

    BLAS reorders reductions depending on thread count and blocking, so the
    product is accumulated one rank-1 update at a time instead. Results are
    therefore bitwise reproducible across machines and thread settings.
    ``a`` may carry leading batch dimensions; ``b`` must be 2-d.
    """
    if a.dtype != b.dtype:
        raise TensorError(f"precision mismatch: {a.dtype} vs {b.dtype}")
    if b.ndim != 2 or a.ndim < 1:
        raise TensorError(f"matmul expects a[..., k] and b[k, n], got {a.shape} and {b.shape}")
    k = a.shape[-1]
    if b.shape[0] != k:
        raise TensorError(f"shape mismatch: inner dimensions {k} and {b.shape[0]}")
    out = np.zeros(a.shape[:-1] + (b.shape[1],), dtype=a.dtype)
    for j in range(k):
        out += a[..., j, None] * b[j]
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(x.dtype, copy=False)


def softplus(x: np.ndarray) -> np.ndarray:
    big = x > 30.0
    safe = np.where(big, 0.0, x)
    return np.where(big, x, np.log1p(np.exp(safe))).astype(x.dtype, copy=False)


_ACTIVATIONS = {"silu": silu, "gelu_exact": gelu, "gelu": gelu, "softplus": softplus}


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise TensorError(f"unknown activation {kind!r}; expected one of silu, gelu_exact, softplus") from None
    return fn(np.asarray(x))


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Scale each feature vector (last axis) to unit root-mean-square, then by ``gain``."""
    if gain.ndim != 1 or x.shape[-1] != gain.shape[0]:
        raise TensorError(f"rms_norm: feature dim {x.shape[-1]} does not match gain {gain.shape}")
    ms = np.mean(x * x, axis=-1, keepdims=True)
    denom = np.sqrt(ms + eps)
    # x == 0 with eps == 0 would be 0/0; the zero vector maps to itself
    safe = np.where(denom == 0, 1.0, denom).astype(x.dtype, copy=False)
    return x / safe * gain


class Prng:
    """splitmix64 generator with Box-Muller normals.

    The stream is a pure function of the seed: output ``i`` is the mix of
    ``seed + (i + 1) * golden`` (mod 2**64), which also lets bulk draws be
    vectorised without changing a single bit.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int | None = None):
        count = 1 if n is None else int(n)
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * int(_GOLDEN)) & _MASK64
        return int(z[0]) if n is None else z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) with 53 random bits each."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape, scale: float = 1.0, dtype=np.float32) -> np.ndarray:
        if not scale > 0:
            raise TensorError(f"prng_normal: scale must be > 0, got {scale}")
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1).reshape(-1)[:n]
        return (z * scale).reshape(shape).astype(dtype)


def prng_normal(p: Prng, shape, scale: float, dtype=np.float32) -> np.ndarray:
    return p.normal(shape, scale, dtype)


# --- VLMF binary format ----------------------------------------------------

VLMF_MAGIC = b"VLMF"
VLMF_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k.newbyteorder("<") for k, v in _DTYPE_CODES.items()}


class VlmfError(ValueError):
    pass


def vlmf_bytes(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.dtype not in _DTYPE_CODES:
        raise VlmfError(f"dtype: cannot store {x.dtype}; VLMF holds float32 or float64")
    if x.ndim == 0 or x.ndim > 255:
        raise VlmfError(f"ndim: must be in 1..255, got {x.ndim}")
    head = VLMF_MAGIC + struct.pack("<BBB", VLMF_VERSION, _DTYPE_CODES[x.dtype], x.ndim)
    head += struct.pack(f"<{x.ndim}I", *x.shape)
    return head + np.ascontiguousarray(x, dtype=_CODE_DTYPES[_DTYPE_CODES[x.dtype]]).tobytes()


def parse_vlmf(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise VlmfError("unexpected end of data while reading header")
    if buf[:4] != VLMF_MAGIC:
        raise VlmfError(f"magic: expected b'VLMF', found {bytes(buf[:4])!r}")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VLMF_VERSION:
        raise VlmfError(f"version: expected {VLMF_VERSION}, found {version}")
    if code not in _CODE_DTYPES:
        raise VlmfError(f"dtype: unknown dtype code {code} (expected 0=f32 or 1=f64)")
    if ndim == 0:
        raise VlmfError("ndim: must be at least 1")
    off = 7
    if len(buf) < off + 4 * ndim:
        raise VlmfError("unexpected end of data while reading dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    if any(d == 0 for d in dims):
        raise VlmfError(f"dims: zero-sized dimension in {dims}")
    off += 4 * ndim
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(dims)) * dtype.itemsize
    if len(buf) - off < nbytes:
        raise VlmfError(f"unexpected end of data: need {nbytes} payload bytes, found {len(buf) - off}")
    if len(buf) - off > nbytes:
        raise VlmfError(f"dims: {len(buf) - off - nbytes} trailing bytes after payload for dims {dims}")
    arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims)), offset=off)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def save_vlmf(path: str | os.PathLike, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(vlmf_bytes(x))


def load_vlmf(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_vlmf(fh.read())


def frobenius_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (denom if denom > 0 else 1.0))

