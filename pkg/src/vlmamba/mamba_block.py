"""Gated Mamba layer (in-projection, causal depthwise conv, SiLU, selective
scan, gated out-projection) and the residual RMSNorm language-model stack
with a tied embedding head.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ssm import (SelectiveScanParams, discretize_zoh, selective_params,
                  selective_scan)
from .tensor_core import Prng, TensorError, matmul, rms_norm, silu

NORM_EPS = 1e-5


@dataclass
class MambaLayerWeights:
    w_in: np.ndarray  # (D, 2*Dinner): x branch, then gate branch
    conv_k: np.ndarray  # (Dinner, K)
    conv_b: np.ndarray  # (Dinner,)
    ssm: SelectiveScanParams
    w_out: np.ndarray  # (Dinner, D)

    def __post_init__(self):
        d, two_di = self.w_in.shape
        di = self.ssm.d_inner
        if two_di != 2 * di:
            raise TensorError(f"w_in has {two_di} columns, expected 2*Dinner={2 * di}")
        if self.conv_k.shape[0] != di or self.conv_b.shape != (di,):
            raise TensorError("conv kernel/bias do not match Dinner")
        if self.w_out.shape != (di, d):
            raise TensorError(f"w_out shape {self.w_out.shape}, expected {(di, d)}")
        if not np.all(self.ssm.a_diag < 0):
            raise TensorError("a_diag must be strictly negative")

    @property
    def d_model(self) -> int:
        return self.w_in.shape[0]

    @property
    def d_inner(self) -> int:
        return self.ssm.d_inner

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        s = self.ssm
        return {
            f"{prefix}w_in": self.w_in, f"{prefix}conv_k": self.conv_k,
            f"{prefix}conv_b": self.conv_b, f"{prefix}a_diag": s.a_diag,
            f"{prefix}d": s.d, f"{prefix}w_delta": s.w_delta,
            f"{prefix}bias_delta": np.array([s.bias_delta], dtype=s.w_delta.dtype),
            f"{prefix}w_b": s.w_b, f"{prefix}w_c": s.w_c, f"{prefix}w_out": self.w_out,
        }

    @classmethod
    def from_named(cls, t: dict[str, np.ndarray], prefix: str = "") -> "MambaLayerWeights":
        ssm = SelectiveScanParams(
            t[f"{prefix}a_diag"], t[f"{prefix}d"], t[f"{prefix}w_delta"],
            float(t[f"{prefix}bias_delta"][0]), t[f"{prefix}w_b"], t[f"{prefix}w_c"])
        return cls(t[f"{prefix}w_in"], t[f"{prefix}conv_k"], t[f"{prefix}conv_b"], ssm,
                   t[f"{prefix}w_out"])


def init_mamba_layer(rng: Prng, d_model: int, d_state: int = 16, expand: int = 2,
                     conv_width: int = 4, dtype=np.float32) -> MambaLayerWeights:
    """Random layer with S4D-real state init ``a_diag[i, n] = -(n + 1)``."""
    di = expand * d_model
    w_in = rng.normal((d_model, 2 * di), d_model ** -0.5, dtype)
    conv_k = rng.normal((di, conv_width), conv_width ** -0.5, dtype)
    conv_b = np.zeros(di, dtype)
    a_diag = -np.tile(np.arange(1, d_state + 1, dtype=dtype), (di, 1))
    ssm = SelectiveScanParams(
        a_diag=a_diag,
        d=np.ones(di, dtype),
        w_delta=rng.normal(di, di ** -0.5 * 0.1, dtype),
        bias_delta=float(np.log(np.expm1(0.05))),  # softplus^-1(0.05)
        w_b=rng.normal((di, d_state), di ** -0.5, dtype),
        w_c=rng.normal((di, d_state), di ** -0.5, dtype),
    )
    w_out = rng.normal((di, d_model), di ** -0.5, dtype)
    return MambaLayerWeights(w_in, conv_k, conv_b, ssm, w_out)


def causal_conv1d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Depthwise causal convolution; ``kernel[:, -1]`` taps the current step.

    ``out[t, i] = bias[i] + sum_j kernel[i, j] * x[t - (K-1) + j, i]`` with zeros
    before the start of the sequence.
    """
    L, di = x.shape
    if kernel.ndim != 2 or kernel.shape[0] != di or kernel.shape[1] < 1 or bias.shape != (di,):
        raise TensorError(f"conv kernel {kernel.shape} / bias {bias.shape} do not match x {x.shape}")
    K = kernel.shape[1]
    padded = np.concatenate([np.zeros((K - 1, di), x.dtype), x], axis=0)
    out = np.broadcast_to(bias, x.shape).copy()
    for j in range(K):
        out += kernel[:, j] * padded[j:j + L]
    return out


def _rec(trace, name, arr):
    if trace is not None:
        trace[name] = np.array(arr)


def mamba_layer_forward(x: np.ndarray, w: MambaLayerWeights, mode: str = "zoh_exact",
                        method: str = "sequential", trace: dict | None = None,
                        prefix: str = "") -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != w.d_model:
        raise TensorError(f"input shape {x.shape} does not match D={w.d_model}")
    di = w.d_inner
    ug = matmul(x, w.w_in)
    u, gate = ug[:, :di], ug[:, di:]
    u = silu(causal_conv1d(u, w.conv_k, w.conv_b))
    _rec(trace, prefix + "conv_out", u)
    y = selective_scan(u, w.ssm, mode, method)
    _rec(trace, prefix + "ssm_out", y)
    out = matmul(y * silu(gate), w.w_out)
    _rec(trace, prefix + "out", out)
    return out


@dataclass
class MambaLayerState:
    """Rolling state for one-token-at-a-time evaluation."""

    conv_buf: np.ndarray  # (K-1, Dinner) most recent pre-conv inputs
    h: np.ndarray  # (Dinner, N)

    @classmethod
    def zeros(cls, w: MambaLayerWeights) -> "MambaLayerState":
        dt = w.w_in.dtype
        return cls(np.zeros((w.conv_k.shape[1] - 1, w.d_inner), dt),
                   np.zeros((w.d_inner, w.ssm.n), dt))


def mamba_layer_step(x_t: np.ndarray, state: MambaLayerState, w: MambaLayerWeights,
                     mode: str = "zoh_exact") -> np.ndarray:
    """Advance the layer by one token; mutates ``state`` and returns ``(D,)``."""
    di = w.d_inner
    ug = matmul(x_t[None], w.w_in)[0]
    u, gate = ug[:di], ug[di:]
    window = np.concatenate([state.conv_buf, u[None]], axis=0)  # (K, Di)
    conv = w.conv_b + np.sum(w.conv_k.T * window, axis=0)
    state.conv_buf = window[1:]
    v = silu(conv)
    sel = selective_params(v[None], w.ssm.w_delta, w.ssm.bias_delta, w.ssm.w_b, w.ssm.w_c)
    dp = discretize_zoh(w.ssm.a_diag, sel.b_t, sel.delta, mode)
    state.h = dp.a_bar[0] * state.h + dp.b_bar[0] * v[:, None]
    y = np.sum(sel.c_t[0] * state.h, axis=-1) + w.ssm.d * v
    return matmul((y * silu(gate))[None], w.w_out)[0]


@dataclass
class MambaLmWeights:
    embedding: np.ndarray  # (V, D); the output head is its transpose
    norms: list[np.ndarray]
    layers: list[MambaLayerWeights]
    final_norm: np.ndarray
    mode: str = field(default="zoh_exact")

    def __post_init__(self):
        if len(self.layers) < 1:
            raise TensorError("a Mamba LM needs at least one layer")
        if len(self.norms) != len(self.layers):
            raise TensorError("one norm gain per layer required")
        if self.embedding.shape[0] < 259:
            raise TensorError(f"vocabulary must hold 256 bytes + 3 specials, got {self.embedding.shape[0]}")

    @property
    def vocab(self) -> int:
        return self.embedding.shape[0]

    @property
    def d_model(self) -> int:
        return self.embedding.shape[1]


def init_mamba_lm(rng: Prng, vocab: int = 259, d_model: int = 64, n_layers: int = 4,
                  d_state: int = 16, expand: int = 2, conv_width: int = 4,
                  mode: str = "zoh_exact", dtype=np.float32) -> MambaLmWeights:
    if n_layers < 1:
        raise TensorError("a Mamba LM needs at least one layer")
    emb = rng.normal((vocab, d_model), 1.0, dtype)
    layers = [init_mamba_layer(rng, d_model, d_state, expand, conv_width, dtype)
              for _ in range(n_layers)]
    norms = [np.ones(d_model, dtype) for _ in range(n_layers)]
    return MambaLmWeights(emb, norms, layers, np.ones(d_model, dtype), mode)


def embed_sequence(tokens, prefix_embeds: np.ndarray | None, w: MambaLmWeights) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= w.vocab):
        bad = ids[(ids < 0) | (ids >= w.vocab)][0]
        raise TensorError(f"token id {int(bad)} out of range for vocabulary of {w.vocab}")
    parts = []
    if prefix_embeds is not None and prefix_embeds.shape[0] > 0:
        if prefix_embeds.ndim != 2 or prefix_embeds.shape[1] != w.d_model:
            raise TensorError(f"prefix embeddings {prefix_embeds.shape} do not match D={w.d_model}")
        parts.append(prefix_embeds.astype(w.embedding.dtype, copy=False))
    parts.append(w.embedding[ids])
    return np.concatenate(parts, axis=0)


def mamba_lm_forward(tokens, prefix_embeds: np.ndarray | None, w: MambaLmWeights,
                     method: str = "sequential", trace: dict | None = None) -> np.ndarray:
    """Logits ``(P + L, V)`` for an optional embedding prefix followed by tokens."""
    x = embed_sequence(tokens, prefix_embeds, w)
    if x.shape[0] == 0:
        raise TensorError("empty input sequence")
    _rec(trace, "lm.input", x)
    for i, (gain, layer) in enumerate(zip(w.norms, w.layers)):
        x = x + mamba_layer_forward(rms_norm(x, gain, NORM_EPS), layer, w.mode, method,
                                    trace, f"lm.layer{i}.")
        _rec(trace, f"lm.layer{i}.residual", x)
    x = rms_norm(x, w.final_norm, NORM_EPS)
    logits = matmul(x, np.ascontiguousarray(w.embedding.T))
    _rec(trace, "lm.logits", logits)
    return logits
