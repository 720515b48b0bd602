"""Diagonal state-space models: ZOH discretization, sequential and
work-efficient parallel scans, the input-dependent (selective)
parameterization, and an analytic backward pass for the selective scan.

Conventions
-----------
The recurrence evaluated everywhere is::

    h[k] = a_bar[k] * h[k-1] + b_bar[k] * x[k],     h[-1] = 0
    y[k] = <c[k], h[k]> + d * x[k]

with the skip term multiplying the *input*. The continuous-time output
equation is sometimes printed as ``y = C h + D h``; that form is treated as a
typo, since the skip path is meant to bypass the state.

State arrays have shape ``(L, *S)`` where ``S = (..., N)``: the last axis is
the state size and any leading axes are independent channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import TensorError, matmul, sigmoid, softplus

SERIES_THRESHOLD = 1e-4
B_DISCRETIZATIONS = ("zoh_exact", "euler")


@dataclass(frozen=True)
class SsmParams:
    """Time-invariant diagonal SSM for one channel."""

    a_diag: np.ndarray  # (N,), strictly negative
    b: np.ndarray  # (N,)
    c: np.ndarray  # (N,)
    d: float = 0.0

    def __post_init__(self):
        if not np.all(self.a_diag < 0):
            raise TensorError("a_diag must be strictly negative")
        if not (self.a_diag.shape == self.b.shape == self.c.shape) or self.a_diag.ndim != 1:
            raise TensorError(f"a_diag, b, c must share shape (N,), got "
                              f"{self.a_diag.shape}, {self.b.shape}, {self.c.shape}")

    @classmethod
    def from_log(cls, a_log, b, c, d=0.0):
        """Build from an unconstrained ``a_log``; ``a_diag = -exp(a_log)``."""
        return cls(-np.exp(np.asarray(a_log)), np.asarray(b), np.asarray(c), float(d))

    @property
    def n(self) -> int:
        return self.a_diag.shape[0]


@dataclass(frozen=True)
class DiscreteParams:
    a_bar: np.ndarray  # (L, *S)
    b_bar: np.ndarray  # (L, *S)


@dataclass(frozen=True)
class SelectiveInputs:
    delta: np.ndarray  # (L,)
    b_t: np.ndarray  # (L, N)
    c_t: np.ndarray  # (L, N)


@dataclass(frozen=True)
class SelectiveScanParams:
    """Per-channel SSM parameters plus the shared selective projections."""

    a_diag: np.ndarray  # (Dinner, N)
    d: np.ndarray  # (Dinner,)
    w_delta: np.ndarray  # (Dinner,)
    bias_delta: float
    w_b: np.ndarray  # (Dinner, N)
    w_c: np.ndarray  # (Dinner, N)

    def __post_init__(self):
        di, n = self.a_diag.shape
        if self.d.shape != (di,) or self.w_delta.shape != (di,):
            raise TensorError(f"d and w_delta must have shape ({di},)")
        if self.w_b.shape != (di, n) or self.w_c.shape != (di, n):
            raise TensorError(f"w_b and w_c must have shape ({di}, {n})")

    @property
    def d_inner(self) -> int:
        return self.a_diag.shape[0]

    @property
    def n(self) -> int:
        return self.a_diag.shape[1]


def _zoh_factor(dA, a, delta):
    """``(exp(dA) - 1) / a`` with the cubic series for small ``|dA|``."""
    small = np.abs(dA) < SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, a)
    exact = np.expm1(np.where(small, 0.0, dA)) / safe_a
    series = delta * (1.0 + dA / 2.0 + dA * dA / 6.0)
    return np.where(small, series, exact).astype(dA.dtype, copy=False)


def discretize_zoh(a_diag, b, delta, mode: str = "zoh_exact") -> DiscreteParams:
    """Discretize ``h' = a h + b x`` over steps of length ``delta``.

    ``a_diag`` has shape ``S = (..., N)``; ``b`` is ``(N,)`` (time-invariant) or
    ``(L, N)`` (one row per step) and is broadcast across leading channel axes;
    ``delta`` has shape ``(L,)``. Returns arrays of shape ``(L, *S)``.

    ``mode="euler"`` keeps the exact ``a_bar`` but uses ``b_bar = delta * b``.
    """
    a_diag = np.asarray(a_diag)
    delta = np.asarray(delta)
    b = np.asarray(b)
    if mode not in B_DISCRETIZATIONS:
        raise TensorError(f"unknown b_discretization {mode!r}")
    if delta.ndim != 1:
        raise TensorError(f"delta must be 1-d, got shape {delta.shape}")
    if not np.all(delta > 0):
        raise TensorError("delta must be strictly positive")
    n = a_diag.shape[-1]
    if b.shape[-1] != n or b.ndim > 2 or (b.ndim == 2 and b.shape[0] != delta.shape[0]):
        raise TensorError(f"b shape {b.shape} incompatible with N={n}, L={delta.shape[0]}")

    extra = a_diag.ndim
    dt = delta.reshape((-1,) + (1,) * extra)
    if b.ndim == 2:
        b_full = b.reshape((b.shape[0],) + (1,) * (extra - 1) + (n,))
    else:
        b_full = b[None]
    dA = dt * a_diag[None]
    a_bar = np.exp(dA)
    if mode == "euler":
        factor = np.broadcast_to(dt, dA.shape)
    else:
        factor = _zoh_factor(dA, a_diag[None], np.broadcast_to(dt, dA.shape))
    return DiscreteParams(a_bar, factor * b_full)


def _check_scan_args(dp: DiscreteParams, c, x):
    L = dp.a_bar.shape[0]
    if dp.b_bar.shape != dp.a_bar.shape:
        raise TensorError(f"a_bar {dp.a_bar.shape} and b_bar {dp.b_bar.shape} differ")
    if x.shape != dp.a_bar.shape[:-1]:
        raise TensorError(f"length mismatch: x has shape {x.shape}, expected {dp.a_bar.shape[:-1]}")
    n = dp.a_bar.shape[-1]
    c = np.asarray(c)
    if c.shape[-1] != n or c.ndim > 2 or (c.ndim == 2 and c.shape[0] != L):
        raise TensorError(f"c shape {c.shape} incompatible with L={L}, N={n}")
    # line c up as (L or 1, 1..., N) against (L, ..., N)
    mid = (1,) * (dp.a_bar.ndim - 2)
    return c.reshape((c.shape[0] if c.ndim == 2 else 1,) + mid + (n,))


def _readout(h, c, d, x):
    return np.sum(c * h, axis=-1) + d * x


def scan_sequential(dp: DiscreteParams, c, d, x):
    """Evaluate the recurrence strictly left to right. Returns ``(y, h)``."""
    x = np.asarray(x)
    c = _check_scan_args(dp, c, x)
    u = dp.b_bar * x[..., None]
    h = np.empty_like(u)
    prev = np.zeros_like(u[0])
    for k in range(u.shape[0]):
        prev = dp.a_bar[k] * prev + u[k]
        h[k] = prev
    return _readout(h, c, d, x), h


def _blelloch_exclusive(a, s):
    """Exclusive prefix of affine maps ``h -> a*h + s`` (in place, length 2^m).

    Composition of an earlier element ``(a1, s1)`` followed by ``(a2, s2)``
    is ``(a2*a1, a2*s1 + s2)``; the identity is ``(1, 0)``.
    """
    n = a.shape[0]
    tail = a.shape[1:]
    stride = 1
    while stride < n:
        av = a.reshape((n // (2 * stride), 2 * stride) + tail)
        sv = s.reshape((n // (2 * stride), 2 * stride) + tail)
        al, sl = av[:, stride - 1], sv[:, stride - 1]
        ar, sr = av[:, 2 * stride - 1], sv[:, 2 * stride - 1]
        sv[:, 2 * stride - 1] = ar * sl + sr
        av[:, 2 * stride - 1] = ar * al
        stride *= 2
    a[-1] = 1.0
    s[-1] = 0.0
    stride = n // 2
    while stride >= 1:
        av = a.reshape((n // (2 * stride), 2 * stride) + tail)
        sv = s.reshape((n // (2 * stride), 2 * stride) + tail)
        al, sl = av[:, stride - 1].copy(), sv[:, stride - 1].copy()
        ap, sp = av[:, 2 * stride - 1].copy(), sv[:, 2 * stride - 1].copy()
        av[:, stride - 1], sv[:, stride - 1] = ap, sp
        # prefix before the right child = parent prefix, then the left subtree
        av[:, 2 * stride - 1] = al * ap
        sv[:, 2 * stride - 1] = al * sp + sl
        stride //= 2
    return a, s


def scan_parallel(dp: DiscreteParams, c, d, x):
    """Same contract as :func:`scan_sequential`, via a Blelloch scan.

    The sequence is padded to a power of two with identity elements; each
    up-sweep/down-sweep level is one vectorised pass.
    """
    x = np.asarray(x)
    c = _check_scan_args(dp, c, x)
    u = dp.b_bar * x[..., None]
    L = u.shape[0]
    size = 1 << max(L - 1, 0).bit_length()
    a = np.ones((size,) + u.shape[1:], dtype=np.result_type(dp.a_bar, u))
    s = np.zeros_like(a)
    a[:L] = dp.a_bar
    s[:L] = u
    _, excl = _blelloch_exclusive(a, s)
    h = dp.a_bar * excl[:L] + u
    return _readout(h, c, d, x), h


def selective_params(x_seq, w_delta, bias_delta, w_b, w_c) -> SelectiveInputs:
    """Per-step ``delta``, ``B`` and ``C`` computed from the input sequence."""
    x_seq = np.asarray(x_seq)
    if x_seq.ndim != 2:
        raise TensorError(f"x_seq must be (L, Dinner), got {x_seq.shape}")
    di = x_seq.shape[1]
    if w_delta.shape != (di,) or w_b.shape[0] != di or w_c.shape[0] != di:
        raise TensorError(f"selective projections do not match Dinner={di}")
    z = matmul(x_seq, w_delta[:, None])[:, 0] + x_seq.dtype.type(bias_delta)
    return SelectiveInputs(softplus(z), matmul(x_seq, w_b), matmul(x_seq, w_c))


def _selective_forward(x_seq, p: SelectiveScanParams, mode, method):
    if x_seq.ndim != 2 or x_seq.shape[1] != p.d_inner:
        raise TensorError(f"x_seq shape {x_seq.shape} does not match Dinner={p.d_inner}")
    sel = selective_params(x_seq, p.w_delta, p.bias_delta, p.w_b, p.w_c)
    dp = discretize_zoh(p.a_diag, sel.b_t, sel.delta, mode)
    scan = scan_parallel if method == "parallel" else scan_sequential
    y, h = scan(dp, sel.c_t, p.d, x_seq)
    return y, (sel, dp, h)


def selective_scan(x_seq, params: SelectiveScanParams, mode: str = "zoh_exact",
                   method: str = "sequential") -> np.ndarray:
    """Run ``Dinner`` independent channel scans that share delta, B and C.

    Channel ``i`` scans ``x_seq[:, i]`` with its own ``a_diag[i]`` and ``d[i]``.
    ``method`` is ``"sequential"`` or ``"parallel"``.
    """
    if method not in ("sequential", "parallel"):
        raise TensorError(f"unknown scan method {method!r}")
    y, _ = _selective_forward(np.asarray(x_seq), params, mode, method)
    return y


@dataclass
class SelectiveScanGrads:
    x_seq: np.ndarray
    a_diag: np.ndarray
    d: np.ndarray
    w_delta: np.ndarray
    bias_delta: float
    w_b: np.ndarray
    w_c: np.ndarray

    def groups(self) -> dict[str, np.ndarray]:
        return {k: np.atleast_1d(np.asarray(v)) for k, v in vars(self).items()}


def selective_scan_backward(x_seq, params: SelectiveScanParams, grad_y,
                            mode: str = "zoh_exact") -> SelectiveScanGrads:
    """Reverse-mode gradients of ``sum(grad_y * selective_scan(x_seq))``.

    The forward pass is recomputed, then an adjoint state ``lam`` runs
    backwards through the recurrence::

        lam[k] = grad_y[k] * c[k] + a_bar[k+1] * lam[k+1]
    """
    x = np.asarray(x_seq)
    g = np.asarray(grad_y)
    if g.shape != x.shape:
        raise TensorError(f"grad_y shape {g.shape} does not match forward output {x.shape}")
    p = params
    y, (sel, dp, h) = _selective_forward(x, p, mode, "sequential")
    L = x.shape[0]
    a = p.a_diag  # (Di, N)
    c_t = sel.c_t[:, None, :]  # (L, 1, N)
    delta = sel.delta  # (L,)

    lam = np.empty_like(h)
    nxt = np.zeros_like(h[0])
    for k in range(L - 1, -1, -1):
        nxt = g[k][:, None] * c_t[k] + (dp.a_bar[k + 1] * nxt if k + 1 < L else 0.0)
        lam[k] = nxt

    h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]], axis=0)
    d_abar = lam * h_prev  # (L, Di, N)
    d_bbar = lam * x[..., None]

    grad_c_t = np.einsum("li,lin->ln", g, h)
    grad_d = np.sum(g * x, axis=0)
    grad_x = np.sum(lam * dp.b_bar, axis=-1) + p.d * g

    dt = delta[:, None, None]
    dA = dt * a[None]
    a_bar = dp.a_bar
    # a_bar = exp(delta * a)
    grad_delta = np.sum(d_abar * a[None] * a_bar, axis=(1, 2))
    grad_a = np.sum(d_abar * dt * a_bar, axis=0)

    # b_bar = factor(delta, a) * B_t
    b_t = sel.b_t[:, None, :]
    if mode == "euler":
        factor = np.broadcast_to(dt, dA.shape)
        dfac_ddelta = np.ones_like(dA)
        dfac_da = np.zeros_like(dA)
    else:
        factor = _zoh_factor(dA, a[None], np.broadcast_to(dt, dA.shape))
        small = np.abs(dA) < SERIES_THRESHOLD
        safe_a = np.where(small, 1.0, a[None])
        exact_da = (dA * a_bar - np.expm1(np.where(small, 0.0, dA))) / (safe_a * safe_a)
        dfac_ddelta = np.where(small, 1.0 + dA + dA * dA / 2.0, a_bar)
        dfac_da = np.where(small, dt * dt * (0.5 + dA / 3.0), exact_da)
    d_factor = d_bbar * b_t
    grad_b_t = np.sum(d_bbar * factor, axis=1)
    grad_delta = grad_delta + np.sum(d_factor * dfac_ddelta, axis=(1, 2))
    grad_a = grad_a + np.sum(d_factor * dfac_da, axis=0)

    # delta = softplus(x @ w_delta + bias)
    z = x @ p.w_delta + p.bias_delta
    grad_z = grad_delta * sigmoid(z)
    grad_w_delta = x.T @ grad_z
    grad_bias = float(np.sum(grad_z))
    grad_x = grad_x + grad_z[:, None] * p.w_delta[None]

    grad_w_b = x.T @ grad_b_t
    grad_w_c = x.T @ grad_c_t
    grad_x = grad_x + grad_b_t @ p.w_b.T + grad_c_t @ p.w_c.T

    return SelectiveScanGrads(grad_x, grad_a, grad_d, grad_w_delta, grad_bias,
                              grad_w_b, grad_w_c)
