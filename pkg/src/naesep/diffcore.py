"""Minimal reverse-mode differentiation engine over numpy arrays.

The engine is deliberately small: a `Tensor` is a double-precision value
array plus a same-shape gradient slot, and a `Tape` is the ordered list of
operations recorded during a forward pass.  `backward` replays the tape in
exact reverse order, pushing adjoints from the scalar loss back to every
tensor that participates with ``requires_grad=True``.

Every op takes an optional ``tape`` keyword.  With ``tape=None`` the op is a
pure numeric forward (nothing recorded, output does not require grad), which
is what evaluation-mode code paths use.

A tape and the tensors it references form a single-threaded unit of work;
distinct tapes may run concurrently on different threads.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "BatchNormState",
    "conv1d",
    "tconv1d",
    "softplus",
    "batchnorm1d",
    "inner_product",
    "sdr_objective",
    "add",
    "sub",
    "scale",
    "tsum",
    "backward",
    "grad_check",
    "SDR_EPS_DEN",
    "SDR_EPS_NUM",
]

# Denominator guard for the SDR objective: below this estimate energy the
# denominator is clamped, which also makes the all-zero estimate a stationary
# point (zero gradient) instead of a singularity.
SDR_EPS_DEN = 1e-8
# Numerator guard keeps log() finite when estimate and reference are exactly
# orthogonal; small enough to be invisible at any realistic correlation.
SDR_EPS_NUM = 1e-30


class Tensor:
    """Dense double-precision array plus gradient slot."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        v = np.asarray(values, dtype=np.float64)
        if not v.flags["C_CONTIGUOUS"]:
            v = np.ascontiguousarray(v)
        self.values = v
        self.grad = np.zeros_like(self.values)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# A backward rule maps the adjoint of the op output to adjoints of the op
# inputs (None for inputs that do not need one).
BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], BackwardRule]] = []

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], rule: BackwardRule) -> None:
        self._entries.append((output, inputs, rule))

    def __len__(self) -> int:
        return len(self._entries)


def _finish(tape: Tape | None, out_values: np.ndarray,
            inputs: tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    out = Tensor(out_values)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, rule)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x saturates to inf -> 1/inf -> 0, which
    # is the correct limit; silence the spurious warning.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# convolution pair
# ---------------------------------------------------------------------------

def _check_conv_args(values: np.ndarray, kernels: np.ndarray, bias, stride: int, pad: int):
    if values.ndim != 2:
        raise DimensionError(f"conv input must be [channels, length], got shape {values.shape}")
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be 3-d, got shape {kernels.shape}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ContractError(f"pad must be >= 0, got {pad}")
    if bias is not None and bias.values.ndim != 1:
        raise DimensionError(f"bias must be 1-d, got shape {bias.values.shape}")


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0, tape: Tape | None = None) -> Tensor:
    """Strided 1-D convolution (cross-correlation) of ``x`` [C_in, L] with
    ``kernels`` [C_out, C_in, w]; output is [C_out, F] with
    F = floor((L + 2*pad - w) / stride) + 1.
    """
    _check_conv_args(x.values, kernels.values, bias, stride, pad)
    c_out, c_in, w = kernels.values.shape
    if x.values.shape[0] != c_in:
        raise DimensionError(
            f"kernels expect {c_in} input channels, input has {x.values.shape[0]}")
    length = x.values.shape[1]
    if length + 2 * pad < w:
        raise DimensionError(
            f"input length {length} with pad {pad} is shorter than kernel width {w}")
    if bias is not None and bias.values.shape[0] != c_out:
        raise DimensionError(
            f"bias has {bias.values.shape[0]} entries for {c_out} output channels")

    frames = (length + 2 * pad - w) // stride + 1
    padded = np.pad(x.values, ((0, 0), (pad, pad))) if pad else x.values
    windows = sliding_window_view(padded, w, axis=1)[:, ::stride, :]  # [C_in, F, w]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(c_in * w, frames)
    flat_k = kernels.values.reshape(c_out, c_in * w)
    out = flat_k @ cols
    if bias is not None:
        out = out + bias.values[:, None]

    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def rule(g: np.ndarray):
        g_x = None
        if x.requires_grad:
            g_cols = flat_k.T @ g                       # [C_in*w, F]
            g_win = g_cols.reshape(c_in, w, frames)
            g_pad = np.zeros((c_in, length + 2 * pad))
            # For a fixed tap k the strided destinations never overlap, so a
            # plain strided slice-add is an exact scatter.
            for k in range(w):
                g_pad[:, k:k + stride * frames:stride] += g_win[:, k, :]
            g_x = g_pad[:, pad:pad + length] if pad else g_pad
        g_k = (g @ cols.T).reshape(c_out, c_in, w) if kernels.requires_grad else None
        if bias is None:
            return g_x, g_k
        g_b = g.sum(axis=1) if bias.requires_grad else None
        return g_x, g_k, g_b

    return _finish(tape, out, inputs, rule)


def tconv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
            stride: int = 1, pad: int = 0, tape: Tape | None = None) -> Tensor:
    """Transposed 1-D convolution of ``x`` [C_in, F] with ``kernels``
    [C_in, C_out, w]; output is [C_out, L'] with L' = (F-1)*stride + w - 2*pad.

    With zero bias this is the exact adjoint of :func:`conv1d` run with the
    same kernel array, stride and pad.
    """
    _check_conv_args(x.values, kernels.values, bias, stride, pad)
    c_in, c_out, w = kernels.values.shape
    if x.values.shape[0] != c_in:
        raise DimensionError(
            f"kernels expect {c_in} input channels, input has {x.values.shape[0]}")
    frames = x.values.shape[1]
    if frames < 1:
        raise DimensionError("transposed convolution needs at least one input frame")
    full_len = (frames - 1) * stride + w
    out_len = full_len - 2 * pad
    if out_len < 1:
        raise DimensionError(
            f"pad {pad} removes the whole output (full length {full_len})")
    if bias is not None and bias.values.shape[0] != c_out:
        raise DimensionError(
            f"bias has {bias.values.shape[0]} entries for {c_out} output channels")

    flat_k = kernels.values.reshape(c_in, c_out * w)
    cols = flat_k.T @ x.values                          # [C_out*w, F]
    vals = cols.reshape(c_out, w, frames)
    full = np.zeros((c_out, full_len))
    for k in range(w):
        full[:, k:k + stride * frames:stride] += vals[:, k, :]
    out = full[:, pad:pad + out_len] if pad else full
    if bias is not None:
        out = out + bias.values[:, None]

    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def rule(g: np.ndarray):
        g_full = np.zeros((c_out, full_len))
        g_full[:, pad:pad + out_len] = g
        g_win = sliding_window_view(g_full, w, axis=1)[:, ::stride, :]  # [C_out, F, w]
        g_x = None
        if x.requires_grad:
            g_cols = np.ascontiguousarray(g_win.transpose(0, 2, 1)).reshape(c_out * w, frames)
            g_x = flat_k @ g_cols                       # [C_in, F]
        g_k = None
        if kernels.requires_grad:
            g_k = np.tensordot(x.values, g_win, axes=([1], [1]))  # [C_in, C_out, w]
        if bias is None:
            return g_x, g_k
        g_b = g.sum(axis=1) if bias.requires_grad else None
        return g_x, g_k, g_b

    return _finish(tape, out, inputs, rule)


# ---------------------------------------------------------------------------
# pointwise and reduction ops
# ---------------------------------------------------------------------------

def softplus(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise log(1 + exp(x)), overflow-safe, strictly positive output."""
    out = np.logaddexp(0.0, x.values)

    def rule(g: np.ndarray):
        return (g * _sigmoid(x.values) if x.requires_grad else None,)

    return _finish(tape, out, (x,), rule)


class BatchNormState:
    """Running mean/variance per channel plus the normalization constants."""

    __slots__ = ("running_mean", "running_var", "momentum", "eps")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = float(momentum)
        self.eps = float(eps)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                train: bool, tape: Tape | None = None) -> Tensor:
    """Per-channel batch normalization of ``x`` [C, F].

    Train mode normalizes by the current batch statistics over the frame axis
    and updates the running statistics in ``state``; frozen mode normalizes by
    the stored running statistics.
    """
    if x.values.ndim != 2:
        raise DimensionError(f"batchnorm input must be [channels, frames], got {x.values.shape}")
    channels, frames = x.values.shape
    if gamma.values.shape != (channels,) or beta.values.shape != (channels,):
        raise DimensionError(
            f"gamma/beta must have shape ({channels},), got {gamma.values.shape}/{beta.values.shape}")
    if state.running_mean.shape != (channels,):
        raise DimensionError(
            f"state tracks {state.running_mean.shape[0]} channels, input has {channels}")

    if train:
        mean = x.values.mean(axis=1)
        centered = x.values - mean[:, None]
        var = np.mean(centered * centered, axis=1)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
        centered = x.values - mean[:, None]

    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = centered * inv_std[:, None]
    out = gamma.values[:, None] * x_hat + beta.values[:, None]

    def rule(g: np.ndarray):
        g_gamma = (g * x_hat).sum(axis=1) if gamma.requires_grad else None
        g_beta = g.sum(axis=1) if beta.requires_grad else None
        g_x = None
        if x.requires_grad:
            if train:
                # Batch statistics depend on x, so the full backward applies.
                gxh = g * gamma.values[:, None]
                sum_gxh = gxh.sum(axis=1, keepdims=True)
                sum_gxh_xhat = (gxh * x_hat).sum(axis=1, keepdims=True)
                g_x = (inv_std[:, None] / frames) * (
                    frames * gxh - sum_gxh - x_hat * sum_gxh_xhat)
            else:
                g_x = g * (gamma.values * inv_std)[:, None]
        return g_x, g_gamma, g_beta

    return _finish(tape, out, (x, gamma, beta), rule)


def inner_product(x: Tensor, y: Tensor, tape: Tape | None = None) -> Tensor:
    """Scalar sum of elementwise products; shapes must match exactly."""
    if x.values.shape != y.values.shape:
        raise DimensionError(f"inner_product shapes differ: {x.shape} vs {y.shape}")
    out = np.asarray(np.vdot(x.values, y.values))

    def rule(g: np.ndarray):
        s = g.item()
        return (s * y.values if x.requires_grad else None,
                s * x.values if y.requires_grad else None)

    return _finish(tape, out, (x, y), rule)


def sdr_objective(estimate: Tensor, reference: Tensor, tape: Tape | None = None) -> Tensor:
    """Log of the correlation-per-unit-energy ratio <x,y>^2 / <x,x>.

    The raw ratio is what gets maximized; taking the log leaves the argmax
    unchanged while keeping values and gradients well-scaled.  The denominator
    is clamped at ``SDR_EPS_DEN`` so an (almost) silent estimate yields a
    finite floor value with zero gradient instead of a blow-up.
    """
    if estimate.values.shape != reference.values.shape:
        raise DimensionError(
            f"sdr_objective shapes differ: {estimate.shape} vs {reference.shape}")
    ip = float(np.vdot(estimate.values, reference.values))
    energy = float(np.vdot(estimate.values, estimate.values))
    num = ip * ip + SDR_EPS_NUM
    clamped = energy <= SDR_EPS_DEN
    den = SDR_EPS_DEN if clamped else energy
    out = np.asarray(math.log(num) - math.log(den))

    def rule(g: np.ndarray):
        s = g.item()
        g_est = None
        if estimate.requires_grad:
            g_est = (2.0 * ip / num) * reference.values
            if not clamped:
                g_est = g_est - (2.0 / den) * estimate.values
            g_est = s * g_est
        g_ref = (s * (2.0 * ip / num)) * estimate.values if reference.requires_grad else None
        return g_est, g_ref

    return _finish(tape, out, (estimate, reference), rule)


def add(x: Tensor, y: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise sum; shapes must match exactly."""
    if x.values.shape != y.values.shape:
        raise DimensionError(f"add shapes differ: {x.shape} vs {y.shape}")

    def rule(g: np.ndarray):
        return (g if x.requires_grad else None, g if y.requires_grad else None)

    return _finish(tape, x.values + y.values, (x, y), rule)


def sub(x: Tensor, y: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise difference; shapes must match exactly."""
    if x.values.shape != y.values.shape:
        raise DimensionError(f"sub shapes differ: {x.shape} vs {y.shape}")

    def rule(g: np.ndarray):
        return (g if x.requires_grad else None, -g if y.requires_grad else None)

    return _finish(tape, x.values - y.values, (x, y), rule)


def scale(x: Tensor, factor: float, tape: Tape | None = None) -> Tensor:
    """Multiply by a python scalar (not a differentiable input)."""
    factor = float(factor)

    def rule(g: np.ndarray):
        return (factor * g if x.requires_grad else None,)

    return _finish(tape, factor * x.values, (x,), rule)


def tsum(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    def rule(g: np.ndarray):
        return (np.full_like(x.values, g.item()) if x.requires_grad else None,)

    return _finish(tape, np.asarray(x.values.sum()), (x,), rule)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` of every requires_grad
    tensor reachable from ``loss`` through the tape.

    Repeated calls without zeroing grads accumulate (gradients are additive).
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, rule in reversed(tape._entries):
        g_out = adjoints.get(id(out))
        if g_out is None:
            continue  # not on a path to the loss
        for tensor, g in zip(inputs, rule(g_out)):
            if g is None:
                continue
            key = id(tensor)
            held = adjoints.get(key)
            if held is None:
                adjoints[key] = np.array(g, dtype=np.float64)  # own a copy
                holders[key] = tensor
            else:
                held += g
    for key, tensor in holders.items():
        if tensor.requires_grad:
            tensor.grad += adjoints[key].reshape(tensor.grad.shape)


def grad_check(f: Callable[[Tape | None, Tensor], Tensor], input: Tensor,
               eps: float = 1e-5) -> float:
    """Compare the tape gradient of scalar-valued ``f`` against central finite
    differences at ``input``; returns the worst relative error.

    ``f`` is called as ``f(tape, x)`` and must be a pure function of the values
    of ``x`` (it may read other fixed tensors).  Errors are normalized by
    ``max(1, |analytic|)`` per coordinate.
    """
    x = Tensor(input.values.copy(), requires_grad=True)
    tape = Tape()
    loss = f(tape, x)
    if loss.values.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    backward(tape, loss)
    analytic = x.grad.copy().reshape(-1)

    flat = x.values.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(None, x).values.item()
        flat[i] = orig - eps
        f_minus = f(None, x).values.item()
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        if err > worst:
            worst = err
    return worst
