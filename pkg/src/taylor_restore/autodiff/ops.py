"""Differentiable operations.

Conventions, fixed once here:

* conv2d is cross-correlation (no kernel flip), zero padding, with
  out[n, o, i, j] = bias[o]
      + sum_{c, di, dj} x[n, c, i*stride + di - pad, j*stride + dj - pad]
                        * weight[o, c, di, dj]
  and output height (H + 2*pad - kh) // stride + 1 (width analogous).
* relu's subgradient at exactly 0 is 0.
* l1_loss is the mean of |pred - target| over all elements; its subgradient
  where pred == target is 0 (sign(0) == 0).
* add/mul require exactly equal shapes; there is no implicit broadcasting.

Each op computes its output eagerly and, when a Graph is active, records a
closure that turns the output's gradient into gradient contributions for the
inputs (added via Tensor.accumulate_grad, so repeated use of one tensor sums).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Graph, ShapeError, Tensor, active_graph


def _require_equal_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                raise ShapeError(f"{op}: axis {axis} differs ({da} vs {db})")
        raise ShapeError(f"{op}: rank differs ({a.shape} vs {b.shape})")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_equal_shapes("add", a, b)
    out = Tensor(a.data + b.data)
    graph = active_graph()
    if graph is not None:
        def backward_fn(g: np.ndarray) -> None:
            a.accumulate_grad(g)
            b.accumulate_grad(g)
        graph.record("add", out, backward_fn)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _require_equal_shapes("mul", a, b)
    out = Tensor(a.data * b.data)
    graph = active_graph()
    if graph is not None:
        a_data, b_data = a.data.copy(), b.data.copy()
        def backward_fn(g: np.ndarray) -> None:
            a.accumulate_grad(g * b_data)
            b.accumulate_grad(g * a_data)
        graph.record("mul", out, backward_fn)
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar."""
    factor = float(factor)
    out = Tensor(a.data * factor)
    graph = active_graph()
    if graph is not None:
        def backward_fn(g: np.ndarray) -> None:
            a.accumulate_grad(g * factor)
        graph.record("scale", out, backward_fn)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))
    graph = active_graph()
    if graph is not None:
        def backward_fn(g: np.ndarray) -> None:
            x.accumulate_grad(np.where(mask, g, 0.0))
        graph.record("relu", out, backward_fn)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (N, C, H, W) tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels needs rank-4 inputs, got {a.shape} and {b.shape}")
    for axis in (0, 2, 3):
        if a.shape[axis] != b.shape[axis]:
            raise ShapeError(
                f"concat_channels: axis {axis} differs ({a.shape[axis]} vs {b.shape[axis]})"
            )
    split = a.shape[1]
    out = Tensor(np.concatenate((a.data, b.data), axis=1))
    graph = active_graph()
    if graph is not None:
        def backward_fn(g: np.ndarray) -> None:
            a.accumulate_grad(g[:, :split])
            b.accumulate_grad(g[:, split:])
        graph.record("concat_channels", out, backward_fn)
    return out


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Take channels [start, stop) of an (N, C, H, W) tensor."""
    if x.ndim != 4:
        raise ShapeError(f"slice_channels needs a rank-4 input, got {x.shape}")
    channels = x.shape[1]
    if not (0 <= start < stop <= channels):
        raise ShapeError(
            f"slice_channels: range [{start}, {stop}) invalid for {channels} channels"
        )
    out = Tensor(x.data[:, start:stop].copy())
    graph = active_graph()
    if graph is not None:
        def backward_fn(g: np.ndarray) -> None:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[:, start:stop] += g
        graph.record("slice_channels", out, backward_fn)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.data))
    graph = active_graph()
    if graph is not None:
        def backward_fn(g: np.ndarray) -> None:
            x.accumulate_grad(np.broadcast_to(g, x.shape))
        graph.record("sum_all", out, backward_fn)
    return out


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(np.mean(x.data))
    graph = active_graph()
    if graph is not None:
        inv = 1.0 / x.size
        def backward_fn(g: np.ndarray) -> None:
            x.accumulate_grad(np.broadcast_to(g * inv, x.shape))
        graph.record("mean_all", out, backward_fn)
    return out


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all elements (scalar output)."""
    _require_equal_shapes("l1_loss", pred, target)
    diff = pred.data - target.data
    out = Tensor(np.mean(np.abs(diff)))
    graph = active_graph()
    if graph is not None:
        sign = np.sign(diff)
        inv = 1.0 / diff.size
        def backward_fn(g: np.ndarray) -> None:
            contribution = (g * inv) * sign
            pred.accumulate_grad(contribution)
            target.accumulate_grad(-contribution)
        graph.record("l1_loss", out, backward_fn)
    return out


def _conv_columns(x_data: np.ndarray, kh: int, kw: int, pad: int, stride: int):
    """im2col: zero-pad, then gather every (kh, kw) window as a matrix row."""
    n, cin, h, w = x_data.shape
    padded = np.pad(x_data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x_data
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    _, _, h_out, w_out, _, _ = windows.shape
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * h_out * w_out, cin * kh * kw), h_out, w_out


def _columns_to_input(dcols: np.ndarray, x_shape, kh: int, kw: int, pad: int, stride: int,
                      h_out: int, w_out: int) -> np.ndarray:
    """col2im: scatter-add column gradients back onto the padded input."""
    n, cin, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    d6 = dcols.reshape(n, h_out, w_out, cin, kh, kw)
    dx_padded = np.zeros((n, cin, hp, wp))
    for di in range(kh):
        for dj in range(kw):
            dx_padded[:, :, di:di + stride * h_out:stride, dj:dj + stride * w_out:stride] += \
                d6[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    if pad:
        return dx_padded[:, :, pad:pad + h, pad:pad + w]
    return dx_padded


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, pad: int = 0, stride: int = 1) -> Tensor:
    """Batched 2-D cross-correlation; see the module docstring for the formula."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (Cout, Cin, kh, kw), got shape {weight.shape}")
    if bias.ndim != 1:
        raise ShapeError(f"conv2d bias must be rank 1, got shape {bias.shape}")
    n, cin, h, w = x.shape
    cout, w_cin, kh, kw = weight.shape
    if w_cin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {w_cin}")
    if bias.shape[0] != cout:
        raise ShapeError(f"conv2d: bias has {bias.shape[0]} entries for {cout} output channels")
    if pad < 0:
        raise ShapeError(f"conv2d: pad must be >= 0, got {pad}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * pad:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input height {h + 2 * pad}")
    if kw > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input width {w + 2 * pad}")

    cols, h_out, w_out = _conv_columns(x.data, kh, kw, pad, stride)
    weight_mat = weight.data.reshape(cout, cin * kh * kw)
    out_mat = cols @ weight_mat.T
    out_data = out_mat.reshape(n, h_out, w_out, cout).transpose(0, 3, 1, 2)
    out = Tensor(out_data + bias.data[None, :, None, None])

    graph = active_graph()
    if graph is not None:
        x_shape = x.shape
        def backward_fn(g: np.ndarray) -> None:
            g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
            weight.accumulate_grad((g_mat.T @ cols).reshape(weight.shape))
            dcols = g_mat @ weight_mat
            x.accumulate_grad(
                _columns_to_input(dcols, x_shape, kh, kw, pad, stride, h_out, w_out)
            )
        graph.record("conv2d", out, backward_fn)
    return out
