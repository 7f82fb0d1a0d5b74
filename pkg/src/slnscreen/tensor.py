"""Dense-array primitives for the patch CNN.

Arrays are plain numpy ndarrays in row-major HWC layout.  Every layer op
accepts a single sample ``[H, W, C]`` / ``[N]`` or a batch with one extra
leading axis, and each differentiable op has a matching ``*_backward``.
Training runs in float32; gradient checks switch to float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GradientCheckError, ShapeError

PROB_FLOOR = 1e-12


def as_tensor(values, dtype=np.float32) -> np.ndarray:
    """Coerce to a contiguous array and enforce the tensor invariants."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim == 0 or arr.ndim > 4:
        raise ShapeError(f"tensor order must be 1..4, got shape {arr.shape}")
    if any(extent < 1 for extent in arr.shape):
        raise ShapeError(f"tensor extents must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("tensor contains non-finite values")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    kernel_height: int
    kernel_width: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.kernel_height < 1 or self.kernel_width < 1:
            raise ValueError("kernel extents must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        return (self.kernel_height, self.kernel_width, self.in_channels, self.out_channels)

    def output_hw(self, height: int, width: int) -> tuple[int, int]:
        if self.padding == "same":
            return -(-height // self.stride), -(-width // self.stride)
        if self.kernel_height > height or self.kernel_width > width:
            raise ShapeError(
                f"kernel {self.kernel_height}x{self.kernel_width} larger than "
                f"valid-padded input {height}x{width}"
            )
        return (
            (height - self.kernel_height) // self.stride + 1,
            (width - self.kernel_width) // self.stride + 1,
        )

    def pads(self, height: int, width: int) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) zero padding; extra goes bottom/right."""
        if self.padding == "valid":
            return 0, 0, 0, 0
        out_h, out_w = self.output_hw(height, width)
        pad_h = max((out_h - 1) * self.stride + self.kernel_height - height, 0)
        pad_w = max((out_w - 1) * self.stride + self.kernel_width - width, 0)
        return pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} (or batched {rank + 1}) input, got shape {x.shape}")


def _check_conv_args(x: np.ndarray, spec: ConvSpec, kernels: np.ndarray, bias: np.ndarray):
    if kernels.shape != spec.kernel_shape:
        raise ShapeError(
            f"kernel shape {kernels.shape} does not match conv spec {spec.kernel_shape}"
        )
    if x.shape[-1] != spec.in_channels:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[-1]} channels, "
            f"kernel shape {kernels.shape} expects {spec.in_channels}"
        )
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} does not match kernel shape {kernels.shape}")


def im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Unfold a batch ``[B, H, W, C]`` into rows of ``kh*kw*C`` window values.

    Returns an array of shape ``[B, H', W', kh*kw*C]`` with the window laid
    out (kh, kw, C) so it lines up with a reshaped kernel tensor.
    """
    b, h, w, c = x.shape
    top, bottom, left, right = spec.pads(h, w)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    kh, kw, s = spec.kernel_height, spec.kernel_width, spec.stride
    if kh > x.shape[1] or kw > x.shape[2]:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {x.shape[1:3]}")
    out_h, out_w = spec.output_hw(h, w)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s][:, :out_h, :out_w]
    # win: [B, H', W', C, kh, kw] -> [B, H', W', kh, kw, C]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, out_h, out_w, kh * kw * c)


def col2im(cols: np.ndarray, input_shape: tuple[int, ...], spec: ConvSpec) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add window gradients back to pixels."""
    b, h, w, c = input_shape
    top, bottom, left, right = spec.pads(h, w)
    kh, kw, s = spec.kernel_height, spec.kernel_width, spec.stride
    out_h, out_w = cols.shape[1], cols.shape[2]
    cols = cols.reshape(b, out_h, out_w, kh, kw, c)
    padded = np.zeros((b, h + top + bottom, w + left + right, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, i : i + s * out_h : s, j : j + s * out_w : s, :] += cols[:, :, :, i, j, :]
    return padded[:, top : top + h, left : left + w, :]


def conv2d(x: np.ndarray, spec: ConvSpec, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """2-D cross-correlation of ``[H, W, Cin]`` (or batched) input with a kernel bank."""
    out, _ = conv2d_forward(x, spec, kernels, bias)
    return out


def conv2d_forward(x, spec, kernels, bias):
    """Like :func:`conv2d` but also returns the im2col buffer for reuse in backward."""
    _check_conv_args(x, spec, kernels, bias)
    xb, single = _batched(x, 3)
    cols = im2col(xb, spec)
    b, oh, ow, k = cols.shape
    out = (cols.reshape(-1, k) @ kernels.reshape(k, spec.out_channels)).reshape(b, oh, ow, -1)
    out += bias
    return (out[0] if single else out), cols


def conv2d_backward(grad_out, x, spec, kernels, cols=None, need_input_grad=True):
    """Gradients ``(d_input, d_kernels, d_bias)`` of a conv layer.

    ``d_input`` is None when ``need_input_grad`` is false (first layer).
    """
    xb, single = _batched(x, 3)
    gb = grad_out[None] if single else grad_out
    if cols is None:
        cols = im2col(xb, spec)
    k = cols.shape[-1]
    g2 = gb.reshape(-1, spec.out_channels)
    d_kernels = (cols.reshape(-1, k).T @ g2).reshape(spec.kernel_shape)
    d_bias = g2.sum(axis=0)
    d_input = None
    if need_input_grad:
        dcols = (g2 @ kernels.reshape(k, spec.out_channels).T).reshape(cols.shape)
        d_input = col2im(dcols, xb.shape, spec)
        if single:
            d_input = d_input[0]
    return d_input, d_kernels, d_bias


def maxpool2d(x: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Max pooling with floor semantics.

    Returns ``(output, argmax)`` where ``argmax`` holds, for each output cell,
    the flat row-major index into the (per-sample) ``[H, W, C]`` input of the
    winning element.  Ties go to the first element in row-major window order.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    xb, single = _batched(x, 3)
    b, h, w, c = xb.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input extent {h}x{w}")
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    win = sliding_window_view(xb, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    win = win[:, :out_h, :out_w].reshape(b, out_h, out_w, c, window * window)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, window)
    rows = np.arange(out_h)[None, :, None, None] * stride + di
    cols = np.arange(out_w)[None, None, :, None] * stride + dj
    chans = np.arange(c)[None, None, None, :]
    argmax = (rows * w + cols) * c + chans
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool2d_backward(grad_out, argmax, input_shape, window: int, stride: int):
    """Route each upstream gradient onto the input cell that won its window."""
    single = len(input_shape) == 3
    gb = grad_out[None] if single else grad_out
    ab = argmax[None] if single else argmax
    b = gb.shape[0]
    per_sample = int(np.prod(input_shape[-3:]))
    flat_idx = (ab.reshape(b, -1) + np.arange(b)[:, None] * per_sample).ravel()
    if stride >= window:
        d_input = np.zeros(b * per_sample, dtype=gb.dtype)
        d_input[flat_idx] = gb.ravel()
    else:
        d_input = np.bincount(flat_idx, weights=gb.ravel(), minlength=b * per_sample).astype(gb.dtype)
    return d_input.reshape(input_shape)


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"input shape {x.shape} does not match weight shape {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match weight shape {weights.shape}")
    return x @ weights + bias


def dense_backward(grad_out, x, weights):
    xb = x[None] if x.ndim == 1 else x
    gb = grad_out[None] if grad_out.ndim == 1 else grad_out
    d_weights = xb.T @ gb
    d_bias = gb.sum(axis=0)
    d_input = grad_out @ weights.T
    return d_input, d_weights, d_bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(grad_out, probs):
    inner = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - inner)


def _check_targets(targets, k: int):
    t = np.asarray(targets)
    if not np.issubdtype(t.dtype, np.integer):
        raise ValueError(f"targets must be integer category indices, got {t.dtype}")
    if np.any(t < 0) or np.any(t >= k):
        raise ValueError(f"target out of range 0..{k - 1}: {t.tolist()}")
    return t


def cross_entropy(probs: np.ndarray, target) -> float | np.ndarray:
    """``-log p[target]``; a batch of probabilities yields one loss per row."""
    t = _check_targets(target, probs.shape[-1])
    if probs.ndim == 1:
        return float(-np.log(max(probs[int(t)], PROB_FLOOR)))
    picked = probs[np.arange(probs.shape[0]), t]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def softmax_cross_entropy_grad(probs: np.ndarray, target) -> np.ndarray:
    """Gradient of ``cross_entropy(softmax(z), t)`` with respect to ``z``."""
    t = _check_targets(target, probs.shape[-1])
    grad = probs.copy()
    if probs.ndim == 1:
        grad[int(t)] -= 1
    else:
        grad[np.arange(probs.shape[0]), t] -= 1
    return grad


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, else ``1/(1-rate)``."""
    if rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


# -- gradient checking ------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(f: Callable[[], float], param: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``param``, perturbed in place."""
    grad = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        grad.flat[i] = (up - down) / (2 * step)
    return grad


def max_gradient_error(
    f: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-4,
) -> float:
    """Worst relative error between ``analytic`` and central-difference gradients."""
    worst = 0.0
    for name, param in params.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != param.shape:
            raise ShapeError(f"gradient for {name!r} has shape {a.shape}, parameter {param.shape}")
        bad = np.argwhere(~np.isfinite(a))
        if bad.size:
            raise GradientCheckError(f"non-finite analytic gradient for {name!r} at {tuple(int(i) for i in bad[0])}")
        n = numeric_gradient(f, param, step)
        bad = np.argwhere(~np.isfinite(n))
        if bad.size:
            raise GradientCheckError(f"non-finite numeric gradient for {name!r} at {tuple(int(i) for i in bad[0])}")
        if a.size:
            worst = max(worst, float(relative_error(a, n).max()))
    return worst


def _distinct_values(rng: np.random.Generator, shape) -> np.ndarray:
    # well-separated values keep max-pool winners stable under the FD step
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) / n * 2 - 1 + rng.uniform(-1e-3, 1e-3, shape)).astype(np.float64)


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.uniform(0.05, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return x


def grad_check(op: str, seed: int = 0, step: float = 1e-4) -> float:
    """Gradient-check one layer op on random small shapes in float64.

    ``op`` is one of ``conv2d``, ``maxpool2d``, ``dense``, ``relu``,
    ``softmax``, ``softmax_cross_entropy`` or ``dropout``.  The scalar
    under test is ``sum(op(inputs) * R)`` for a fixed random ``R``
    (plain loss for ``softmax_cross_entropy``).  Returns the worst
    relative error over every input and parameter coordinate.
    """
    rng = np.random.default_rng(seed)

    if op == "conv2d":
        h, w = rng.integers(3, 7, size=2)
        cin, cout = rng.integers(1, 4, size=2)
        k = int(rng.integers(1, 4))
        spec = ConvSpec(k, k, int(cin), int(cout), stride=int(rng.integers(1, 3)),
                        padding=str(rng.choice(["same", "valid"])))
        x = rng.standard_normal((int(h), int(w), int(cin)))
        kern = rng.standard_normal(spec.kernel_shape)
        b = rng.standard_normal(int(cout))
        r = rng.standard_normal(conv2d(x, spec, kern, b).shape)
        params = {"x": x, "k": kern, "b": b}
        dx, dk, db = conv2d_backward(r, x, spec, kern)
        analytic = {"x": dx, "k": dk, "b": db}
        return max_gradient_error(lambda: float((conv2d(x, spec, kern, b) * r).sum()), params, analytic, step)

    if op == "maxpool2d":
        window = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 4))
        h, w = rng.integers(window, window + 5, size=2)
        x = _distinct_values(rng, (int(h), int(w), int(rng.integers(1, 4))))
        out, argmax = maxpool2d(x, window, stride)
        r = rng.standard_normal(out.shape)
        analytic = {"x": maxpool2d_backward(r, argmax, x.shape, window, stride)}
        return max_gradient_error(lambda: float((maxpool2d(x, window, stride)[0] * r).sum()),
                                  {"x": x}, analytic, step)

    if op == "dense":
        n, m = rng.integers(1, 8, size=2)
        batch = int(rng.integers(1, 4))
        x = rng.standard_normal((batch, int(n)))
        wts = rng.standard_normal((int(n), int(m)))
        b = rng.standard_normal(int(m))
        r = rng.standard_normal((batch, int(m)))
        dx, dw, db = dense_backward(r, x, wts)
        return max_gradient_error(lambda: float((dense(x, wts, b) * r).sum()),
                                  {"x": x, "w": wts, "b": b}, {"x": dx, "w": dw, "b": db}, step)

    if op == "relu":
        x = _away_from_zero(rng, (int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        r = rng.standard_normal(x.shape)
        return max_gradient_error(lambda: float((relu(x) * r).sum()),
                                  {"x": x}, {"x": relu_backward(r, x)}, step)

    if op == "softmax":
        z = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 6))))
        r = rng.standard_normal(z.shape)
        return max_gradient_error(lambda: float((softmax(z) * r).sum()),
                                  {"z": z}, {"z": softmax_backward(r, softmax(z))}, step)

    if op == "softmax_cross_entropy":
        k = int(rng.integers(2, 6))
        z = rng.standard_normal(k) * 2
        t = int(rng.integers(0, k))
        return max_gradient_error(lambda: cross_entropy(softmax(z), t),
                                  {"z": z}, {"z": softmax_cross_entropy_grad(softmax(z), t)}, step)

    if op == "dropout":
        x = rng.standard_normal((int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        mask = dropout_mask(x.shape, 0.5, rng, dtype=np.float64)
        r = rng.standard_normal(x.shape)
        return max_gradient_error(lambda: float((x * mask * r).sum()),
                                  {"x": x}, {"x": r * mask}, step)

    raise ValueError(f"unknown op {op!r}")


GRAD_CHECK_OPS = ("conv2d", "maxpool2d", "dense", "relu", "softmax", "softmax_cross_entropy", "dropout")
