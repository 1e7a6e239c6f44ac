"""Dense numeric kernels with hand-derived gradients.

Everything is computed in float64 on plain numpy arrays. Convolutions are
valid-only (no padding, ever): a crop from a feature map of a large input is
then bitwise the feature map of the corresponding input sub-window, which the
proposal-cropping fast path relies on. Each public kernel checks its output
for NaN/Inf and raises NumericError instead of propagating garbage.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, NumericError


def ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def _as_f64(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float64)


# ---------------------------------------------------------------------------
# convolution / cross-correlation


def conv_output_extent(in_extent: int, kernel: int, stride: int) -> int:
    """Valid-convolution output extent: floor((in - k)/stride) + 1."""
    if kernel > in_extent:
        raise DimensionError(
            f"kernel extent {kernel} exceeds input extent {in_extent}"
        )
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    return (in_extent - kernel) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """x (B, C, H, W) -> contiguous (B, C*k*k, H'*W') column matrix."""
    win = sliding_window_view(x, (k, k), axis=(-2, -1))[:, :, ::stride, ::stride]
    # (B, C, H', W', k, k) -> (B, C, k, k, H', W'): scans rows innermost, so the
    # copy out of the strided window view stays cache-friendly
    col = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return col.reshape(x.shape[0], x.shape[1] * k * k, h_out * w_out)


def _check_conv_shapes(x: np.ndarray, kernels: np.ndarray, stride: int):
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(
            f"expected (B,C,H,W) input and (O,C,k,k) kernels, got {x.shape} and {kernels.shape}"
        )
    c_out, c_in, kh, kw = kernels.shape
    if kh != kw:
        raise DimensionError(f"kernels must be square, got {kh}x{kw}")
    if x.shape[1] != c_in:
        raise DimensionError(
            f"channel mismatch: input has {x.shape[1]} channels, kernels expect {c_in}"
        )
    return conv_output_extent(x.shape[2], kh, stride), conv_output_extent(x.shape[3], kw, stride)


def conv2d_valid(
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int = 1,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Valid 2-D convolution (sliding dot product, no kernel flip).

    x: (C_in, H, W); kernels: (C_out, C_in, k, k); bias: (C_out,) or None.
    Returns (C_out, H', W') with H' = floor((H - k)/stride) + 1.
    """
    x = _as_f64(x)
    if x.ndim != 3:
        raise DimensionError(f"expected input (C,H,W), got {x.shape}")
    return conv2d_valid_batch(x[None], kernels, stride, bias)[0]


def conv2d_valid_batch(
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int = 1,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Batched conv2d_valid: x (B, C, H, W) -> (B, C_out, H', W')."""
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    h_out, w_out = _check_conv_shapes(x, kernels, stride)
    c_out, _, k, _ = kernels.shape
    col = _im2col(x, k, stride, h_out, w_out)
    out = np.matmul(kernels.reshape(c_out, -1), col)  # (B, C_out, H'*W')
    out = out.reshape(x.shape[0], c_out, h_out, w_out)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return ensure_finite(out, "conv2d_valid output")


def conv2d_backward(
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_valid w.r.t. input, kernels and bias.

    grad_out: (C_out, H', W'). Returns (grad_x, grad_kernels, grad_bias).
    """
    gx, gk, gb = conv2d_backward_batch(
        _as_f64(x)[None], kernels, stride, _as_f64(grad_out)[None]
    )
    return gx[0], gk, gb


def conv2d_backward_batch(
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched conv2d_backward; parameter gradients are summed over the batch."""
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    grad_out = _as_f64(grad_out)
    c_out, c_in, k, _ = kernels.shape
    h_out, w_out = grad_out.shape[2], grad_out.shape[3]

    col = _im2col(x, k, stride, h_out, w_out)  # (B, Ckk, HW)
    go = grad_out.reshape(x.shape[0], c_out, h_out * w_out)
    # grad_K[o, ckk] = sum_b go[b] @ col[b].T
    grad_kernels = np.matmul(go, col.transpose(0, 2, 1)).sum(axis=0).reshape(kernels.shape)

    grad_x = np.zeros_like(x)
    # scatter the kernel-weighted output gradient back onto each input window
    for u in range(k):
        for v in range(k):
            t = np.tensordot(grad_out, kernels[:, :, u, v], axes=([1], [0]))  # (B,H',W',C)
            grad_x[
                :,
                :,
                u : u + stride * (h_out - 1) + 1 : stride,
                v : v + stride * (w_out - 1) + 1 : stride,
            ] += t.transpose(0, 3, 1, 2)

    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_kernels, grad_bias


def cross_correlate(
    template: np.ndarray, search: np.ndarray, k_bias: float = 0.0
) -> np.ndarray:
    """Sliding dot product of a template feature stack over search features.

    template: (C, k, k); search: (C, H, W).
    out[i, j] = sum_c sum_u sum_v template[c,u,v] * search[c, i+u, j+v] + k_bias.
    """
    template = _as_f64(template)
    search = _as_f64(search)
    if template.ndim != 3 or search.ndim != 3:
        raise DimensionError(
            f"expected (C,k,k) template and (C,H,W) search, got {template.shape} and {search.shape}"
        )
    if template.shape[0] != search.shape[0]:
        raise DimensionError(
            f"channel mismatch: template has {template.shape[0]}, search has {search.shape[0]}"
        )
    out = conv2d_valid(search, template[None, ...], stride=1)[0]
    if k_bias != 0.0:
        out = out + k_bias
    return ensure_finite(out, "cross_correlate output")


def cross_correlate_backward(
    template: np.ndarray, search: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of cross_correlate w.r.t. template and search features."""
    grad_search, grad_template, _ = conv2d_backward(
        search, template[None, ...], 1, grad_out[None, ...]
    )
    return grad_template[0], grad_search


# ---------------------------------------------------------------------------
# element-wise activations (forward value in, derivative expressed in it)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dsigmoid_from_out(s: np.ndarray) -> np.ndarray:
    return s * (1.0 - s)


def dtanh_from_out(t: np.ndarray) -> np.ndarray:
    return 1.0 - t * t


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def leaky_relu(x: np.ndarray, alpha: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


def dleaky_relu(x: np.ndarray, alpha: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, 1.0, alpha)


ACTIVATIONS = {
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
    "relu": (relu, lambda x: (x > 0).astype(np.float64)),
    "lrelu": (leaky_relu, dleaky_relu),
    "tanh": (np.tanh, lambda x: dtanh_from_out(np.tanh(x))),
    "sigmoid": (sigmoid, lambda x: dsigmoid_from_out(sigmoid(x))),
}


# ---------------------------------------------------------------------------
# nearest-neighbour 2x upsampling (used by the sample generator)


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsampling on the trailing two axes."""
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    """Each input cell receives the sum of its 2x2 output block."""
    h2, w2 = grad_out.shape[-2], grad_out.shape[-1]
    shape = grad_out.shape[:-2] + (h2 // 2, 2, w2 // 2, 2)
    return grad_out.reshape(shape).sum(axis=(-3, -1))


# ---------------------------------------------------------------------------
# softmax cross-entropy


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with log-sum-exp stabilization."""
    logits = _as_f64(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean two-class cross-entropy and its gradient w.r.t. the logits.

    logits: (B, 2); labels: (B,) of {0, 1}.
    loss = mean_b -log softmax(logits_b)[label_b]
    dloss/dlogits = (softmax(logits) - one_hot(labels)) / B
    """
    logits = _as_f64(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise DimensionError(f"expected (B,2) logits, got {logits.shape}")
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(b), labels] - log_z
    loss = float(-log_p.mean())

    grad = softmax(logits)
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    ensure_finite(grad, "softmax_xent gradient")
    if not np.isfinite(loss):
        raise NumericError("non-finite softmax_xent loss")
    return loss, grad
