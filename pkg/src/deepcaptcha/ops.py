"""Dense float tensor operations: forward and backward for every layer the solver uses.

Values are plain numpy arrays, float32 in production; every op follows the
input dtype so tests can run the identical code in float64 for tight
finite-difference checks.  Feature maps use N,C,H,W row-major layout.

Convolution lowers to an im2col column buffer and one BLAS matmul.  The
column buffer is built in (C*kh*kw, N*H*W) orientation from a channel-major
copy of the input: that makes every im2col row a cheap strided copy and both
GEMMs (forward and kernel-gradient) run on contiguous operands.  The
`*_rows` core functions keep activations as (N*H*W, K) row matrices; the
model pipeline chains them directly and only pays layout conversions on the
small post-pooling tensors, while the public NCHW functions below wrap the
same cores for general use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not satisfy an operation's contract."""


def _require(cond: bool, msg: str):
    if not cond:
        raise ShapeError(msg)


@dataclass
class LayerGrads:
    """Gradients from one layer's backward pass.

    input_grad matches the layer input's shape; param_grads match the layer's
    parameter shapes in declaration order.
    """

    input_grad: np.ndarray
    param_grads: list


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_cols(x_cnhw: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """im2col for stride-1 same-padded convolution.

    x_cnhw: (C, N, H, W) channel-major input.  Returns (C*kh*kw, N*H*W) where
    row (c, dy, dx) holds the input plane c shifted by the kernel tap (dy, dx),
    zero-filled outside the image.
    """
    C, N, H, W = x_cnhw.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x_cnhw, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    col = np.empty((C * kh * kw, N * H * W), x_cnhw.dtype)
    j = 0
    for c in range(C):
        for dy in range(kh):
            for dx in range(kw):
                np.copyto(col[j].reshape(N, H, W), xp[c, :, dy : dy + H, dx : dx + W])
                j += 1
    return col


def kernels_to_mat(kernels: np.ndarray) -> np.ndarray:
    """(K, C, kh, kw) kernels -> (C*kh*kw, K) matmul operand."""
    K, C, kh, kw = kernels.shape
    return np.ascontiguousarray(kernels.transpose(1, 2, 3, 0).reshape(C * kh * kw, K))

def kernels_to_rot_mat(kernels: np.ndarray) -> np.ndarray:
    """Spatially flipped, channel-swapped kernels as (K*kh*kw, C), for input gradients."""
    K, C, kh, kw = kernels.shape
    flipped = kernels[:, :, ::-1, ::-1]
    return np.ascontiguousarray(flipped.transpose(0, 2, 3, 1).reshape(K * kh * kw, C))


def conv_fwd_rows(col: np.ndarray, kmat: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(N*H*W, K) pre-activation rows from an im2col buffer and kernel matrix."""
    z = np.dot(col.T, kmat)
    z += bias
    return z


def _check_conv_args(x, kernels, bias):
    _require(x.ndim == 4, f"conv input must be 4-D N,C,H,W, got {x.ndim}-D")
    _require(kernels.ndim == 4, f"kernels must be 4-D K,C,kh,kw, got {kernels.ndim}-D")
    K, Ck, kh, kw = kernels.shape
    _require(kh % 2 == 1 and kw % 2 == 1, f"kernel dims must be odd, got {kh}x{kw}")
    _require(
        Ck == x.shape[1],
        f"kernel channel dim {Ck} != input channel dim {x.shape[1]}",
    )
    _require(
        bias.shape == (K,),
        f"bias shape {bias.shape} != (kernel count {K},)",
    )


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution: (N,C,H,W) x (K,C,kh,kw) -> (N,K,H,W)."""
    _check_conv_args(x, kernels, bias)
    N, C, H, W = x.shape
    K, _, kh, kw = kernels.shape
    x_cnhw = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    z = conv_fwd_rows(conv_cols(x_cnhw, kh, kw), kernels_to_mat(kernels), bias)
    return np.ascontiguousarray(z.reshape(N, H, W, K).transpose(0, 3, 1, 2))


def conv_bwd_params_rows(col: np.ndarray, g_rows: np.ndarray, kernel_shape) -> tuple:
    """Kernel and bias gradients from the forward column buffer and (N*H*W, K) out-grad rows."""
    K, C, kh, kw = kernel_shape
    dmat = np.dot(col, g_rows)  # (C*kh*kw, K)
    dkern = np.ascontiguousarray(dmat.reshape(C, kh, kw, K).transpose(3, 0, 1, 2))
    return dkern, g_rows.sum(axis=0)


def conv_bwd_input_rows(g_knhw: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Input gradient rows (N*H*W, C) from the out-grad in (K, N, H, W) layout.

    The input gradient of a same-padded conv is itself a same-padded conv of
    the out-grad with flipped kernels, so it reuses the im2col machinery.
    """
    K, C, kh, kw = kernels.shape
    colb = conv_cols(g_knhw, kh, kw)
    return np.dot(colb.T, kernels_to_rot_mat(kernels))


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, out_grad: np.ndarray) -> LayerGrads:
    """Gradients of conv2d_forward w.r.t. input, kernels, and bias."""
    _check_conv_args(x, kernels, np.zeros(kernels.shape[0], x.dtype))
    N, C, H, W = x.shape
    K, _, kh, kw = kernels.shape
    _require(
        out_grad.shape == (N, K, H, W),
        f"out_grad shape {out_grad.shape} != expected {(N, K, H, W)}",
    )
    x_cnhw = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    col = conv_cols(x_cnhw, kh, kw)
    g_rows = np.ascontiguousarray(out_grad.transpose(0, 2, 3, 1)).reshape(N * H * W, K)
    dkern, dbias = conv_bwd_params_rows(col, g_rows, kernels.shape)
    g_knhw = np.ascontiguousarray(out_grad.transpose(1, 0, 2, 3))
    dx_rows = conv_bwd_input_rows(g_knhw, kernels)
    dx = np.ascontiguousarray(dx_rows.reshape(N, H, W, C).transpose(0, 3, 1, 2))
    return LayerGrads(dx, [dkern, dbias])


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2, trailing odd row/column dropped
# ---------------------------------------------------------------------------

@dataclass
class PoolIndices:
    """Argmax bookkeeping from maxpool2x2_forward, consumed by the backward pass."""

    input_shape: tuple
    argmax: np.ndarray  # (N,C,OH,OW) window-flat index, dy*2+dx


def maxpool2x2_forward(x: np.ndarray):
    """Non-overlapping 2x2 max pool: (N,C,H,W) -> ((N,C,H//2,W//2), PoolIndices).

    Ties go to the smallest window-flat index (row-major within the window).
    """
    _require(x.ndim == 4, f"pool input must be 4-D N,C,H,W, got {x.ndim}-D")
    N, C, H, W = x.shape
    _require(H >= 2 and W >= 2, f"pool input spatial dims {H}x{W} must be >= 2x2")
    OH, OW = H // 2, W // 2
    win = np.ascontiguousarray(
        x[:, :, : 2 * OH, : 2 * OW]
        .reshape(N, C, OH, 2, OW, 2)
        .transpose(0, 1, 2, 4, 3, 5)
    ).reshape(N, C, OH, OW, 4)
    am = win.argmax(axis=4)
    y = np.take_along_axis(win, am[..., None], axis=4)[..., 0]
    return y, PoolIndices((N, C, H, W), am.astype(np.int8))


def maxpool2x2_backward(indices: PoolIndices, out_grad: np.ndarray) -> np.ndarray:
    """Scatter out_grad to the recorded argmax positions; zeros elsewhere."""
    N, C, H, W = indices.input_shape
    OH, OW = H // 2, W // 2
    _require(
        out_grad.shape == (N, C, OH, OW),
        f"out_grad shape {out_grad.shape} != pooled shape {(N, C, OH, OW)}",
    )
    dwin = np.zeros((N, C, OH, OW, 4), out_grad.dtype)
    np.put_along_axis(dwin, indices.argmax[..., None].astype(np.intp), out_grad[..., None], axis=4)
    dx = np.zeros((N, C, H, W), out_grad.dtype)
    dx[:, :, : 2 * OH, : 2 * OW] = (
        dwin.reshape(N, C, OH, OW, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(N, C, 2 * OH, 2 * OW)
    )
    return dx


def pool_fwd_nhwc(a: np.ndarray) -> np.ndarray:
    """Hot-path 2x2 max pool on channel-last maps, max values only."""
    N, H, W, C = a.shape
    OH, OW = H // 2, W // 2
    return a[:, : 2 * OH, : 2 * OW, :].reshape(N, OH, 2, OW, 2, C).max(axis=(2, 4))


def pool_bwd_nhwc(a: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Hot-path pool backward: route g to the first max in each window.

    Recomputes the winner mask from the forward input/output instead of
    storing indices; the first-occurrence rule reproduces maxpool2x2_forward's
    smallest-flat-index tie break exactly.
    """
    N, H, W, C = a.shape
    OH, OW = H // 2, W // 2
    w6 = a[:, : 2 * OH, : 2 * OW, :].reshape(N, OH, 2, OW, 2, C)
    mask = w6 == y[:, :, None, :, None, :]
    row_tot = mask.sum(axis=4, keepdims=True)
    prior = row_tot.cumsum(axis=2) - row_tot
    flat_cum = prior + mask.cumsum(axis=4)
    firsts = mask & (flat_cum == 1)
    dx = np.zeros_like(a)
    dx[:, : 2 * OH, : 2 * OW, :] = (firsts * g[:, :, None, :, None, :]).reshape(
        N, 2 * OH, 2 * OW, C
    )
    return dx


# ---------------------------------------------------------------------------
# dense / activations / dropout
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map: (N,F) @ (F,U) + (U,) -> (N,U)."""
    _require(x.ndim == 2 and weights.ndim == 2, "dense operands must be 2-D")
    _require(
        x.shape[1] == weights.shape[0],
        f"input feature dim {x.shape[1]} != weight rows {weights.shape[0]}",
    )
    _require(
        bias.shape == (weights.shape[1],),
        f"bias shape {bias.shape} != (unit count {weights.shape[1]},)",
    )
    return np.dot(x, weights) + bias


def dense_backward(x: np.ndarray, weights: np.ndarray, out_grad: np.ndarray) -> LayerGrads:
    _require(
        out_grad.shape == (x.shape[0], weights.shape[1]),
        f"out_grad shape {out_grad.shape} != expected {(x.shape[0], weights.shape[1])}",
    )
    dx = np.dot(out_grad, weights.T)
    dw = np.dot(x.T, out_grad)
    return LayerGrads(dx, [dw, out_grad.sum(axis=0)])


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    """Pass gradient where input > 0; the subgradient at exactly 0 is 0."""
    _require(out_grad.shape == x.shape, f"out_grad shape {out_grad.shape} != input shape {x.shape}")
    return np.where(x > 0, out_grad, 0)


def dropout(x: np.ndarray, rate: float, mode: str, rng: np.random.Generator):
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Returns (output, mask); the mask already folds in the survivor scale, so
    the backward pass is out_grad * mask and inference is a pure identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer":
        return x, np.ones_like(x)
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


# ---------------------------------------------------------------------------
# output nonlinearities and loss
# ---------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    """1/(1+e^-x), computed branch-wise so large |x| never overflows."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    """Chain rule through sigmoid given its output y."""
    return out_grad * y * (1.0 - y)


def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max-subtraction stabilization."""
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(y: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    """Chain rule through softmax given its output y (per last-axis slice)."""
    dot = (out_grad * y).sum(axis=-1, keepdims=True)
    return y * (out_grad - dot)


BCE_CLAMP = 1e-7


def bce_loss(predictions: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy over all elements, plus gradient w.r.t. predictions.

    Predictions are clamped to [BCE_CLAMP, 1-BCE_CLAMP] before the logs; the
    gradient uses the clamped values so saturated outputs keep a finite,
    nonzero learning signal.
    """
    _require(
        predictions.shape == targets.shape,
        f"predictions shape {predictions.shape} != targets shape {targets.shape}",
    )
    dt = predictions.dtype
    pc = np.clip(predictions, dt.type(BCE_CLAMP), dt.type(1.0 - BCE_CLAMP))
    n = predictions.size
    loss = -(targets * np.log(pc) + (1.0 - targets) * np.log1p(-pc)).sum() / n
    grad = -(targets / pc - (1.0 - targets) / (1.0 - pc)) / dt.type(n)
    return float(loss), grad.astype(dt, copy=False)
