"""Layer-level differentiable operations built on :mod:`pqforge.autodiff`."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .errors import ConfigError, DataError, ShapeError

ACTIVATIONS = ("relu", "tanh", "hard_tanh", "linear")
BATCHNORM_MOMENTUM = 0.1
BATCHNORM_EPS = 1e-5


def dense_forward(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    x, W = ad.as_tensor(x), ad.as_tensor(W)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {W.shape}")
    out = x @ W
    if b is not None:
        b = ad.as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"dense: bias {b.shape} does not match weight {W.shape}")
        out = out + b
    return out


def activation_forward(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "hard_tanh":
        return ad.hard_tanh(x)
    if kind == "linear":
        return ad.as_tensor(x)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                      running_var: np.ndarray, training: bool,
                      momentum: float = BATCHNORM_MOMENTUM, eps: float = BATCHNORM_EPS) -> Tensor:
    """Batch normalisation over axis 0 (dense) or axes (0, 2, 3) (NCHW).

    ``running_mean``/``running_var`` are updated in place in training mode,
    using the unbiased batch variance as the frameworks do.
    """
    x = ad.as_tensor(x)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    features = x.shape[1]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise ShapeError(f"batchnorm: {features} features but gamma {gamma.shape}, beta {beta.shape}")
    view = (1, features) if x.ndim == 2 else (1, features, 1, 1)
    if training:
        count = int(np.prod([x.shape[a] for a in axes]))
        if x.shape[0] < 2:
            raise ShapeError("batchnorm in training mode needs a batch of at least 2 samples")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.data - mu.reshape(view)) * inv_std.reshape(view)

        def _back(g):
            # standard batch-norm vjp with respect to the normalised input
            gx_hat = g * gamma.data.reshape(view)
            s1 = gx_hat.sum(axis=axes, keepdims=True)
            s2 = (gx_hat * x_hat).sum(axis=axes, keepdims=True)
            gx = inv_std.reshape(view) / count * (count * gx_hat - s1 - x_hat * s2)
            return gx, (g * x_hat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        x_hat = (x.data - running_mean.reshape(view)) * inv_std.reshape(view)

        def _back(g):
            return (g * (gamma.data * inv_std).reshape(view), (g * x_hat).sum(axis=axes), g.sum(axis=axes))

    x_hat = x_hat.astype(x.data.dtype, copy=False)
    out = x_hat * gamma.data.reshape(view) + beta.data.reshape(view)
    return make_node(out.astype(x.data.dtype, copy=False), (x, gamma, beta), _back)


def softmax_ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy with log-sum-exp stabilisation."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes}); got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def _back(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (g * grad / batch,)

    return make_node(np.asarray(loss, dtype=logits.data.dtype), (logits,), _back)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# convolution ----------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[B,C,H,W] -> [B, OH, OW, C*kh*kw] patch matrix (works for integer arrays too)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sb, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x, shape=(b, oh, ow, c, kh, kw), strides=(sb, sh * stride, sw * stride, sc, sh, sw), writeable=False)
    return patches.reshape(b, oh, ow, c * kh * kw)


def _col2im(cols: np.ndarray, x_shape, kh, kw, stride, padding) -> np.ndarray:
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = cols.reshape(b, oh, ow, c, kh, kw)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def im2col_op(x: Tensor, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    x = ad.as_tensor(x)
    shape = x.shape
    cols = np.ascontiguousarray(im2col(x.data, kh, kw, stride, padding))
    return make_node(cols, (x,), lambda g: (_col2im(g, shape, kh, kw, stride, padding),))


def conv2d_forward(x: Tensor, W: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """NCHW convolution as patch extraction followed by a dense product."""
    x, W = ad.as_tensor(x), ad.as_tensor(W)
    if x.ndim != 4 or W.ndim != 4 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {W.shape}")
    out_ch, _, kh, kw = W.shape
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape[2:]}")
    cols = im2col_op(x, kh, kw, stride, padding)
    w_mat = ad.transpose(ad.reshape(W, (out_ch, -1)))
    out = cols @ w_mat
    if b is not None:
        out = out + b
    return ad.transpose(out, (0, 3, 1, 2))


def avg_pool2d_forward(x: Tensor, kernel: int) -> Tensor:
    """Non-overlapping average pooling; trailing rows/cols that do not fill a window are dropped."""
    x = ad.as_tensor(x)
    b, c, h, w = x.shape
    oh, ow = h // kernel, w // kernel
    if oh == 0 or ow == 0:
        raise ShapeError(f"avgpool2d: kernel {kernel} larger than input {h}x{w}")
    if (oh * kernel, ow * kernel) != (h, w):
        x = ad.crop2d(x, oh * kernel, ow * kernel)
    blocks = ad.reshape(x, (b, c, oh, kernel, ow, kernel))
    # divide rather than multiply by a reciprocal: one correctly rounded step
    return ad.sum_(blocks, axis=(3, 5)) / float(kernel * kernel)
