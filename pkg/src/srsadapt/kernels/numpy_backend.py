"""Pure-numpy reference implementations of the hot kernels.

All kernels take and return float64 arrays.  Elementwise kernels work on
1-D views; row kernels expect 2-D ``(rows, width)`` inputs.
"""

import numpy as np
from scipy.special import erf

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327


def gelu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact-erf gelu: 0.5 * x * (1 + erf(x / sqrt(2))).

    Also returns the gaussian CDF factor so the backward pass does not
    recompute erf.
    """
    cdf = 0.5 * (1.0 + erf(x * INV_SQRT2))
    return x * cdf, cdf


def gelu_backward(x: np.ndarray, cdf: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Analytic gelu derivative times the incoming gradient."""
    return grad_out * (cdf + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array, stabilized by max subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward_rows(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of row-wise softmax given its output probabilities."""
    inner = np.sum(probs * grad_out, axis=1, keepdims=True)
    return probs * (grad_out - inner)


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize each row to zero mean / unit variance, then apply affine.

    Returns (output, row_means, row_rstd) with the statistics kept for the
    backward pass.
    """
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gain + bias, mean, rstd


def layer_norm_backward(
    x: np.ndarray,
    gain: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of layer norm w.r.t. input, gain and bias."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = np.sum(grad_out * xhat, axis=0)
    dbias = np.sum(grad_out, axis=0)
    dxhat = grad_out * gain
    mean_dxhat = dxhat.mean(axis=1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgain, dbias


def cross_entropy_forward(
    logits: np.ndarray, targets: np.ndarray, ignore_index: int
) -> tuple[float, int, np.ndarray]:
    """Summed negative log-softmax over rows whose target != ignore_index.

    Returns (loss_sum, n_valid, probs); the mean is taken by the caller so
    the backward scaling stays in one place.
    """
    m = logits.max(axis=1)
    e = np.exp(logits - m[:, None])
    z = e.sum(axis=1)
    probs = e / z[:, None]
    valid = targets != ignore_index
    idx = np.nonzero(valid)[0]
    log_z = np.log(z[idx]) + m[idx]
    loss_sum = float(np.sum(log_z - logits[idx, targets[idx]]))
    return loss_sum, int(idx.size), probs


def cross_entropy_backward(
    probs: np.ndarray,
    targets: np.ndarray,
    ignore_index: int,
    n_valid: int,
    grad_scale: float,
) -> np.ndarray:
    """d(mean loss)/d(logits): (softmax - onehot) / n_valid on valid rows."""
    d = probs.copy()
    valid = targets != ignore_index
    idx = np.nonzero(valid)[0]
    d[idx, targets[idx]] -= 1.0
    d[~valid] = 0.0
    d *= grad_scale / n_valid
    return d


def embedding_scatter_add(
    table_grad: np.ndarray, ids: np.ndarray, grad_rows: np.ndarray
) -> None:
    """Accumulate row gradients into the embedding-table gradient in place."""
    np.add.at(table_grad, ids, grad_rows)


def adamw_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
) -> None:
    """One in-place AdamW step: bias-corrected moments, decoupled decay."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    param -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * param)
