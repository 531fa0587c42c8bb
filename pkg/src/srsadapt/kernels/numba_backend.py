"""Numba @njit twins of the numpy kernels.

Same signatures and semantics as ``numpy_backend``; loops are written out
so numba can compile them.  fastmath stays off to keep IEEE semantics in
line with the numpy path.
"""

import math

import numpy as np
from numba import njit

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def gelu_forward(x):
    out = np.empty_like(x)
    cdf = np.empty_like(x)
    for i in range(x.size):
        c = 0.5 * (1.0 + math.erf(x[i] * INV_SQRT2))
        cdf[i] = c
        out[i] = x[i] * c
    return out, cdf


@njit(cache=True)
def gelu_backward(x, cdf, grad_out):
    out = np.empty_like(x)
    for i in range(x.size):
        pdf = math.exp(-0.5 * x[i] * x[i]) * INV_SQRT_2PI
        out[i] = grad_out[i] * (cdf[i] + x[i] * pdf)
    return out


@njit(cache=True)
def softmax_rows(x):
    n, c = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        total = 0.0
        for j in range(c):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            total += e
        for j in range(c):
            out[i, j] /= total
    return out


@njit(cache=True)
def softmax_backward_rows(probs, grad_out):
    n, c = probs.shape
    out = np.empty_like(probs)
    for i in range(n):
        inner = 0.0
        for j in range(c):
            inner += probs[i, j] * grad_out[i, j]
        for j in range(c):
            out[i, j] = probs[i, j] * (grad_out[i, j] - inner)
    return out


@njit(cache=True)
def layer_norm_forward(x, gain, bias, eps):
    n, h = x.shape
    out = np.empty_like(x)
    mean = np.empty(n)
    rstd = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(h):
            s += x[i, j]
        mu = s / h
        sq = 0.0
        for j in range(h):
            d = x[i, j] - mu
            sq += d * d
        r = 1.0 / math.sqrt(sq / h + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(h):
            out[i, j] = (x[i, j] - mu) * r * gain[j] + bias[j]
    return out, mean, rstd


@njit(cache=True)
def layer_norm_backward(x, gain, mean, rstd, grad_out):
    n, h = x.shape
    dx = np.empty_like(x)
    dgain = np.zeros(h)
    dbias = np.zeros(h)
    for i in range(n):
        mu = mean[i]
        r = rstd[i]
        s1 = 0.0
        s2 = 0.0
        for j in range(h):
            xhat = (x[i, j] - mu) * r
            g = grad_out[i, j]
            dgain[j] += g * xhat
            dbias[j] += g
            dxhat = g * gain[j]
            s1 += dxhat
            s2 += dxhat * xhat
        s1 /= h
        s2 /= h
        for j in range(h):
            xhat = (x[i, j] - mu) * r
            dxhat = grad_out[i, j] * gain[j]
            dx[i, j] = r * (dxhat - s1 - xhat * s2)
    return dx, dgain, dbias


@njit(cache=True)
def cross_entropy_forward(logits, targets, ignore_index):
    n, c = logits.shape
    probs = np.empty_like(logits)
    loss_sum = 0.0
    n_valid = 0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        total = 0.0
        for j in range(c):
            e = math.exp(logits[i, j] - m)
            probs[i, j] = e
            total += e
        for j in range(c):
            probs[i, j] /= total
        t = targets[i]
        if t != ignore_index:
            loss_sum += math.log(total) + m - logits[i, t]
            n_valid += 1
    return loss_sum, n_valid, probs


@njit(cache=True)
def cross_entropy_backward(probs, targets, ignore_index, n_valid, grad_scale):
    n, c = probs.shape
    d = np.empty_like(probs)
    scale = grad_scale / n_valid
    for i in range(n):
        t = targets[i]
        if t == ignore_index:
            for j in range(c):
                d[i, j] = 0.0
        else:
            for j in range(c):
                d[i, j] = probs[i, j] * scale
            d[i, t] -= scale
    return d


@njit(cache=True)
def embedding_scatter_add(table_grad, ids, grad_rows):
    n, h = grad_rows.shape
    for i in range(n):
        row = ids[i]
        for j in range(h):
            table_grad[row, j] += grad_rows[i, j]


@njit(cache=True)
def adamw_update(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for i in range(param.size):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        param[i] -= lr * (mhat / (math.sqrt(vhat) + eps) + weight_decay * param[i])
