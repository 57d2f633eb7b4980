"""Pure numpy implementations of the training-loop kernels.

Same signatures and semantics as the compiled ``_ckernels`` module.  Loss and
gradients agree with it to rounding; the elementwise optimizer updates are
bit-identical because both evaluate the same expression in the same order.
"""

import numpy as np


def lora_loss_grads(u, base, w_out, A, B, targets, scale, dA, dB):
    """Mean squared error of the batch; gradients written into ``dA``, ``dB``."""
    N = u.shape[0]
    with np.errstate(all="ignore"):
        zA = u @ A.T
        lora = zA @ B.T
        if scale != 1.0:
            lora *= scale
        yh = base + lora
        mask = yh > 0
        y = np.where(mask, yh, 0.0) @ w_out
        res = y - targets
        loss = float(res @ res) / N
        dy = 2.0 * res / N
        dYh = np.outer(dy, w_out)
        dYh *= mask
        np.matmul(dYh.T, zA, out=dB)
        np.matmul((dYh @ B).T, u, out=dA)
        if scale != 1.0:
            dA *= scale
            dB *= scale
    if not np.isfinite(zA).all():
        return float("nan")
    return loss


def lora_eval(u, base, w_out, A, B, targets, scale):
    """``(loss, mean |Z_A|, mean |Z_B|)`` over the rows of ``u``."""
    N = u.shape[0]
    with np.errstate(all="ignore"):
        zA = u @ A.T
        zB = zA @ B.T
        if scale != 1.0:
            zB *= scale
        y = np.maximum(base + zB, 0.0) @ w_out
        res = y - targets
        loss = float(res @ res) / N
        za = float(np.sqrt((zA * zA).sum(axis=1)).sum()) / N
        zb = float(np.sqrt((zB * zB).sum(axis=1)).sum()) / N
    return loss, za, zb


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """In-place AdamW step; ``bc1``/``bc2`` are the bias corrections 1 - beta**t."""
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def sign_update(p, g, lr):
    p -= lr * np.sign(g)


def sgd_update(p, g, lr):
    p -= lr * g
