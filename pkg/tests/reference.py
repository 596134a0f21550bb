"""Independent reference implementations used as test oracles.

Everything in here is deliberately slow and dumb: nested loops, no unfold,
no reshape tricks, no shared code with the production paths in src/. If a
production kernel and one of these disagree, the production kernel is
wrong until proven otherwise.
"""

import numpy as np


def loop_unfold(x, kernel, stride, padding):
    """Patch extraction by walking every output location explicitly."""
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    cols = np.zeros((n, c, kernel * kernel, ho * wo), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    l = oi * wo + oj
                    for ki in range(kernel):
                        for kj in range(kernel):
                            ii = oi * stride + ki - padding
                            jj = oj * stride + kj - padding
                            if 0 <= ii < h and 0 <= jj < w:
                                cols[ni, ci, ki * kernel + kj, l] = x[ni, ci, ii, jj]
    return cols


def loop_conv2d(x, w, b, kernel, stride, padding, groups):
    """Grouped cross-correlation with six nested loops."""
    n, c_in, h, w_in = x.shape
    c_out = w.shape[0]
    cg = c_in // groups
    og = c_out // groups
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w_in + 2 * padding - kernel) // stride + 1
    y = np.zeros((n, c_out, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for oc in range(c_out):
            gi = oc // og
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for icg in range(cg):
                        ic = gi * cg + icg
                        for ki in range(kernel):
                            for kj in range(kernel):
                                ii = oi * stride + ki - padding
                                jj = oj * stride + kj - padding
                                if 0 <= ii < h and 0 <= jj < w_in:
                                    acc += w[oc, icg, ki, kj] * x[ni, ic, ii, jj]
                    y[ni, oc, oi, oj] = acc
    if b is not None:
        y += b[None, :, None, None]
    return y


def numerical_grad(loss_fn, x, h=1e-5):
    """Central finite differences of a scalar loss w.r.t. every entry of x.

    loss_fn takes no arguments and must read the current contents of x;
    x is perturbed in place and restored.
    """
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = loss_fn()
        flat_x[i] = orig - h
        down = loss_fn()
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2.0 * h)
    return grad


def rel_err(analytic, numeric, floor=1e-4):
    """Worst-case relative disagreement with a small-denominator floor.

    The floor keeps finite-difference truncation noise on near-zero
    gradients from registering as disagreement while still catching sign
    flips and dropped terms at any magnitude that matters.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
