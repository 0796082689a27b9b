"""Hot numeric kernels, each with a numba-jitted and a pure-numpy path.

The jitted path is used when numba imports cleanly; set ``SVDTRAIN_JIT=0``
to force the numpy implementations (useful for debugging and on platforms
without numba).  Both paths compute the same results; ``benchmarks/
bench_kernels.py`` compares their speed.
"""
from __future__ import annotations

import os

import numpy as np


def _detect_jit() -> bool:
    flag = os.environ.get("SVDTRAIN_JIT", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


JIT_ENABLED = _detect_jit()

if JIT_ENABLED:
    from numba import njit
else:
    def njit(*args, **kwargs):
        # identity decorator so the jacobi source below still runs in plain python
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


# ---------------------------------------------------------------------------
# im2col / col2im


def _im2col_numpy(img, kh, kw, sh, sw):
    n, c, h, w = img.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = img[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return np.ascontiguousarray(
        cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)
    )


def _col2im_numpy(cols, n, c, h, w, kh, kw, sh, sw):
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    six = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            img[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += six[:, :, i, j]
    return img


def _maxpool_numpy(x, k, s):
    n, c, h, w = x.shape
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    out = np.full((n, c, oh, ow), -np.inf, dtype=np.float64)
    idx = np.zeros((n, c, oh, ow), dtype=np.int64)
    ys = np.arange(oh) * s
    xs = np.arange(ow) * s
    for i in range(k):
        for j in range(k):
            window = x[:, :, i:i + s * oh:s, j:j + s * ow:s]
            flat = (ys[:, None] + i) * w + (xs[None, :] + j)
            better = window > out
            out = np.where(better, window, out)
            idx = np.where(better, flat, idx)
    return out, idx


def _maxpool_backward_numpy(grad, idx, h, w):
    n, c, oh, ow = grad.shape
    dx = np.zeros((n, c, h * w), dtype=np.float64)
    bi = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (bi, ci, idx), grad)
    return dx.reshape(n, c, h, w)


if JIT_ENABLED:

    @njit(cache=True)
    def _im2col_jit(img, kh, kw, sh, sw):  # pragma: no cover - exercised via dispatch
        n, c, h, w = img.shape
        oh = (h - kh) // sh + 1
        ow = (w - kw) // sw + 1
        cols = np.empty((n * oh * ow, c * kh * kw), dtype=np.float64)
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    row = (b * oh + y) * ow + x
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, col] = img[b, ch, y * sh + i, x * sw + j]
                                col += 1
        return cols

    @njit(cache=True)
    def _col2im_jit(cols, n, c, h, w, kh, kw, sh, sw):  # pragma: no cover
        oh = (h - kh) // sh + 1
        ow = (w - kw) // sw + 1
        img = np.zeros((n, c, h, w), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        for y in range(oh):
                            for x in range(ow):
                                row = (b * oh + y) * ow + x
                                col = (ch * kh + i) * kw + j
                                img[b, ch, y * sh + i, x * sw + j] += cols[row, col]
        return img

    @njit(cache=True)
    def _maxpool_jit(x, k, s):  # pragma: no cover
        n, c, h, w = x.shape
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        out = np.empty((n, c, oh, ow), dtype=np.float64)
        idx = np.empty((n, c, oh, ow), dtype=np.int64)
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x_ in range(ow):
                        best = -np.inf
                        where = 0
                        for i in range(k):
                            for j in range(k):
                                ih = y * s + i
                                iw = x_ * s + j
                                val = x[b, ch, ih, iw]
                                if val > best:
                                    best = val
                                    where = ih * w + iw
                        out[b, ch, y, x_] = best
                        idx[b, ch, y, x_] = where
        return out, idx

    @njit(cache=True)
    def _maxpool_backward_jit(grad, idx, h, w):  # pragma: no cover
        n, c, oh, ow = grad.shape
        dx = np.zeros((n, c, h, w), dtype=np.float64)
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x_ in range(ow):
                        flat = idx[b, ch, y, x_]
                        dx[b, ch, flat // w, flat % w] += grad[b, ch, y, x_]
        return dx


def im2col(img, kh, kw, sh, sw):
    """Unfold a padded NCHW image block into a (N*OH*OW, C*KH*KW) matrix."""
    if JIT_ENABLED:
        return _im2col_jit(img, kh, kw, sh, sw)
    return _im2col_numpy(img, kh, kw, sh, sw)


def col2im(cols, n, c, h, w, kh, kw, sh, sw):
    """Scatter-add the inverse of :func:`im2col` (gradient of the unfold)."""
    if JIT_ENABLED:
        return _col2im_jit(cols, n, c, h, w, kh, kw, sh, sw)
    return _col2im_numpy(cols, n, c, h, w, kh, kw, sh, sw)


def maxpool(x, k, s):
    """Max pooling forward; returns (pooled, flat argmax indices into H*W)."""
    if JIT_ENABLED:
        return _maxpool_jit(x, k, s)
    return _maxpool_numpy(x, k, s)


def maxpool_backward(grad, idx, h, w):
    if JIT_ENABLED:
        return _maxpool_backward_jit(grad, idx, h, w)
    return _maxpool_backward_numpy(grad, idx, h, w)


# ---------------------------------------------------------------------------
# One-sided Jacobi sweeps.  Same source runs jitted or interpreted: the inner
# arithmetic is numpy row operations either way, so both paths agree.


@njit(cache=True)
def jacobi_sweeps(bt, vt, rel_tol, max_sweeps):
    """Orthogonalize the rows of ``bt`` in place by cyclic Jacobi rotations.

    ``bt`` holds the columns of the matrix being factorized as contiguous
    rows; ``vt`` accumulates the right rotations the same way.  A pair is
    considered settled when |<b_p, b_q>| <= rel_tol * |b_p| * |b_q|.
    Returns (sweeps_used, worst_offdiag_ratio, converged).
    """
    n = bt.shape[0]
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = np.dot(bt[p], bt[p])
                aqq = np.dot(bt[q], bt[q])
                apq = np.dot(bt[p], bt[q])
                norm_prod = np.sqrt(app) * np.sqrt(aqq)
                if norm_prod == 0.0 or abs(apq) <= rel_tol * norm_prod:
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                sign = 1.0 if tau >= 0.0 else -1.0
                t = sign / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                bp = bt[p].copy()
                bt[p] = c * bp - s * bt[q]
                bt[q] = s * bp + c * bt[q]
                vp = vt[p].copy()
                vt[p] = c * vp - s * vt[q]
                vt[q] = s * vp + c * vt[q]
        if not rotated:
            return sweep + 1, 0.0, True
    worst = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            norm_prod = np.sqrt(np.dot(bt[p], bt[p])) * np.sqrt(np.dot(bt[q], bt[q]))
            if norm_prod > 0.0:
                ratio = abs(np.dot(bt[p], bt[q])) / norm_prod
                if ratio > worst:
                    worst = ratio
    return max_sweeps, worst, False
