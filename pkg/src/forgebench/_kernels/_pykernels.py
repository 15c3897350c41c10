"""Numpy implementations of the hot kernels (fallback backend).

Every function here has a twin in ``_ckernels.pyx`` with the same signature,
the same tie-breaking and the same per-element summation order, so the two
backends agree bit for bit.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """(N, C, H, W) -> (C*kh*kw, N*OH*OW); row = (c, i, j), column = (n, oh, ow)."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (N, C, OH, OW, kh, kw) -> (C, kh, kw, N, OH, OW)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * oh * ow)


def col2im(cols, shape, kh, kw, stride, pad):
    """Adjoint of ``im2col``: scatter-add columns back into an (N, C, H, W) array."""
    n, c, h, w = shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool2(x):
    """2x2/stride-2 max pool. Returns (pooled, argmax index 0..3 within each window).

    Odd trailing rows/columns are dropped. Ties go to the first window element in
    raster order.
    """
    n, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    xs = x[:, :, : oh * 2, : ow * 2]
    cand = [xs[:, :, 0::2, 0::2], xs[:, :, 0::2, 1::2], xs[:, :, 1::2, 0::2], xs[:, :, 1::2, 1::2]]
    best = cand[0].copy()
    idx = np.zeros(best.shape, dtype=np.int8)
    for k in range(1, 4):
        better = cand[k] > best
        best = np.where(better, cand[k], best)
        idx[better] = k
    return best, idx


def maxpool2_backward(dy, idx, shape):
    n, c, h, w = shape
    dx = np.zeros(shape, dtype=dy.dtype)
    oh, ow = dy.shape[2], dy.shape[3]
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, :, di : oh * 2 : 2, dj : ow * 2 : 2] = np.where(idx == k, dy, 0.0)
    return dx


def zs_candidates(img, step):
    """Zhang-Suen deletion candidates for one subiteration (0 or 1).

    ``img`` is a uint8 0/1 array; pixels outside the image count as background.
    """
    p = np.pad(img.astype(np.uint8), 1)
    h, w = img.shape
    P2 = p[0:h, 1 : w + 1]
    P3 = p[0:h, 2 : w + 2]
    P4 = p[1 : h + 1, 2 : w + 2]
    P5 = p[2 : h + 2, 2 : w + 2]
    P6 = p[2 : h + 2, 1 : w + 1]
    P7 = p[2 : h + 2, 0:w]
    P8 = p[1 : h + 1, 0:w]
    P9 = p[0:h, 0:w]
    ring = [P2, P3, P4, P5, P6, P7, P8, P9, P2]
    b = sum(r.astype(np.int32) for r in ring[:8])
    a = sum(((ring[k] == 0) & (ring[k + 1] == 1)).astype(np.int32) for k in range(8))
    if step == 0:
        m1 = P2 & P4 & P6
        m2 = P4 & P6 & P8
    else:
        m1 = P2 & P4 & P8
        m2 = P2 & P6 & P8
    cand = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & (m1 == 0) & (m2 == 0)
    return cand.astype(np.uint8)


def stamp_segment(canvas, x0, y0, x1, y1, offsets):
    """Bresenham from (x0, y0) to (x1, y1), stamping ``offsets`` (K x 2 of dx, dy) at every step.

    ``canvas`` is a uint8 array (1 = ink) modified in place; stamps are clipped.
    """
    h, w = canvas.shape
    pts = []
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pts.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    pts = np.asarray(pts, dtype=np.int64)
    offs = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    xs = (pts[:, None, 0] + offs[None, :, 0]).ravel()
    ys = (pts[:, None, 1] + offs[None, :, 1]).ravel()
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    canvas[ys[keep], xs[keep]] = 1
