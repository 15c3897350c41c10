"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the code under test's numerical paths.
"""
import math

import numpy as np


def naive_conv2d(x, w, b, stride=1, pad=0):
    """Direct loop convolution (cross-correlation); x (N,C,H,W), w (F,C,k,k)."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(k):
                            for j in range(k):
                                acc += xp[ni, ci, y * stride + i, xx * stride + j] * w[fi, ci, i, j]
                    out[ni, fi, y, xx] = acc + b[fi]
    return out


def naive_conv_transpose2d(x, w, b, stride=2, pad=1):
    """Scatter form of the transposed convolution; w (C_in, C_out, k, k)."""
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    oh = (h - 1) * stride - 2 * pad + k
    ow = (wd - 1) * stride - 2 * pad + k
    full = np.zeros((n, f, oh + 2 * pad + k, ow + 2 * pad + k))
    for ni in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(wd):
                    for fi in range(f):
                        for i in range(k):
                            for j in range(k):
                                full[ni, fi, y * stride + i, xx * stride + j] += x[ni, ci, y, xx] * w[ci, fi, i, j]
    out = full[:, :, pad : pad + oh, pad : pad + ow]
    return out + b[None, :, None, None]


def naive_maxpool2(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for ni in range(n):
        for ci in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    out[ni, ci, y, xx] = max(x[ni, ci, 2 * y + a, 2 * xx + bb] for a in (0, 1) for bb in (0, 1))
    return out


def naive_bilinear_pixel(src, x_out, y_out, scale_x, scale_y):
    """Half-pixel-centre bilinear sample of ``src`` (list of rows) for one output pixel."""
    h, w = len(src), len(src[0])
    sx = (x_out + 0.5) * scale_x - 0.5
    sy = (y_out + 0.5) * scale_y - 0.5
    sx = min(max(sx, 0.0), w - 1)
    sy = min(max(sy, 0.0), h - 1)
    x0, y0 = int(math.floor(sx)), int(math.floor(sy))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = sx - x0, sy - y0
    top = src[y0][x0] * (1 - fx) + src[y0][x1] * fx
    bot = src[y1][x0] * (1 - fx) + src[y1][x1] * fx
    return top * (1 - fy) + bot * fy


def otsu_exhaustive(values):
    """Threshold t in 1..255 maximising between-class variance of {v < t} vs {v >= t}."""
    values = list(values)
    n = len(values)
    best_t, best_var = None, -1.0
    for t in range(1, 256):
        lo = [v for v in values if v < t]
        hi = [v for v in values if v >= t]
        if not lo or not hi:
            continue
        w0, w1 = len(lo) / n, len(hi) / n
        m0, m1 = sum(lo) / len(lo), sum(hi) / len(hi)
        var = w0 * w1 * (m0 - m1) ** 2
        if var > best_var + 1e-12:
            best_t, best_var = t, var
    return best_t


def zhang_suen_reference(ink):
    """Textbook Zhang-Suen thinning (two subiterations, no extra rules) on a 0/1 grid."""
    img = [[1 if v else 0 for v in row] for row in ink]
    h, w = len(img), len(img[0])

    def px(y, x):
        return img[y][x] if 0 <= y < h and 0 <= x < w else 0

    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            delete = []
            for y in range(h):
                for x in range(w):
                    if not img[y][x]:
                        continue
                    p = [px(y - 1, x), px(y - 1, x + 1), px(y, x + 1), px(y + 1, x + 1),
                         px(y + 1, x), px(y + 1, x - 1), px(y, x - 1), px(y - 1, x - 1)]
                    b = sum(p)
                    a = sum(1 for i in range(8) if p[i] == 0 and p[(i + 1) % 8] == 1)
                    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
                    if step == 0:
                        cond = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        cond = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if 2 <= b <= 6 and a == 1 and cond:
                        delete.append((y, x))
            for y, x in delete:
                img[y][x] = 0
            changed = changed or bool(delete)
    return np.array(img, dtype=bool)


def components8(ink):
    """8-connected component count by flood fill."""
    ink = np.asarray(ink, dtype=bool)
    seen = np.zeros_like(ink)
    h, w = ink.shape
    count = 0
    for y in range(h):
        for x in range(w):
            if ink[y, x] and not seen[y, x]:
                count += 1
                stack = [(y, x)]
                seen[y, x] = True
                while stack:
                    cy, cx = stack.pop()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and ink[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
    return count


def bresenham(x0, y0, x1, y1):
    """Integer line pixels, classic all-octant form."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def central_differences(layers, x, loss_fn, step=1e-6):
    """Finite-difference gradient of loss_fn(forward(x)) for every parameter.

    Only the layers from the perturbed one onwards are re-run.
    """
    acts = [x]
    for layer in layers:
        acts.append(layer.forward(acts[-1], False))
    grads = []
    for li, layer in enumerate(layers):
        for p in layer.params:
            g = np.zeros(p.size)
            flat = p.reshape(-1)
            for i in range(p.size):
                keep = flat[i]
                flat[i] = keep + step
                up = acts[li]
                for later in layers[li:]:
                    up = later.forward(up, False)
                flat[i] = keep - step
                dn = acts[li]
                for later in layers[li:]:
                    dn = later.forward(dn, False)
                flat[i] = keep
                g[i] = (loss_fn(up) - loss_fn(dn)) / (2 * step)
            grads.append(g.reshape(p.shape))
    return grads


def mean_bce(z, y):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    # log(1 + e^-|z|) form, independent of the package's helper
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def symmetric_point_distance(a, b):
    """Mean of nearest-neighbour distances a->b and b->a over pixel coordinates."""
    pa = np.argwhere(a).astype(float)
    pb = np.argwhere(b).astype(float)
    if len(pa) == 0 or len(pb) == 0:
        return math.inf
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def symmetric_point_set_distance(pa, pb):
    """Same as symmetric_point_distance but over explicit (n, 2) coordinate arrays."""
    pa = np.asarray(pa, float)
    pb = np.asarray(pb, float)
    if len(pa) == 0 or len(pb) == 0:
        return math.inf
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
