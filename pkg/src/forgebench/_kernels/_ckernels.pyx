# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (size + 2 * pad - k) // stride + 1


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


cdef inline Py_ssize_t _first_valid(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t limit) noexcept nogil:
    # smallest o >= 0 with o * stride + off >= 0, capped at limit
    cdef Py_ssize_t o = 0
    if off < 0:
        o = (-off + stride - 1) // stride
    return o if o < limit else limit


cdef inline Py_ssize_t _end_valid(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t size, Py_ssize_t limit) noexcept nogil:
    # one past the largest o < limit with o * stride + off < size
    cdef Py_ssize_t o
    if size - off <= 0:
        return 0
    o = (size - off - 1) // stride + 1
    return o if o < limit else limit


def _im2col(real[:, :, :, ::1] x, real[:, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = _out(h, kh, stride, pad), ow = _out(w, kw, stride, pad)
    cdef Py_ssize_t ci, i, j, ni, y, xx, row, base, sy, x0, x1
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    x0 = _first_valid(j - pad, stride, ow)
                    x1 = _end_valid(j - pad, stride, w, ow)
                    if x1 < x0:
                        x1 = x0
                    for ni in range(n):
                        for y in range(oh):
                            base = (ni * oh + y) * ow
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= h:
                                for xx in range(ow):
                                    cols[row, base + xx] = 0
                                continue
                            for xx in range(x0):
                                cols[row, base + xx] = 0
                            for xx in range(x0, x1):
                                cols[row, base + xx] = x[ni, ci, sy, xx * stride + j - pad]
                            for xx in range(x1, ow):
                                cols[row, base + xx] = 0


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((c * kh * kw, n * oh * ow), dtype=x.dtype)
    _im2col(x, cols, kh, kw, stride, pad)
    return cols


def _col2im(real[:, ::1] cols, real[:, :, :, ::1] out, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t oh = _out(h, kh, stride, pad), ow = _out(w, kw, stride, pad)
    cdef Py_ssize_t ci, i, j, ni, y, xx, row, base, sy, x0, x1
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    x0 = _first_valid(j - pad, stride, ow)
                    x1 = _end_valid(j - pad, stride, w, ow)
                    for ni in range(n):
                        for y in range(oh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= h:
                                continue
                            base = (ni * oh + y) * ow
                            for xx in range(x0, x1):
                                out[ni, ci, sy, xx * stride + j - pad] += cols[row, base + xx]


def col2im(cols, shape, kh, kw, stride, pad):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, out, kh, kw, stride, pad)
    return out


def _maxpool2(real[:, :, :, ::1] x, real[:, :, :, ::1] y, signed char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1], oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t a, b, i, j, k
    cdef real best, v
    cdef signed char bi
    with nogil:
        for a in range(n):
            for b in range(c):
                for i in range(oh):
                    for j in range(ow):
                        best = x[a, b, 2 * i, 2 * j]
                        bi = 0
                        v = x[a, b, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            bi = 1
                        v = x[a, b, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            bi = 2
                        v = x[a, b, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            bi = 3
                        y[a, b, i, j] = best
                        idx[a, b, i, j] = bi


def maxpool2(x):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    y = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((n, c, h // 2, w // 2), dtype=np.int8)
    _maxpool2(x, y, idx)
    return y, idx


def _maxpool2_backward(real[:, :, :, ::1] dy, signed char[:, :, :, ::1] idx, real[:, :, :, ::1] dx):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], oh = dy.shape[2], ow = dy.shape[3]
    cdef Py_ssize_t a, b, i, j
    cdef signed char k
    with nogil:
        for a in range(n):
            for b in range(c):
                for i in range(oh):
                    for j in range(ow):
                        k = idx[a, b, i, j]
                        dx[a, b, 2 * i + (k >> 1), 2 * j + (k & 1)] = dy[a, b, i, j]


def maxpool2_backward(dy, idx, shape):
    dy = np.ascontiguousarray(dy)
    dx = np.zeros(shape, dtype=dy.dtype)
    _maxpool2_backward(dy, np.ascontiguousarray(idx), dx)
    return dx


def zs_candidates(img, int step):
    cdef cnp.uint8_t[:, ::1] src = np.ascontiguousarray(img, dtype=np.uint8)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    out = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    cdef Py_ssize_t y, x, k
    cdef int p[9]
    cdef int a, b
    cdef int m1, m2
    with nogil:
        for y in range(h):
            for x in range(w):
                if src[y, x] != 1:
                    continue
                # P2..P9 clockwise from north
                p[0] = src[y - 1, x] if y > 0 else 0
                p[1] = src[y - 1, x + 1] if (y > 0 and x + 1 < w) else 0
                p[2] = src[y, x + 1] if x + 1 < w else 0
                p[3] = src[y + 1, x + 1] if (y + 1 < h and x + 1 < w) else 0
                p[4] = src[y + 1, x] if y + 1 < h else 0
                p[5] = src[y + 1, x - 1] if (y + 1 < h and x > 0) else 0
                p[6] = src[y, x - 1] if x > 0 else 0
                p[7] = src[y - 1, x - 1] if (y > 0 and x > 0) else 0
                p[8] = p[0]
                b = 0
                a = 0
                for k in range(8):
                    b += p[k]
                    if p[k] == 0 and p[k + 1] == 1:
                        a += 1
                if b < 2 or b > 6 or a != 1:
                    continue
                if step == 0:
                    m1 = p[0] & p[2] & p[4]
                    m2 = p[2] & p[4] & p[6]
                else:
                    m1 = p[0] & p[2] & p[6]
                    m2 = p[0] & p[4] & p[6]
                if m1 == 0 and m2 == 0:
                    o[y, x] = 1
    return out


def stamp_segment(canvas, long x0, long y0, long x1, long y1, offsets):
    cdef cnp.uint8_t[:, ::1] cv = canvas
    cdef cnp.int64_t[:, ::1] offs = np.ascontiguousarray(np.asarray(offsets, dtype=np.int64).reshape(-1, 2))
    cdef Py_ssize_t h = cv.shape[0], w = cv.shape[1], k, nk = offs.shape[0]
    cdef long dx = abs(x1 - x0), dy = -abs(y1 - y0)
    cdef long sx = 1 if x0 < x1 else -1
    cdef long sy = 1 if y0 < y1 else -1
    cdef long err = dx + dy, e2, x = x0, y = y0, px, py
    with nogil:
        while True:
            for k in range(nk):
                px = x + offs[k, 0]
                py = y + offs[k, 1]
                if 0 <= px < w and 0 <= py < h:
                    cv[py, px] = 1
            if x == x1 and y == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x += sx
            if e2 <= dx:
                err += dx
                y += sy
