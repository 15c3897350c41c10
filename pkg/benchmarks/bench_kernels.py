"""Compiled vs numpy kernel timings.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Prints one row per kernel: best-of-N seconds for each backend and the
speed-up.  Every workload is also checked for identical output.
"""
import argparse
import time

import numpy as np

from forgebench import _kernels
from forgebench.harness.synth import SyntheticSignatureSpec, synth_images
from forgebench.raster import binarize_otsu


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def thin_loop(backend, ink):
    """Zhang-Suen subiterations to convergence with the given backend."""
    img = ink.astype(np.uint8)
    while True:
        changed = False
        for step in (0, 1):
            cand = backend.zs_candidates(img, step)
            if cand.any():
                img[cand.astype(bool)] = 0
                changed = True
        if not changed:
            return img


def conv_step(backend, x, w, dy):
    """One 3x3 same conv forward + backward through im2col/col2im."""
    f = w.shape[0]
    cols = backend.im2col(x, 3, 3, 1, 1)
    y = w.reshape(f, -1) @ cols
    dy2 = dy.transpose(1, 0, 2, 3).reshape(f, -1)
    dw = dy2 @ cols.T
    dx = backend.col2im(w.reshape(f, -1).T @ dy2, x.shape, 3, 3, 1, 1)
    return y, dw, dx


def workloads(quick):
    rng = np.random.default_rng(0)
    n = 8 if quick else 32
    x = rng.standard_normal((n, 16, 32, 32))
    cols = _kernels.python_backend.im2col(x, 3, 3, 1, 1)
    pool_in = rng.standard_normal((n, 32, 32, 32))
    _, idx = _kernels.python_backend.maxpool2(pool_in)
    dy_pool = rng.standard_normal((n, 32, 16, 16))
    w = rng.standard_normal((32, 16, 3, 3))
    dy = rng.standard_normal((n, 32, 32, 32))
    sig = [binarize_otsu(img).ink for _, _, img in synth_images(SyntheticSignatureSpec(seed=1), 2 if quick else 8, 2)]
    segs = rng.integers(0, 300, size=(200 if quick else 2000, 4))
    offs = np.array([(dx, dy_) for dy_ in range(-2, 3) for dx in range(-2, 3) if dx * dx + dy_ * dy_ <= 4])

    def stamp(backend):
        canvas = np.zeros((300, 300), dtype=np.uint8)
        for x0, y0, x1, y1 in segs:
            backend.stamp_segment(canvas, int(x0), int(y0), int(x1), int(y1), offs)
        return canvas

    return [
        ("im2col 3x3", lambda b: b.im2col(x, 3, 3, 1, 1)),
        ("col2im 3x3", lambda b: b.col2im(cols, x.shape, 3, 3, 1, 1)),
        ("maxpool2", lambda b: b.maxpool2(pool_in)),
        ("maxpool2 backward", lambda b: b.maxpool2_backward(dy_pool, idx, pool_in.shape)),
        ("zhang-suen thinning", lambda b: [thin_loop(b, s) for s in sig]),
        ("stamp segments", stamp),
        ("conv fwd+bwd", lambda b: conv_step(b, x, w, dy)),
    ]


def _same(a, b):
    if isinstance(a, (tuple, list)):
        return all(_same(p, q) for p, q in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small workloads (smoke run)")
    args = ap.parse_args(argv)
    compiled = _kernels.compiled_backend
    if compiled is None:
        print("compiled backend not built; timing the numpy backend only")
    print(f"{'kernel':<22}{'numpy s':>10}{'compiled s':>12}{'speed-up':>10}  same")
    for name, fn in workloads(args.quick):
        t_py = best_of(lambda: fn(_kernels.python_backend), args.repeat)
        if compiled is None:
            print(f"{name:<22}{t_py:>10.4f}")
            continue
        t_c = best_of(lambda: fn(compiled), args.repeat)
        same = _same(fn(_kernels.python_backend), fn(compiled))
        print(f"{name:<22}{t_py:>10.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
