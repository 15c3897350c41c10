"""The compiled kernels must agree bit for bit with the numpy fallback."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from forgebench import _kernels

py = _kernels.python_backend
cy = _kernels.compiled_backend
needs_compiled = pytest.mark.skipif(cy is None, reason="compiled backend not built")

geometry = st.tuples(
    st.integers(1, 3), st.integers(1, 3), st.integers(1, 9), st.integers(1, 9),
    st.sampled_from([1, 2, 3, 4]), st.sampled_from([1, 2]), st.integers(0, 2),
).filter(lambda g: g[2] + 2 * g[6] >= g[4] and g[3] + 2 * g[6] >= g[4])


@needs_compiled
@settings(max_examples=100, deadline=None)
@given(geometry, st.sampled_from([np.float64, np.float32]), st.integers(0, 2**31))
def test_im2col_col2im_identical(geom, dtype, seed):
    n, c, h, w, k, stride, pad = geom
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    a = py.im2col(x, k, k, stride, pad)
    b = cy.im2col(x, k, k, stride, pad)
    assert a.dtype == b.dtype and np.array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    assert np.array_equal(py.col2im(cols, x.shape, k, k, stride, pad), cy.col2im(cols, x.shape, k, k, stride, pad))


@settings(max_examples=60, deadline=None)
@given(geometry, st.integers(0, 2**31))
def test_col2im_is_adjoint_of_im2col(geom, seed):
    n, c, h, w, k, stride, pad = geom
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w))
    cols = _kernels.im2col(x, k, k, stride, pad)
    r = rng.standard_normal(cols.shape)
    lhs = float(np.sum(cols * r))
    rhs = float(np.sum(x * _kernels.col2im(r, x.shape, k, k, stride, pad)))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**31),
       st.booleans())
def test_maxpool_identical(n, c, h, w, seed, ties):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w))
    if ties:
        x = np.round(x)
    ya, ia = py.maxpool2(x)
    yb, ib = cy.maxpool2(x)
    assert np.array_equal(ya, yb) and np.array_equal(ia, ib)
    dy = rng.standard_normal(ya.shape)
    assert np.array_equal(py.maxpool2_backward(dy, ia, x.shape), cy.maxpool2_backward(dy, ib, x.shape))


@needs_compiled
@settings(max_examples=80, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 16), st.integers(1, 16)), elements=st.integers(0, 1)),
       st.sampled_from([0, 1]))
def test_zs_candidates_identical(img, step):
    assert np.array_equal(py.zs_candidates(img, step), cy.zs_candidates(img, step))


@needs_compiled
@settings(max_examples=80, deadline=None)
@given(st.integers(-5, 25), st.integers(-5, 25), st.integers(-5, 25), st.integers(-5, 25), st.integers(0, 3))
def test_stamp_segment_identical(x0, y0, x1, y1, r):
    offs = np.array([(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= r * r])
    a = np.zeros((20, 20), np.uint8)
    b = np.zeros((20, 20), np.uint8)
    py.stamp_segment(a, x0, y0, x1, y1, offs)
    cy.stamp_segment(b, x0, y0, x1, y1, offs)
    assert np.array_equal(a, b)


def test_pure_python_switch():
    env = dict(os.environ, FORGEBENCH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import forgebench; print(forgebench.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
