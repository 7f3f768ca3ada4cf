"""The compiled and numpy kernel backends must agree."""
import numpy as np
import pytest

from c2fvit import _pykernels, kernels

ck = pytest.importorskip("c2fvit._ckernels")


def _points(rng, shape, n, spill=1.5):
    idx = rng.uniform(-spill, np.array(shape) - 1 + spill, size=(n, 3))
    # include exact grid nodes and near-node points that hit the snap path
    idx[: n // 4] = np.round(idx[: n // 4])
    idx[n // 4: n // 3] = np.round(idx[n // 4: n // 3]) + rng.choice([-1, 1], (n // 3 - n // 4, 3)) * 1e-11
    return np.ascontiguousarray(idx)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("seed", range(5))
def test_trilinear_forward_agrees(dtype, seed):
    rng = np.random.default_rng(seed)
    vol = rng.normal(size=(2, 7, 5, 6)).astype(dtype)
    idx = _points(rng, vol.shape[1:], 400).astype(dtype)
    tol = 1e-12 if dtype == np.float64 else 1e-5
    np.testing.assert_allclose(ck.trilinear_forward(vol, idx), _pykernels.trilinear_forward(vol, idx), atol=tol)


@pytest.mark.parametrize("want_vol", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_trilinear_backward_agrees(want_vol, seed):
    rng = np.random.default_rng(100 + seed)
    vol = rng.normal(size=(3, 6, 7, 5))
    idx = _points(rng, vol.shape[1:], 300)
    gout = rng.normal(size=(3, 300))
    gv_c, gi_c = ck.trilinear_backward(vol, idx, gout, want_vol)
    gv_p, gi_p = _pykernels.trilinear_backward(vol, idx, gout, want_vol)
    np.testing.assert_allclose(gi_c, gi_p, atol=1e-12)
    if want_vol:
        np.testing.assert_allclose(gv_c, gv_p, atol=1e-12)
    else:
        assert gv_c is None and gv_p is None


def test_nearest_sample_agrees():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 6, size=(6, 5, 7)).astype(np.int64)
    idx = _points(rng, labels.shape, 500)
    np.testing.assert_array_equal(ck.nearest_sample(labels, idx), _pykernels.nearest_sample(labels, idx))


def test_use_backend_switches_and_restores():
    prev = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
        kernels.use_backend("cython")
        assert kernels.BACKEND == "cython"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(prev)
