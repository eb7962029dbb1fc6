"""The compiled and numpy backends must agree exactly (same arithmetic order)."""
import numpy as np
import pytest

from meshtomo import baselines, kernels, projector, raycast_oracle
from meshtomo.geometry import MaterialTable, make_icosphere, make_torus

from conftest import small_geometry

pytestmark = pytest.mark.skipif(len(kernels.available()) < 2, reason="compiled backend not built")


def _both(fn):
    out = {}
    for name in kernels.available():
        with kernels.backend(name):
            out[name] = fn()
    return out["python"], out["cython"]


def test_backend_switch():
    with kernels.backend("python"):
        assert kernels.backend_name() == "python"
    assert kernels.backend_name() == "cython"
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_rasterize_identical():
    m = make_torus(0.5, 0.2, 24, 12)
    g = small_geometry(3, 40)
    a, b = _both(lambda: projector.project(m, MaterialTable.single(1.0), g))
    for fa, fb in zip(a.fragments, b.fragments):
        assert np.array_equal(fa.pixel, fb.pixel)
        assert np.array_equal(fa.face, fb.face)
        assert np.array_equal(fa.weights, fb.weights)
    assert np.array_equal(a.stack.data, b.stack.data)


def test_backward_identical(rng):
    m = make_icosphere(2, 0.6)
    g = small_geometry(3, 32)
    d_p = rng.standard_normal(g.shape)
    mats = MaterialTable.single(1.0)
    a, b = _both(lambda: projector.backward(m, mats, g, d_p))
    assert np.allclose(a.d_vertices, b.d_vertices, rtol=1e-12, atol=1e-12)
    assert np.array_equal(a.d_mu, b.d_mu)


def test_cast_identical():
    m = make_icosphere(2, 0.6)
    g = small_geometry(3, 24)
    a, b = _both(lambda: raycast_oracle.trace(m, g))
    for ha, hb in zip(a, b):
        assert np.array_equal(ha.pixel, hb.pixel)
        assert np.array_equal(ha.face, hb.face)
        assert np.allclose(ha.t, hb.t, rtol=0, atol=1e-14)
        assert np.array_equal(ha.ambiguous, hb.ambiguous)


def test_voxel_kernels_agree(rng):
    g = small_geometry(3, 12)
    vol = baselines.VoxelVolume.covering(g, 10)
    vol = vol.like(rng.random(vol.shape))
    a, b = _both(lambda: baselines.voxel_forward(vol, g).data)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    stack = baselines.voxel_forward(vol, g)
    a, b = _both(lambda: baselines.voxel_backproject(stack, vol).data)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
