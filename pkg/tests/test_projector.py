import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshtomo import projector
from meshtomo.geometry import (DetectorPose, MaterialTable, Mesh, ScanGeometry, make_box,
                               make_icosphere, make_tetrahedron, make_torus, to_detector_frame)
from meshtomo.projector import barycentric_gradient

from conftest import centered_cube, small_geometry


def _single_pose_geometry(rows, cols, pitch, P=(0, 0, -3.0)):
    return ScanGeometry((DetectorPose(np.eye(3), P),), rows, cols, pitch)


def test_full_detector_triangle(backend):
    g = _single_pose_geometry(2, 2, 1.0)
    V = np.array([[-10, -10, 0], [10, -10, 0], [0, 10, 0.0]])
    s, l = to_detector_frame(V, g.poses[0])
    fr = projector.rasterize(s, l, np.array([[0, 1, 2]]), g)
    assert len(fr) == 4
    assert np.allclose(fr.weights.sum(axis=1), 1.0, atol=1e-12)


def test_cube_two_fragments_per_pixel(backend, unit):
    g = _single_pose_geometry(5, 5, 0.2)
    m = centered_cube()
    s, l = to_detector_frame(m, g.poses[0])
    fr = projector.rasterize(s, l, m.faces, g)
    counts = np.bincount(fr.pixel, minlength=25)
    assert np.all(counts == 2)
    assert np.all(fr.parity == 0)
    p = projector.forward(m, unit, g)
    assert np.allclose(p.data, 1.0, rtol=0, atol=1e-12)
    assert p.valid.all()


def test_icosphere_parity_and_even_counts(backend, unit):
    m = make_icosphere(3, 0.6)
    g = small_geometry(4, 64)
    proj = projector.project(m, unit, g)
    for fr in proj.fragments:
        counts = np.bincount(fr.pixel, minlength=64 * 64)
        assert np.all(counts % 2 == 0)
        assert np.all(fr.parity == 0)
    assert proj.stack.diagnostics["artifact_pixels"] == 0


def test_weights_sum_to_one_and_inside(backend):
    m = make_torus(0.5, 0.2, 20, 10)
    g = small_geometry(2, 48)
    proj = projector.project(m, MaterialTable.single(1.0), g)
    for fr in proj.fragments:
        assert np.allclose(fr.weights.sum(axis=1), 1.0, atol=1e-6)
        assert fr.weights.min() >= -1e-9


def test_sphere_chord(backend, unit):
    r = 0.6
    m = make_icosphere(4, r)
    g = small_geometry(4, 64)
    p = projector.forward(m, unit, g)
    xs, ys = g.pixel_centers()
    rho = np.hypot(*np.meshgrid(xs, ys))
    sel = rho < 0.9 * r
    exact = 2 * np.sqrt(r * r - rho[sel] ** 2)
    rel = (p.data[:, sel] - exact) / exact
    assert np.sqrt(np.mean(rel ** 2)) <= 0.02


def test_refinement_reduces_chord_error(unit):
    from meshtomo.shape_opt import refine

    r = 0.6
    g = small_geometry(2, 48)
    xs, ys = g.pixel_centers()
    rho = np.hypot(*np.meshgrid(xs, ys))
    sel = rho < 0.9 * r
    exact = 2 * np.sqrt(r * r - rho[sel] ** 2)

    def err(m):
        return np.sqrt(np.mean((projector.forward(m, unit, g).data[:, sel] - exact) ** 2))

    coarse = make_icosphere(1, r)
    fine = refine(coarse)
    fine = fine.with_vertices(r * fine.vertices / np.linalg.norm(fine.vertices, axis=1, keepdims=True))
    assert fine.n_faces == 4 * coarse.n_faces
    assert err(fine) < err(coarse)


def test_nested_cubes(backend):
    g = _single_pose_geometry(5, 5, 0.125)
    outer = centered_cube(1.0, (1, 0))
    inner = centered_cube(0.5, (2, 1))
    mats = MaterialTable([0.0, 0.7, 2.0])
    p = projector.forward(Mesh.concatenate(outer, inner), mats, g)
    assert p.data[0, 2, 2] == pytest.approx(0.5 * 2.0 + 0.5 * 0.7, rel=1e-9)


def test_mu_linearity_and_superposition(backend):
    a = make_icosphere(2, 0.3, center=(-0.4, 0, 0))
    b = make_torus(0.25, 0.08, 16, 8, center=(0.4, 0.1, 0))
    g = small_geometry(3, 32)
    m1 = MaterialTable.single(1.0)
    pa = projector.forward(a, m1, g).data
    assert np.allclose(projector.forward(a, MaterialTable.single(2.5), g).data, 2.5 * pa, rtol=1e-14, atol=0)
    pb = projector.forward(b, m1, g).data
    pab = projector.forward(Mesh.concatenate(a, b), m1, g).data
    assert np.allclose(pab, pa + pb, rtol=1e-9, atol=1e-12)


def test_ray_translation_invariance(unit):
    m = make_icosphere(2, 0.5)
    g = _single_pose_geometry(32, 32, 2 / 32)
    p0 = projector.forward(m, unit, g).data
    p1 = projector.forward(m.translated([0, 0, 0.137]), unit, g).data
    assert np.allclose(p1, p0, rtol=1e-9, atol=1e-12)


def test_uniform_dp_gradient_along_ray_sums_to_zero(unit):
    m = make_icosphere(3, 0.5)
    g = _single_pose_geometry(32, 32, 2 / 32)
    grad = projector.backward(m, unit, g, np.ones(g.shape)).d_vertices
    scale = np.abs(grad).sum()
    assert abs(grad[:, 2].sum()) <= 1e-6 * scale


def test_mu_gradient_is_thickness(unit):
    m = make_icosphere(2, 0.5)
    g = small_geometry(2, 16)
    mats = MaterialTable.single(1.7)
    p = projector.forward(m, mats, g)
    i = np.unravel_index(np.argmax(p.data), p.data.shape)
    d_p = np.zeros(g.shape)
    d_p[i] = 1.0
    d_mu = projector.backward(m, mats, g, d_p).d_mu
    assert d_mu[1] == pytest.approx(p.data[i] / 1.7, rel=1e-9)
    assert d_mu[0] == 0.0


def _fd_check(mesh, mats, g, rng, n=5):
    base = projector.project(mesh, mats, g)
    d_p = np.where(base.stack.valid, rng.standard_normal(g.shape), 0.0)
    grad = projector.backward(mesh, mats, g, d_p, base).d_vertices
    h = 1e-5 * mesh.bbox_diagonal()
    key0 = [np.sort(f.pixel * 100000 + f.face) for f in base.fragments]
    errs = []
    for _ in range(100):
        if len(errs) == n:
            break
        u = np.zeros_like(mesh.vertices)
        k = rng.integers(mesh.n_vertices)
        u[k] = rng.standard_normal(3)
        pp = projector.project(mesh.with_vertices(mesh.vertices + h * u), mats, g)
        pm = projector.project(mesh.with_vertices(mesh.vertices - h * u), mats, g)
        same = all(np.array_equal(np.sort(f.pixel * 100000 + f.face), k0)
                   for P in (pp, pm) for f, k0 in zip(P.fragments, key0))
        an = float(np.sum(grad * u))
        if not same or abs(an) < 1e-8:
            continue
        fd = (np.sum(d_p * pp.stack.data) - np.sum(d_p * pm.stack.data)) / (2 * h)
        errs.append(abs(fd - an) / abs(an))
    assert len(errs) == n
    return max(errs)


def test_vertex_gradient_fd(backend, rng):
    m = make_icosphere(1, 0.6)
    m = m.with_vertices(m.vertices + 0.03 * rng.standard_normal(m.vertices.shape))
    assert _fd_check(m, MaterialTable.single(1.0), small_geometry(3, 16), rng) < 1e-3


def test_composite_gradient_fd(rng):
    outer = make_icosphere(1, 0.7)
    inner = make_icosphere(1, 0.3, materials=(2, 1))
    m = Mesh.concatenate(outer, inner)
    m = m.with_vertices(m.vertices + 0.02 * rng.standard_normal(m.vertices.shape))
    assert _fd_check(m, MaterialTable([0, 0.5, 1.5]), small_geometry(3, 20), rng) < 1e-3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_barycentric_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, (3, 2))
    a2 = (s[1, 0] - s[0, 0]) * (s[2, 1] - s[0, 1]) - (s[1, 1] - s[0, 1]) * (s[2, 0] - s[0, 0])
    if abs(a2) < 0.05:
        return
    q = rng.uniform(-1, 1, 2)
    w, dw = barycentric_gradient(*s, q)
    assert w.sum() == pytest.approx(1.0)
    h = 1e-7 * np.ptp(s, axis=0).max()
    for m in range(3):
        for c in range(2):
            sp, sm = s.copy(), s.copy()
            sp[m, c] += h
            sm[m, c] -= h
            fd = (barycentric_gradient(*sp, q)[0] - barycentric_gradient(*sm, q)[0]) / (2 * h)
            assert np.allclose(fd, dw[:, m, c], rtol=1e-6, atol=1e-6 * np.abs(dw).max())


def test_barycentric_vertex_and_centroid():
    s = np.array([[0, 0], [2, 0], [0, 1.0]])
    w, _ = barycentric_gradient(*s, s[0])
    assert np.allclose(w, [1, 0, 0])
    w, _ = barycentric_gradient(*s, s.mean(axis=0))
    assert np.allclose(w, [1 / 3] * 3)
    with pytest.raises(ValueError):
        barycentric_gradient([0, 0], [1, 1], [2, 2], [0, 0])


def test_shared_edge_claimed_once(backend):
    # two triangles sharing a diagonal that runs through pixel centers
    g = _single_pose_geometry(5, 5, 1.0)
    V = np.array([[-3, -3, 0], [3, -3, 0], [3, 3, 0], [-3, 3, 0.0]])
    F = np.array([[0, 1, 2], [0, 2, 3]])
    s, l = to_detector_frame(V, g.poses[0])
    fr = projector.rasterize(s, l, F, g)
    assert np.array_equal(np.bincount(fr.pixel, minlength=25), np.ones(25))


def test_degenerate_projection_skipped(unit):
    # a face seen edge-on has zero projected area
    g = _single_pose_geometry(8, 8, 0.25)
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1.0]])
    s, l = to_detector_frame(V, g.poses[0])
    fr = projector.rasterize(s, l, np.array([[0, 1, 2]]), g)
    assert fr.n_degenerate == 1 and len(fr) == 0


def test_broken_mesh_flagged(unit):
    t = make_tetrahedron(1.0)
    open_mesh = Mesh(t.vertices, t.faces[1:])
    p = projector.forward(open_mesh, unit, small_geometry(2, 32))
    assert p.diagnostics["artifact_pixels"] > 0
    assert p.diagnostics.get("broken_mesh")


def test_backward_ignores_masked_pixels(unit, rng):
    t = make_tetrahedron(1.0)
    open_mesh = Mesh(t.vertices, t.faces[1:])
    g = small_geometry(2, 16)
    proj = projector.project(open_mesh, unit, g)
    d_p = np.where(proj.stack.valid, 0.0, rng.standard_normal(g.shape))
    gb = projector.backward(open_mesh, unit, g, d_p, proj)
    assert np.all(gb.d_vertices == 0) and np.all(gb.d_mu == 0)


def test_unknown_material_rejected():
    m = make_box(materials=(3, 0))
    with pytest.raises(ValueError):
        projector.forward(m, MaterialTable.single(1.0), small_geometry(1, 4))


def test_thread_count_does_not_change_result(unit):
    m = make_icosphere(2, 0.5)
    g = small_geometry(4, 24)
    a = projector.forward(m, unit, g, threads=1).data
    b = projector.forward(m, unit, g, threads=3).data
    assert np.array_equal(a, b)
