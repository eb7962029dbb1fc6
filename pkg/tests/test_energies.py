import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshtomo.geometry import Mesh, make_icosphere, make_tetrahedron
from meshtomo.gradcheck import random_test_mesh, regularizer_errors
from meshtomo.shape_opt.energies import edge_energy, edge_face_pairs, flatten_energy, laplacian_energy


def test_tetrahedron_values():
    t = make_tetrahedron(1.0)
    # each neighbor mean is -V_k/3, so every vertex contributes |4/3 V_k|^2 = 2/3
    assert laplacian_energy(t)[0] == pytest.approx(8 / 3, rel=1e-12)
    assert edge_energy(t)[0] == pytest.approx(6.0, rel=1e-12)
    # cos(theta) = -1/3 on all 6 edges
    assert flatten_energy(t)[0] == pytest.approx(32 / 3, rel=1e-9)


def test_translation_and_scale():
    m = random_test_mesh(1, np.random.default_rng(0))
    t = m.translated([0.3, -1.2, 4.0])
    assert laplacian_energy(t)[0] == pytest.approx(laplacian_energy(m)[0], rel=1e-12)
    assert edge_energy(t)[0] == pytest.approx(edge_energy(m)[0], rel=1e-12)
    assert flatten_energy(t)[0] == pytest.approx(flatten_energy(m)[0], rel=1e-9)
    s = m.scaled(2.5)
    assert edge_energy(s)[0] == pytest.approx(2.5 ** 2 * edge_energy(m)[0], rel=1e-12)
    assert flatten_energy(s)[0] == pytest.approx(flatten_energy(m)[0], rel=1e-9)


def test_coplanar_pair_is_flat():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.0]])
    m = Mesh(V, [[0, 1, 2], [0, 2, 3]])
    val, grad, skipped = flatten_energy(m)
    assert val == 0.0 and skipped == 0


def test_minimizers():
    V = np.zeros((4, 3)) + 0.3
    t = make_tetrahedron()
    assert edge_energy(Mesh(V, t.faces))[0] == 0.0


def test_edge_face_pairs_cover_all_edges():
    m = make_icosphere(2)
    pairs = edge_face_pairs(m)
    assert len(pairs) == len(m.edges())
    assert np.all(pairs[:, 0] != pairs[:, 1])


def test_degenerate_faces_skipped():
    t = make_tetrahedron()
    V = t.vertices.copy()
    V[3] = (V[0] + V[1]) / 2  # collapses the faces through 0, 1, 3
    _, grad, skipped = flatten_energy(Mesh(V, t.faces))
    assert skipped > 0 and np.all(np.isfinite(grad))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1]))
def test_gradients_fd(seed, k):
    rng = np.random.default_rng(seed)
    m = random_test_mesh(k, rng)
    assert m.n_faces in (20, 80)
    errs = regularizer_errors(m, rng)
    assert max(errs.values()) < 1e-5, errs


def test_nonnegative(rng):
    for _ in range(5):
        m = random_test_mesh(1, rng, jitter=0.5)
        assert laplacian_energy(m)[0] >= 0
        assert edge_energy(m)[0] >= 0
        assert flatten_energy(m)[0] >= 0
