"""Mesh regularizers with analytic gradients.

Each function returns ``(value, gradient)`` where the gradient has the
shape of ``mesh.vertices``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..geometry import Mesh


def umbrella_operator(mesh: Mesh) -> sp.csr_matrix:
    """``L = I - D^-1 A`` over the 1-ring (uniform weights)."""
    e = mesh.edges()
    K = mesh.n_vertices
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(K, K))
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros(K), where=deg > 0)
    return (sp.identity(K, format="csr") - sp.diags(inv) @ A).tocsr()


def laplacian_energy(mesh: Mesh, L: sp.csr_matrix | None = None):
    """Sum of squared distances of each vertex from the mean of its neighbors."""
    if L is None:
        L = umbrella_operator(mesh)
    delta = L @ mesh.vertices
    return float(np.sum(delta * delta)), 2.0 * (L.T @ delta)


def edge_energy(mesh: Mesh, edges: np.ndarray | None = None):
    """Sum of squared edge lengths, each undirected edge once."""
    e = mesh.edges() if edges is None else edges
    V = mesh.vertices
    d = V[e[:, 0]] - V[e[:, 1]]
    grad = np.zeros_like(V)
    np.add.at(grad, e[:, 0], 2 * d)
    np.add.at(grad, e[:, 1], -2 * d)
    return float(np.sum(d * d)), grad


def edge_face_pairs(mesh: Mesh) -> np.ndarray:
    """For each undirected edge of a closed mesh, the two faces sharing it.

    Returns an (E, 2) array ``(f, g)`` where ``f`` contains the directed edge
    ``a -> b`` with ``a < b`` and ``g`` the reverse. Edges without a
    reversed twin are dropped.
    """
    F = mesh.faces
    K = np.int64(mesh.n_vertices)
    d = F[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    owner = np.repeat(np.arange(len(F)), 3)
    key = d[:, 0] * K + d[:, 1]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    fwd = d[:, 0] < d[:, 1]
    twin = d[fwd, 1] * K + d[fwd, 0]
    pos = np.minimum(np.searchsorted(skey, twin), len(skey) - 1)
    found = skey[pos] == twin
    return np.stack([owner[fwd][found], owner[order[pos[found]]]], axis=1)


def _normal_grad(V, F, g_n, grad):
    """Push ``dE/dN`` for unnormalized face normals back onto the vertices."""
    e1 = V[F[:, 1]] - V[F[:, 0]]
    e2 = V[F[:, 2]] - V[F[:, 0]]
    d1 = np.cross(e2, g_n)
    d2 = np.cross(g_n, e1)
    np.add.at(grad, F[:, 1], d1)
    np.add.at(grad, F[:, 2], d2)
    np.add.at(grad, F[:, 0], -(d1 + d2))


def flatten_energy(mesh: Mesh, pairs: np.ndarray | None = None, eps: float | None = None):
    """Sum over edges of ``(1 - cos theta)^2`` for the two adjacent face normals.

    Edges next to a degenerate face are skipped; returns
    ``(value, gradient, n_skipped)``.
    """
    V, F = mesh.vertices, mesh.faces
    if pairs is None:
        pairs = edge_face_pairs(mesh)
    N = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    norm = np.linalg.norm(N, axis=1)
    if eps is None:
        eps = 2e-12 * mesh.bbox_diagonal() ** 2
    good = (norm[pairs[:, 0]] > eps) & (norm[pairs[:, 1]] > eps)
    n_skipped = int(np.count_nonzero(~good))
    fa, fb = pairs[good, 0], pairs[good, 1]
    na = N[fa] / norm[fa, None]
    nb = N[fb] / norm[fb, None]
    cos = np.einsum("ij,ij->i", na, nb)
    r = 1.0 - cos
    value = float(np.sum(r * r))
    dcos = -2.0 * r
    # d cos / d N_a = (I - na na^T) nb / |N_a|
    ga = dcos[:, None] * (nb - cos[:, None] * na) / norm[fa, None]
    gb = dcos[:, None] * (na - cos[:, None] * nb) / norm[fb, None]
    g_n = np.zeros_like(N)
    np.add.at(g_n, fa, ga)
    np.add.at(g_n, fb, gb)
    grad = np.zeros_like(V)
    _normal_grad(V, F, g_n, grad)
    return value, grad, n_skipped
