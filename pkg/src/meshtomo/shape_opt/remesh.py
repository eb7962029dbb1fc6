"""Mesh refinement and cleanup used between optimization steps."""
from __future__ import annotations

import logging
import warnings

import numpy as np

from ..geometry import Mesh, check_watertight, midpoint_subdivide

log = logging.getLogger(__name__)

SHORT_EDGE_REL = 1e-4


class RemeshWarning(UserWarning):
    pass


def _one_rings(faces: np.ndarray, K: int) -> list[set]:
    ring = [set() for _ in range(K)]
    for a, b, c in faces.tolist():
        ring[a].update((b, c))
        ring[b].update((a, c))
        ring[c].update((a, b))
    return ring


def collapse_short_edges(mesh: Mesh, min_length: float | None = None) -> tuple[Mesh, int]:
    """Merge the endpoints of edges shorter than ``min_length``.

    Collapses are greedy, shortest first, one per neighborhood per call, and
    only where the two endpoints share exactly the two opposite vertices
    (the link condition), so manifoldness is kept. Faces that become
    degenerate are removed and unused vertices dropped.
    """
    if min_length is None:
        min_length = SHORT_EDGE_REL * mesh.bbox_diagonal()
    V = mesh.vertices.copy()
    F = mesh.faces
    e = mesh.edges()
    length = np.linalg.norm(V[e[:, 0]] - V[e[:, 1]], axis=1)
    short = np.nonzero(length < min_length)[0]
    if len(short) == 0 or mesh.n_vertices <= 4:
        return mesh, 0
    short = short[np.argsort(length[short], kind="stable")]
    ring = _one_rings(F, mesh.n_vertices)
    remap = np.arange(mesh.n_vertices)
    locked = np.zeros(mesh.n_vertices, dtype=bool)
    n = 0
    for a, b in e[short]:
        if locked[a] or locked[b]:
            continue
        if len(ring[a] & ring[b]) != 2:
            continue
        V[a] = 0.5 * (V[a] + V[b])
        remap[b] = a
        locked[[a, b]] = True
        locked[list(ring[a] | ring[b])] = True
        n += 1
    if n == 0:
        return mesh, 0
    newF = remap[F]
    keep = (newF[:, 0] != newF[:, 1]) & (newF[:, 1] != newF[:, 2]) & (newF[:, 0] != newF[:, 2])
    newF = newF[keep]
    fm = mesh.face_materials[keep]
    used = np.unique(newF)
    index = np.full(mesh.n_vertices, -1)
    index[used] = np.arange(len(used))
    return Mesh(V[used], index[newF], fm), n


def cleanup(mesh: Mesh, min_length: float | None = None) -> Mesh:
    """Short-edge collapse; returns the input unchanged if the result is not watertight."""
    out, n = collapse_short_edges(mesh, min_length)
    if n == 0:
        return mesh
    if not check_watertight(out).ok:
        warnings.warn("cleanup broke watertightness; rolled back", RemeshWarning, stacklevel=2)
        return mesh
    log.debug("collapsed %d short edges", n)
    return out


def refine(mesh: Mesh) -> Mesh:
    """1-to-4 midpoint subdivision followed by :func:`cleanup`.

    Labels are inherited from the parent faces. If the cleanup breaks
    watertightness the whole refinement is rolled back.
    """
    V, F, parent = midpoint_subdivide(mesh.vertices, mesh.faces)
    fine = Mesh(V, F, mesh.face_materials[parent])
    out, n = collapse_short_edges(fine)
    if n and not check_watertight(out).ok:
        warnings.warn("refinement broke watertightness; rolled back", RemeshWarning, stacklevel=2)
        return mesh
    return out
