"""Differentiable rasterizing forward projector.

Each triangle is rasterized onto the detector at pixel centers. A covered
pixel receives ``(mu_in - mu_out) * sign * depth`` where ``sign`` is the sign
of the triangle's normal along the ray and ``depth`` is the barycentric
interpolation of its vertex distances to the detector. Summed over all
triangles hit by a ray this is the attenuation-weighted path length inside
the closed surfaces.

The adjoint reuses the fragments of the forward pass, so coverage decisions
are identical in both directions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._parallel import map_ordered
from .geometry import AIR, MaterialTable, Mesh, ProjectionStack, ScanGeometry, to_detector_frame

log = logging.getLogger(__name__)

BROKEN_MESH_FRACTION = 0.01


@dataclass
class RasterFragments:
    """Fragments of one projection angle, ordered by face then pixel."""

    pixel: np.ndarray
    face: np.ndarray
    weights: np.ndarray
    depth: np.ndarray
    face_sign: np.ndarray
    parity: np.ndarray
    n_degenerate: int = 0

    def __len__(self):
        return len(self.pixel)

    def coverage(self) -> np.ndarray:
        """(pixel, face) pairs as one sorted int64 key array."""
        n_faces = int(self.face.max()) + 1 if len(self.face) else 1
        return np.sort(self.pixel * n_faces + self.face)


@dataclass
class GradientBundle:
    d_vertices: np.ndarray
    d_mu: np.ndarray


@dataclass
class Projection:
    """Output of :func:`project`: the stack plus the fragments that made it."""

    stack: ProjectionStack
    fragments: list
    coef: np.ndarray


def _pixel_coords(s: np.ndarray, geometry: ScanGeometry) -> tuple[np.ndarray, np.ndarray]:
    u = np.ascontiguousarray(s[:, 0] / geometry.pixel_pitch + (geometry.cols - 1) / 2.0)
    v = np.ascontiguousarray(s[:, 1] / geometry.pixel_pitch + (geometry.rows - 1) / 2.0)
    return u, v


def _area2(u, v, faces):
    u0, u1, u2 = u[faces[:, 0]], u[faces[:, 1]], u[faces[:, 2]]
    v0, v1, v2 = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    return np.ascontiguousarray((u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0))


def eps_area_2d(geometry: ScanGeometry) -> float:
    """Degeneracy threshold for doubled projected areas, in pixel^2."""
    return 1e-12 * geometry.cols ** 2


def rasterize(s: np.ndarray, l: np.ndarray, faces: np.ndarray, geometry: ScanGeometry) -> RasterFragments:
    """Rasterize detector-frame vertices ``(s, l)`` at pixel centers.

    No culling: every non-degenerate triangle contributes. A pixel center
    on an edge shared by two triangles is claimed by exactly one of them.
    """
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    u, v = _pixel_coords(s, geometry)
    a2 = _area2(u, v, faces)
    pix, face, w, n_deg = kernels.rasterize(u, v, faces, a2, geometry.rows, geometry.cols,
                                            eps_area_2d(geometry))
    l = np.ascontiguousarray(l, dtype=np.float64)
    F = faces[face]
    depth = w[:, 0] * l[F[:, 0]] + w[:, 1] * l[F[:, 1]] + w[:, 2] * l[F[:, 2]]
    face_sign = np.where(a2 > 0, 1, -1).astype(np.int8)
    fs = face_sign[face]
    parity = np.bincount(pix, weights=fs, minlength=geometry.rows * geometry.cols)
    return RasterFragments(pix, face, w, depth, face_sign,
                           parity.astype(np.int64).reshape(geometry.rows, geometry.cols), n_deg)


def face_coefficients(mesh: Mesh, materials: MaterialTable) -> np.ndarray:
    """``mu_interior - mu_exterior`` for every face."""
    fm = mesh.face_materials
    if fm.max(initial=0) >= len(materials):
        raise ValueError("face references a material id missing from the table")
    return materials.mu[fm[:, 0]] - materials.mu[fm[:, 1]]


def project(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry, threads=None) -> Projection:
    """Forward projection that keeps the fragments for a later :func:`backward`."""
    coef = face_coefficients(mesh, materials)
    n_pix = geometry.rows * geometry.cols

    def one_view(pose):
        s, l = to_detector_frame(mesh.vertices, pose)
        fr = rasterize(s, l, mesh.faces, geometry)
        contrib = coef[fr.face] * fr.face_sign[fr.face] * fr.depth
        p = np.bincount(fr.pixel, weights=contrib, minlength=n_pix)
        return p.reshape(geometry.rows, geometry.cols), fr

    results = map_ordered(one_view, geometry.poses, threads)
    data = np.stack([r[0] for r in results])
    fragments = [r[1] for r in results]
    parity = np.stack([f.parity for f in fragments])
    mask = parity == 0
    covered = np.stack([np.bincount(f.pixel, minlength=n_pix) > 0 for f in fragments])
    n_flagged = int(np.count_nonzero(~mask))
    n_covered = int(np.count_nonzero(covered))
    diagnostics = {
        "artifact_pixels": n_flagged,
        "covered_pixels": n_covered,
        "degenerate_faces": int(sum(f.n_degenerate for f in fragments)),
    }
    if n_covered and n_flagged > BROKEN_MESH_FRACTION * n_covered:
        diagnostics["broken_mesh"] = True
        log.warning("%d of %d covered pixels have nonzero parity; mesh may be broken",
                    n_flagged, n_covered)
    stack = ProjectionStack(data, geometry, mask, diagnostics)
    return Projection(stack, fragments, coef)


def forward(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry, threads=None) -> ProjectionStack:
    """Project ``mesh`` through ``geometry``.

    Pixels whose signed crossing count does not cancel are marked invalid in
    the returned mask.
    """
    return project(mesh, materials, geometry, threads).stack


def backward(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry, d_p,
             projection: Projection | None = None, threads=None) -> GradientBundle:
    """Gradient of a scalar with ``dE/dp = d_p`` w.r.t. vertices and attenuations.

    Masked (nonzero-parity) pixels contribute nothing. The face sign is
    treated as a constant. ``d_mu[0]`` (air) is always zero.
    """
    if projection is None:
        projection = project(mesh, materials, geometry, threads)
    d_p = np.asarray(d_p, dtype=np.float64).reshape(geometry.shape)
    d_p = np.where(projection.stack.valid, d_p, 0.0)
    coef = projection.coef
    fm = mesh.face_materials
    faces = mesh.faces
    pitch = geometry.pixel_pitch
    n_mat = len(materials)

    def one_view(args):
        pose, fr, g_img = args
        g_pix = g_img.ravel()[fr.pixel]
        signed = fr.face_sign[fr.face] * g_pix
        s, l = to_detector_frame(mesh.vertices, pose)
        u, v = _pixel_coords(s, geometry)
        grad = np.zeros((mesh.n_vertices, 3))
        gfrag = np.ascontiguousarray(coef[fr.face] * signed)
        kernels.backward_view(u, v, l, faces, fr.pixel, fr.face, fr.weights, gfrag, geometry.cols, grad)
        grad[:, :2] /= pitch
        per_face = np.bincount(fr.face, weights=signed * fr.depth, minlength=mesh.n_faces)
        d_mu = (np.bincount(fm[:, 0], weights=per_face, minlength=n_mat)
                - np.bincount(fm[:, 1], weights=per_face, minlength=n_mat))
        return grad @ pose.R.T, d_mu

    parts = map_ordered(one_view, zip(geometry.poses, projection.fragments, d_p), threads)
    d_vertices = np.zeros((mesh.n_vertices, 3))
    d_mu = np.zeros(n_mat)
    for gv, gm in parts:
        d_vertices += gv
        d_mu += gm
    d_mu[AIR] = 0.0
    return GradientBundle(d_vertices, d_mu)


def barycentric_gradient(s0, s1, s2, q):
    """Barycentric weights of ``q`` in triangle ``(s0, s1, s2)`` and their derivatives.

    Returns ``(w, dw)`` where ``w`` has shape (3,) and ``dw[k, m]`` is the
    2-vector ``d w_k / d s_m``. Raises ``ValueError`` for a degenerate
    triangle.
    """
    s = np.array([s0, s1, s2], dtype=float)
    q = np.asarray(q, dtype=float)

    def cross(a, b):
        return a[0] * b[1] - a[1] * b[0]

    A2 = cross(s[1] - s[0], s[2] - s[0])
    scale = max(np.ptp(s[:, 0]), np.ptp(s[:, 1]), 1e-300)
    if abs(A2) < 1e-12 * scale ** 2:
        raise ValueError("degenerate triangle")
    w = np.empty(3)
    dw = np.zeros((3, 3, 2))
    dA = np.empty((3, 2))
    for m in range(3):
        a, b = s[(m + 1) % 3], s[(m + 2) % 3]
        dA[m] = (a[1] - b[1], b[0] - a[0])
    for k in range(3):
        ia, ib = (k + 1) % 3, (k + 2) % 3
        a, b = s[ia], s[ib]
        w[k] = cross(b - a, q - a) / A2
        dE = np.zeros((3, 2))
        dE[ia] = (b[1] - q[1], q[0] - b[0])
        dE[ib] = (q[1] - a[1], a[0] - q[0])
        dw[k] = (dE - w[k] * dA) / A2
    return w, dw
