"""Reference projector by explicit ray-triangle intersection.

Shares no coverage or interpolation code with the rasterizer: each pixel's
ray is intersected with the triangles in world coordinates, the hits are
sorted along the ray and the path length in each material is integrated
segment by segment. Used to simulate data and as a test oracle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._parallel import map_ordered
from .geometry import AIR, MaterialTable, Mesh, ProjectionStack, ScanGeometry

log = logging.getLogger(__name__)

GRAZE_TOL = 1e-11
JITTER_REL = 1e-9
# Fixed directions (detector units) for the two re-casts of ambiguous rays.
_JITTER_DIRS = ((0.8, 0.6), (-0.28, 0.96))


@dataclass
class RayHits:
    """All hits of one projection angle, sorted by pixel then distance."""

    pixel: np.ndarray
    face: np.ndarray
    t: np.ndarray
    sign: np.ndarray  # -1 entering, +1 exiting
    ambiguous: np.ndarray  # (rows, cols) bool, still unresolved after re-casts


def _walk(hits_pix, hits_face, hits_t, hits_sign, face_materials, mu, n_pix):
    """Integrate mu along each ray; returns (values, consistent) per pixel."""
    order = np.lexsort((hits_t, hits_pix))
    pix, face, t, sign = hits_pix[order], hits_face[order], hits_t[order], hits_sign[order]
    inner = face_materials[face, 0]
    outer = face_materials[face, 1]
    before = np.where(sign < 0, outer, inner)
    after = np.where(sign < 0, inner, outer)

    consistent = np.ones(n_pix, dtype=bool)
    if len(pix) == 0:
        return np.zeros(n_pix), consistent, order
    first = np.r_[True, pix[1:] != pix[:-1]]
    last = np.r_[pix[1:] != pix[:-1], True]
    bad = (first & (before != AIR)) | (last & (after != AIR))
    same = ~last
    bad |= same & (after != np.r_[before[1:], AIR])
    consistent[pix[bad]] = False

    seg = np.zeros(len(pix))
    idx = np.nonzero(same)[0]
    seg[idx] = mu[after[idx]] * (t[idx + 1] - t[idx])
    values = np.bincount(pix, weights=seg, minlength=n_pix)
    return values, consistent, order


def _cast_one(mesh: Mesh, pose, geometry: ScanGeometry, jx=0.0, jy=0.0):
    return kernels.cast_view(mesh.vertices, mesh.faces, pose.P, np.ascontiguousarray(pose.R),
                             geometry.rows, geometry.cols, geometry.pixel_pitch, jx, jy, GRAZE_TOL)


def trace_view(mesh: Mesh, pose, geometry: ScanGeometry) -> RayHits:
    """Hits for one angle, re-casting grazing or inconsistent rays with a small jitter."""
    n_pix = geometry.rows * geometry.cols
    fm = mesh.face_materials
    # consistency only depends on labels, so a unit mu suffices here
    unit_mu = np.ones(int(fm.max(initial=0)) + 1)
    pix, face, t, sign, graze = _cast_one(mesh, pose, geometry)
    _, ok, _ = _walk(pix, face, t, sign, fm, unit_mu, n_pix)
    bad = (graze > 0) | ~ok
    eps = JITTER_REL * max(mesh.bbox_diagonal(), geometry.pixel_pitch)
    for dx, dy in _JITTER_DIRS:
        if not bad.any():
            break
        jp, jf, jt, js, jg = _cast_one(mesh, pose, geometry, eps * dx, eps * dy)
        _, jok, _ = _walk(jp, jf, jt, js, fm, unit_mu, n_pix)
        fixed = bad & (jg == 0) & jok
        if fixed.any():
            keep = ~fixed[pix]
            take = fixed[jp]
            pix = np.concatenate([pix[keep], jp[take]])
            face = np.concatenate([face[keep], jf[take]])
            t = np.concatenate([t[keep], jt[take]])
            sign = np.concatenate([sign[keep], js[take]])
            bad &= ~fixed
    order = np.lexsort((t, pix))
    return RayHits(pix[order], face[order], t[order], sign[order],
                   bad.reshape(geometry.rows, geometry.cols))


def trace(mesh: Mesh, geometry: ScanGeometry, threads=None) -> list[RayHits]:
    return map_ordered(lambda pose: trace_view(mesh, pose, geometry), geometry.poses, threads)


def cast_forward(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry, threads=None) -> ProjectionStack:
    """Projection stack by ray casting; unresolved ambiguous rays are masked."""
    n_pix = geometry.rows * geometry.cols
    fm = mesh.face_materials
    if fm.max(initial=0) >= len(materials):
        raise ValueError("face references a material id missing from the table")

    def one_view(pose):
        h = trace_view(mesh, pose, geometry)
        vals, _, _ = _walk(h.pixel, h.face, h.t, h.sign, fm, materials.mu, n_pix)
        vals = vals.reshape(geometry.rows, geometry.cols)
        return np.where(h.ambiguous, 0.0, vals), ~h.ambiguous

    out = map_ordered(one_view, geometry.poses, threads)
    data = np.stack([o[0] for o in out])
    mask = np.stack([o[1] for o in out])
    n_amb = int(np.count_nonzero(~mask))
    if n_amb:
        log.info("%d ambiguous rays masked", n_amb)
    return ProjectionStack(data, geometry, mask, {"ambiguous_rays": n_amb})


def add_noise(stack: ProjectionStack, level: float, seed: int) -> ProjectionStack:
    """Additive Gaussian noise with sigma = ``level`` times the RMS of the clean stack."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    if level == 0:
        return stack.replace()
    valid = stack.valid
    rms = float(np.sqrt(np.mean(stack.data[valid] ** 2))) if valid.any() else 0.0
    rng = np.random.default_rng(seed)
    noisy = stack.data + level * rms * rng.standard_normal(stack.data.shape)
    diag = dict(stack.diagnostics, noise_level=level, noise_seed=seed, noise_sigma=level * rms)
    return stack.replace(data=noisy, diagnostics=diag)
