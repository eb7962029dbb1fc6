"""Voxel-grid baseline: sampling projector and SIRT."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._parallel import map_ordered
from .geometry import ProjectionStack, ScanGeometry

log = logging.getLogger(__name__)


@dataclass
class VoxelVolume:
    """Dense attenuation grid.

    ``origin`` is the minimum corner; voxel ``i`` is centered at
    ``origin + (i + 0.5) * voxel_size``.
    """

    data: np.ndarray
    voxel_size: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError("volume must be a non-empty 3D array")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def covering(cls, geometry: ScanGeometry, grid) -> VoxelVolume:
        """Zero volume centered on the rotation axis, spanning the detector field of view.

        Voxels are cubic; the side is the larger of the two detector extents
        divided by the grid size along that axis.
        """
        n = np.broadcast_to(np.asarray(grid, dtype=np.int64), (3,))
        if np.any(n < 1):
            raise ValueError("grid dimensions must be >= 1")
        width = geometry.cols * geometry.pixel_pitch
        height = geometry.rows * geometry.pixel_pitch
        vs = float(max(width / n[0], height / n[1], width / n[2]))
        origin = -0.5 * n * vs
        return cls(np.zeros(tuple(int(k) for k in n)), vs, origin)

    def like(self, data) -> VoxelVolume:
        return VoxelVolume(data, self.voxel_size, self.origin.copy())


def _args(vol: VoxelVolume, pose, geometry: ScanGeometry):
    return (vol.origin, vol.voxel_size, pose.P, np.ascontiguousarray(pose.R),
            geometry.rows, geometry.cols, geometry.pixel_pitch, 0.5 * vol.voxel_size)


def voxel_forward(vol: VoxelVolume, geometry: ScanGeometry, threads=None) -> ProjectionStack:
    """Line integrals by sampling every half voxel with trilinear interpolation."""
    views = map_ordered(lambda pose: kernels.voxel_project(vol.data, *_args(vol, pose, geometry)),
                        geometry.poses, threads)
    return ProjectionStack(np.stack(views), geometry)


def voxel_backproject(stack: ProjectionStack, like: VoxelVolume, threads=None) -> VoxelVolume:
    """Adjoint of :func:`voxel_forward`; per-view buffers are summed in view order."""
    geometry = stack.geometry

    def one(i):
        out = np.zeros(like.shape)
        img = np.ascontiguousarray(stack.data[i], dtype=np.float64)
        return kernels.voxel_backproject(img, out, *_args(like, geometry.poses[i], geometry))

    total = np.zeros(like.shape)
    for part in map_ordered(one, range(geometry.n_angles), threads):
        total += part
    return like.like(total)


@dataclass
class SirtResult:
    volume: VoxelVolume
    residuals: list
    stopped_early: bool


def sirt(data: ProjectionStack, n_iters: int, grid=64, threads=None,
         return_residuals: bool = False):
    """Simultaneous iterative reconstruction with a nonnegativity clamp.

    ``x <- max(0, x + C A^T R (b - A x))`` where ``R`` and ``C`` are the
    inverse row and column sums of the sampling projector. Masked pixels are
    left out of the residual. Stops early when the residual grows on two
    consecutive iterations.

    Returns the volume, or a :class:`SirtResult` if ``return_residuals``.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    geometry = data.geometry
    x = VoxelVolume.covering(geometry, grid)
    valid = data.valid
    b = np.where(valid, data.data, 0.0)

    row = voxel_forward(x.like(np.ones(x.shape)), geometry, threads).data
    R = np.divide(1.0, row, out=np.zeros_like(row), where=(row > 1e-12) & valid)
    col = voxel_backproject(ProjectionStack(np.where(valid, 1.0, 0.0), geometry), x, threads).data
    C = np.divide(1.0, col, out=np.zeros_like(col), where=col > 1e-12)

    residuals: list[float] = []
    grew = 0
    stopped = False
    for it in range(n_iters):
        r = np.where(valid, b - voxel_forward(x, geometry, threads).data, 0.0)
        norm = float(np.sqrt(np.sum(r * r)))
        if residuals and norm > residuals[-1]:
            grew += 1
            if grew >= 2:
                residuals.append(norm)
                stopped = True
                log.warning("SIRT residual grew twice in a row; stopped at iteration %d", it)
                break
        else:
            grew = 0
        residuals.append(norm)
        upd = voxel_backproject(ProjectionStack(r * R, geometry), x, threads).data
        x = x.like(np.maximum(x.data + C * upd, 0.0))
    if return_residuals:
        return SirtResult(x, residuals, stopped)
    return x
