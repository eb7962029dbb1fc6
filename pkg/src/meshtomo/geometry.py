"""Mesh and scan-geometry types, detector-frame transforms and mesh predicates.

Conventions used throughout the package:

* Faces are wound counter-clockwise when seen from outside, so
  ``(v1 - v0) x (v2 - v0)`` is an outward normal.
* ``face_materials[j] = (interior_id, exterior_id)``; material 0 is air.
* A detector pose maps detector coordinates to global coordinates,
  ``V = R @ v + P``.  The detector is the plane ``z = 0`` of its own frame
  and rays travel along ``+z`` (towards the object).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

AIR = 0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Watertight triangle surface with per-face (interior, exterior) labels.

    Arrays are copied on construction and made read-only; use
    :meth:`with_vertices` to get a deformed copy.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_materials: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, order="C").reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64, order="C").reshape(-1, 3)
        if self.face_materials is None:
            fm = np.tile(np.array([1, AIR], dtype=np.int64), (len(f), 1))
        else:
            fm = np.array(self.face_materials, dtype=np.int64, order="C").reshape(-1, 2)
        if len(fm) != len(f):
            raise ValueError(f"{len(fm)} material pairs for {len(f)} faces")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("face with repeated vertex index")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))
        object.__setattr__(self, "face_materials", _frozen(fm))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> Mesh:
        return Mesh(vertices, self.faces, self.face_materials)

    def translated(self, t) -> Mesh:
        return self.with_vertices(self.vertices + np.asarray(t, dtype=float))

    def scaled(self, c: float, about=None) -> Mesh:
        o = self.vertices.mean(axis=0) if about is None else np.asarray(about, dtype=float)
        return self.with_vertices(o + c * (self.vertices - o))

    def bbox_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with ``a < b``."""
        e = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def materials_used(self) -> np.ndarray:
        return np.unique(self.face_materials)

    @staticmethod
    def concatenate(*meshes: Mesh) -> Mesh:
        verts, faces, mats = [], [], []
        offset = 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + offset)
            mats.append(m.face_materials)
            offset += m.n_vertices
        return Mesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(mats))

    def relabeled(self, interior: int, exterior: int = AIR) -> Mesh:
        fm = np.tile(np.array([interior, exterior], dtype=np.int64), (self.n_faces, 1))
        return Mesh(self.vertices, self.faces, fm)


@dataclass(frozen=True, eq=False)
class MaterialTable:
    """Attenuation per material id; id 0 is air and always has mu = 0."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).ravel()
        if len(mu) < 1:
            raise ValueError("material table needs at least the air entry")
        if mu[AIR] != 0.0:
            raise ValueError("material 0 is air and must have mu = 0")
        object.__setattr__(self, "mu", _frozen(mu))

    def __len__(self):
        return len(self.mu)

    @classmethod
    def single(cls, mu: float = 1.0) -> MaterialTable:
        return cls([0.0, mu])

    def with_mu(self, mu) -> MaterialTable:
        return MaterialTable(mu)


@dataclass(frozen=True, eq=False)
class DetectorPose:
    """Rotation ``R`` (detector frame -> global) and detector origin ``P``."""

    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        P = np.array(self.P, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("R must be a proper rotation matrix")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "P", _frozen(P))

    @property
    def ray_direction(self) -> np.ndarray:
        return self.R[:, 2].copy()


def rotation_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class ScanGeometry:
    """Parallel-beam acquisition: one detector pose per projection angle.

    Pixel ``(r, c)`` has its center at detector coordinates
    ``((c - (cols-1)/2) * pitch, (r - (rows-1)/2) * pitch)``.
    """

    poses: tuple
    rows: int
    cols: int
    pixel_pitch: float
    beam: str = "parallel"
    angles_deg: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("geometry needs at least one pose")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("detector needs at least one pixel")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if self.beam != "parallel":
            raise ValueError(f"unsupported beam geometry {self.beam!r}")
        if self.angles_deg is not None:
            object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))

    @property
    def n_angles(self) -> int:
        return len(self.poses)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_angles, self.rows, self.cols)

    @classmethod
    def circular(
        cls,
        n_angles: int,
        rows: int,
        cols: int,
        pixel_pitch: float,
        angle_start_deg: float = 0.0,
        angle_end_deg: float = 180.0,
        distance: float = 3.0,
    ) -> ScanGeometry:
        """Evenly spaced rotations about the global y axis over ``[start, end)``.

        The detector center sits at ``-distance`` along each viewing
        direction, so every ray starts outside a ``(-1, 1)^3`` object space
        for the default distance.
        """
        angles = angle_start_deg + (angle_end_deg - angle_start_deg) * np.arange(n_angles) / n_angles
        poses = []
        for a in angles:
            R = rotation_y(np.deg2rad(a))
            poses.append(DetectorPose(R, -distance * R[:, 2]))
        return cls(tuple(poses), rows, cols, pixel_pitch, angles_deg=tuple(angles))

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Detector-frame x coordinates of columns and y coordinates of rows."""
        xs = (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.pixel_pitch
        ys = (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.pixel_pitch
        return xs, ys

    def subset(self, indices) -> ScanGeometry:
        idx = list(indices)
        angles = None if self.angles_deg is None else tuple(self.angles_deg[i] for i in idx)
        return ScanGeometry(tuple(self.poses[i] for i in idx), self.rows, self.cols,
                            self.pixel_pitch, self.beam, angles)


@dataclass(eq=False)
class ProjectionStack:
    """Projection images ``data[angle, row, col]`` with an optional validity mask.

    ``mask`` is True where a pixel is valid; ``None`` means all valid.
    """

    data: np.ndarray
    geometry: ScanGeometry
    mask: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.geometry.shape:
            raise ValueError(f"data shape {self.data.shape} != geometry shape {self.geometry.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape:
                raise ValueError("mask shape does not match data")

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.mask

    def replace(self, data=None, mask=..., diagnostics=None) -> ProjectionStack:
        return ProjectionStack(
            self.data.copy() if data is None else data,
            self.geometry,
            self.mask if mask is ... else mask,
            dict(self.diagnostics) if diagnostics is None else diagnostics,
        )


def to_detector_frame(vertices, pose: DetectorPose) -> tuple[np.ndarray, np.ndarray]:
    """Project vertices into a detector frame.

    Returns ``(s, l)``: the (K, 2) detector-plane coordinates and the (K,)
    distances from the detector plane, from ``v = R^T (V - P)``.
    """
    V = vertices.vertices if isinstance(vertices, Mesh) else np.asarray(vertices, dtype=float)
    v = (V - pose.P) @ pose.R
    return np.ascontiguousarray(v[:, :2]), np.ascontiguousarray(v[:, 2])


def degenerate_area_threshold(mesh: Mesh) -> float:
    return 1e-12 * mesh.bbox_diagonal() ** 2


def face_normals(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals and a degenerate-face flag per face.

    Degenerate faces (area at most ``1e-12 * bbox_diagonal**2``) get a zero
    normal and ``True`` in the flag array.
    """
    V, F = mesh.vertices, mesh.faces
    n = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    norm = np.linalg.norm(n, axis=1)
    degenerate = 0.5 * norm <= degenerate_area_threshold(mesh)
    out = np.zeros_like(n)
    ok = ~degenerate
    out[ok] = n[ok] / norm[ok, None]
    return out, degenerate


def signed_area_vectors(mesh: Mesh) -> np.ndarray:
    V, F = mesh.vertices, mesh.faces
    return 0.5 * np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])


class WatertightReport(NamedTuple):
    ok: bool
    violating_edges: list


def check_watertight(mesh: Mesh) -> WatertightReport:
    """Every directed edge must occur once and have exactly one reversed twin."""
    F = mesh.faces
    if not len(F):
        return WatertightReport(False, [])
    K = np.int64(max(mesh.n_vertices, 1))
    d = F[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys, counts = np.unique(d[:, 0] * K + d[:, 1], return_counts=True)
    twin = d[:, 1] * K + d[:, 0]
    pos = np.searchsorted(keys, twin)
    pos_c = np.minimum(pos, len(keys) - 1)
    twin_count = np.where(keys[pos_c] == twin, counts[pos_c], 0)
    own_count = counts[np.searchsorted(keys, d[:, 0] * K + d[:, 1])]
    bad = (own_count != 1) | (twin_count != 1)
    violating = sorted({(int(a), int(b)) for a, b in d[bad]})
    return WatertightReport(not violating, violating)


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.n_vertices - len(mesh.edges()) + mesh.n_faces


_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    return v / np.linalg.norm(v, axis=1, keepdims=True), _ICO_FACES.copy()


def midpoint_subdivide(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split every triangle into four through its edge midpoints.

    Returns new vertices, new faces and, for each new face, the index of its
    parent face. Midpoints of shared edges are shared, so watertightness is
    preserved.
    """
    K = len(vertices)
    e = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3)
    mids = 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    m01, m12, m20 = (K + inv[:, 0], K + inv[:, 1], K + inv[:, 2])
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    new = np.stack([
        np.stack([a, m01, m20], 1),
        np.stack([b, m12, m01], 1),
        np.stack([c, m20, m12], 1),
        np.stack([m01, m12, m20], 1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(len(faces)), 4)
    return np.concatenate([vertices, mids]), new, parent


def make_icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0),
                   materials: tuple[int, int] = (1, AIR)) -> Mesh:
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    v, f = _icosahedron()
    for _ in range(subdivisions):
        v, f, _ = midpoint_subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    v = np.asarray(center, dtype=float) + radius * v
    return Mesh(v, f, np.tile(np.array(materials), (len(f), 1)))


def make_torus(major_r: float = 0.5, minor_r: float = 0.2, segments_u: int = 40,
               segments_v: int = 40, center=(0.0, 0.0, 0.0),
               materials: tuple[int, int] = (1, AIR)) -> Mesh:
    """Torus around the global z axis with ``2 * segments_u * segments_v`` faces."""
    if major_r <= 0 or minor_r <= 0:
        raise ValueError("radii must be positive")
    if segments_u < 3 or segments_v < 3:
        raise ValueError("need at least 3 segments in each direction")
    u = 2 * np.pi * np.arange(segments_u) / segments_u
    w = 2 * np.pi * np.arange(segments_v) / segments_v
    U, W = np.meshgrid(u, w, indexing="ij")
    ring = major_r + minor_r * np.cos(W)
    v = np.stack([ring * np.cos(U), ring * np.sin(U), minor_r * np.sin(W)], -1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(segments_u), np.arange(segments_v), indexing="ij")
    i1, j1 = (i + 1) % segments_u, (j + 1) % segments_v
    a = (i * segments_v + j).ravel()
    b = (i1 * segments_v + j).ravel()
    c = (i1 * segments_v + j1).ravel()
    d = (i * segments_v + j1).ravel()
    f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    v = np.asarray(center, dtype=float) + v
    return Mesh(v, f, np.tile(np.array(materials), (len(f), 1)))


def make_box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), materials: tuple[int, int] = (1, AIR)) -> Mesh:
    """Axis-aligned box as 12 outward-wound triangles."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    v = lo + corners * (hi - lo)
    # corner index = 4x + 2y + z
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x = lo
        [4, 6, 7], [4, 7, 5],  # x = hi
        [0, 4, 5], [0, 5, 1],  # y = lo
        [2, 3, 7], [2, 7, 6],  # y = hi
        [0, 2, 6], [0, 6, 4],  # z = lo
        [1, 5, 7], [1, 7, 3],  # z = hi
    ])
    return Mesh(v, f, np.tile(np.array(materials), (len(f), 1)))


def make_tetrahedron(edge: float = 1.0, center=(0.0, 0.0, 0.0), materials: tuple[int, int] = (1, AIR)) -> Mesh:
    """Regular tetrahedron with the given edge length, centroid at ``center``."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / (2 * np.sqrt(2))
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(np.asarray(center, dtype=float) + v, f, np.tile(np.array(materials), (len(f), 1)))
