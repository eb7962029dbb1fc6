"""File formats: OBJ meshes, scene/geometry/config JSON, projection stacks, volumes, PGM.

Stacks and volumes are stored as a JSON header ``<base>.json`` next to a raw
little-endian float32 payload ``<base>.raw`` (and ``<base>.mask``, one byte
per pixel, when a validity mask is present).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (AIR, DetectorPose, MaterialTable, Mesh, ProjectionStack, ScanGeometry,
                       make_box, make_icosphere, make_tetrahedron, make_torus)

FMT = "%.9g"


class FormatError(ValueError):
    """Malformed input file."""


def fmt(x) -> str:
    return FMT % x


def _base(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".raw", ".mask") else p


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _check_keys(d: dict, allowed: set, what: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise FormatError(f"unknown {what} keys: {', '.join(sorted(extra))}")


# --- OBJ ---------------------------------------------------------------

def read_obj(path, materials: tuple[int, int] = (1, AIR)) -> Mesh:
    """Read ``v`` and ``f`` records; other records are ignored, faces must be triangles."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise FormatError(f"{path}:{lineno}: only triangles are supported, got {len(tok) - 1} vertices")
                idx = []
                for t in tok[1:]:
                    i = int(t.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                faces.append(idx)
    if not faces:
        raise FormatError(f"{path}: no faces")
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    F = np.array(faces, dtype=np.int64)
    fm = np.tile(np.array(materials, dtype=np.int64), (len(F), 1))
    return Mesh(V, F, fm)


def write_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {fmt(x)} {fmt(y)} {fmt(z)}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


# --- scene -------------------------------------------------------------

_GENERATORS = {
    "icosphere": make_icosphere,
    "torus": make_torus,
    "box": make_box,
    "tetrahedron": make_tetrahedron,
}


@dataclass
class Scene:
    mesh: Mesh
    materials: MaterialTable
    mu_free: np.ndarray


def _component(entry: dict, root: Path) -> Mesh:
    _check_keys(entry, {"mesh", "generator", "params", "interior", "exterior", "faces"}, "component")
    interior = int(entry.get("interior", 1))
    exterior = int(entry.get("exterior", AIR))
    if "mesh" in entry:
        m = read_obj(root / entry["mesh"])
    elif "generator" in entry:
        gen = _GENERATORS.get(entry["generator"])
        if gen is None:
            raise FormatError(f"unknown generator {entry['generator']!r}")
        m = gen(**entry.get("params", {}))
    else:
        raise FormatError("component needs 'mesh' or 'generator'")
    if "faces" in entry:
        a, b = (int(x) for x in entry["faces"])
        F = m.faces[a:b]
        used, inv = np.unique(F, return_inverse=True)
        m = Mesh(m.vertices[used], inv.reshape(F.shape), m.face_materials[a:b])
    return m.relabeled(interior, exterior)


def read_scene(path) -> Scene:
    """Scene JSON: ``materials`` maps id to mu, ``"solve"`` or ``{"init", "solve"}``;
    ``components`` lists meshes (OBJ path relative to the scene, or a generator)."""
    path = Path(path)
    doc = _load_json(path)
    _check_keys(doc, {"materials", "components"}, "scene")
    comps = doc.get("components") or []
    if not comps:
        raise FormatError(f"{path}: scene has no components")
    meshes = [_component(c, path.parent) for c in comps]
    mesh = Mesh.concatenate(*meshes) if len(meshes) > 1 else meshes[0]

    table = doc.get("materials", {})
    n = max([int(k) for k in table] + [int(mesh.face_materials.max())]) + 1
    mu = np.full(n, 0.5)
    mu[AIR] = 0.0
    free = np.zeros(n, dtype=bool)
    for key, val in table.items():
        k = int(key)
        if isinstance(val, dict):
            _check_keys(val, {"init", "solve"}, "material")
            mu[k] = float(val.get("init", 0.5))
            free[k] = bool(val.get("solve", False))
        elif val == "solve":
            mu[k] = 0.5
            free[k] = True
        else:
            mu[k] = float(val)
        if k == AIR and (mu[k] != 0 or free[k]):
            raise FormatError("material 0 is air: mu must be 0 and cannot be solved for")
    missing = set(np.unique(mesh.face_materials).tolist()) - {int(k) for k in table} - {AIR}
    if missing:
        raise FormatError(f"material ids {sorted(missing)} used by components but not in the table")
    return Scene(mesh, MaterialTable(mu), free)


def write_scene(path, mesh_file: str, mesh: Mesh, materials: MaterialTable, mu_free=None) -> None:
    """Scene JSON for ``mesh`` stored in ``mesh_file``; one component per run of equal labels."""
    fm = mesh.face_materials
    breaks = np.nonzero(np.any(fm[1:] != fm[:-1], axis=1))[0] + 1
    starts = np.r_[0, breaks]
    stops = np.r_[breaks, len(fm)]
    comps = []
    for a, b in zip(starts, stops):
        c = {"mesh": mesh_file, "interior": int(fm[a, 0]), "exterior": int(fm[a, 1])}
        if len(starts) > 1:
            c["faces"] = [int(a), int(b)]
        comps.append(c)
    free = np.zeros(len(materials), dtype=bool) if mu_free is None else np.asarray(mu_free)
    mats = {}
    for k in range(1, len(materials)):
        mu = float(materials.mu[k])
        mats[str(k)] = {"init": mu, "solve": True} if free[k] else mu
    _dump_json({"materials": mats, "components": comps}, path)


# --- geometry and optimizer config -----------------------------------------

_GEOM_KEYS = {"n_angles", "angle_start_deg", "angle_end_deg", "rows", "cols", "pixel_pitch",
              "detector_distance"}


def geometry_from_dict(d: dict) -> ScanGeometry:
    _check_keys(d, _GEOM_KEYS, "geometry")
    try:
        n, rows, cols = int(d["n_angles"]), int(d["rows"]), int(d["cols"])
    except KeyError as exc:
        raise FormatError(f"geometry is missing {exc.args[0]!r}") from None
    if n < 1:
        raise FormatError("n_angles must be >= 1")
    pitch = float(d.get("pixel_pitch", 2.0 / max(rows, cols)))
    return ScanGeometry.circular(n, rows, cols, pitch, float(d.get("angle_start_deg", 0.0)),
                                 float(d.get("angle_end_deg", 180.0)),
                                 float(d.get("detector_distance", 3.0)))


def read_geometry(path) -> ScanGeometry:
    """Geometry JSON; the default pitch maps the detector onto ``(-1, 1)``."""
    try:
        return geometry_from_dict(_load_json(path))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_config(path):
    from .shape_opt.optimize import OptConfig, RegWeights

    d = _load_json(path)
    _check_keys(d, {"iterations", "step_size", "schedule", "refine_at", "repair_at", "reg",
                    "solve_mu", "mu_init"}, "config")
    kw = dict(d)
    if "reg" in kw:
        _check_keys(kw["reg"], {"alpha", "beta", "gamma"}, "reg")
        kw["reg"] = RegWeights(**{k: float(v) for k, v in kw["reg"].items()})
    if "schedule" in kw:
        kw["schedule"] = tuple(tuple(s) for s in kw["schedule"])
    if "mu_init" in kw:
        kw["mu_init"] = {int(k): float(v) for k, v in kw["mu_init"].items()}
    try:
        return OptConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_history(history, path) -> None:
    """Per-iteration history as CSV."""
    with open(path, "w") as fh:
        fh.write("iteration,E_data,E_lap,E_edge,E_flat,E,artifact_pixels\n")
        for h in history:
            vals = ",".join(fmt(x) for x in (h.e_data, h.e_lap, h.e_edge, h.e_flat, h.e_total))
            fh.write(f"{h.iteration},{vals},{h.artifact_pixels}\n")


# --- projection stacks -----------------------------------------------------

def _geometry_dict(g: ScanGeometry) -> dict:
    return {
        "rows": g.rows, "cols": g.cols, "pixel_pitch": g.pixel_pitch, "beam": g.beam,
        "angles_deg": None if g.angles_deg is None else list(g.angles_deg),
        "poses": [{"R": p.R.tolist(), "P": p.P.tolist()} for p in g.poses],
    }


def _geometry_from_header(d: dict) -> ScanGeometry:
    poses = tuple(DetectorPose(np.array(p["R"]), np.array(p["P"])) for p in d["poses"])
    return ScanGeometry(poses, int(d["rows"]), int(d["cols"]), float(d["pixel_pitch"]),
                        d.get("beam", "parallel"), d.get("angles_deg"))


def _read_payload(path: Path, expected: int, dtype) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) != expected:
        raise FormatError(f"{path}: payload has {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=dtype)


def write_stack(stack: ProjectionStack, path) -> Path:
    """Write header and payload; returns the header path."""
    base = _base(path)
    n, rows, cols = stack.data.shape
    header = {
        "format": "projection-stack", "n_angles": n, "rows": rows, "cols": cols, "dtype": "f32le",
        "mask": stack.mask is not None, "geometry": _geometry_dict(stack.geometry),
    }
    _dump_json(header, base.with_suffix(".json"))
    base.with_suffix(".raw").write_bytes(np.ascontiguousarray(stack.data, dtype="<f4").tobytes())
    if stack.mask is not None:
        base.with_suffix(".mask").write_bytes(stack.mask.astype(np.uint8).tobytes())
    return base.with_suffix(".json")


def read_stack(path) -> ProjectionStack:
    base = _base(path)
    h = _load_json(base.with_suffix(".json"))
    try:
        n, rows, cols = int(h["n_angles"]), int(h["rows"]), int(h["cols"])
        if h.get("dtype", "f32le") != "f32le":
            raise FormatError(f"unsupported dtype {h['dtype']!r}")
        geometry = _geometry_from_header(h["geometry"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{base}.json: malformed header ({exc})") from None
    count = n * rows * cols
    data = _read_payload(base.with_suffix(".raw"), 4 * count, "<f4").reshape(n, rows, cols)
    mask = None
    if h.get("mask"):
        mask = _read_payload(base.with_suffix(".mask"), count, np.uint8).reshape(n, rows, cols) != 0
    return ProjectionStack(data.astype(np.float64), geometry, mask)


# --- volumes -----------------------------------------------------------

def write_volume(vol, path) -> Path:
    base = _base(path)
    header = {"format": "voxel-volume", "shape": list(vol.shape), "voxel_size": vol.voxel_size,
              "origin": vol.origin.tolist(), "dtype": "f32le", "order": "x-major"}
    _dump_json(header, base.with_suffix(".json"))
    base.with_suffix(".raw").write_bytes(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())
    return base.with_suffix(".json")


def read_volume(path):
    from .baselines import VoxelVolume

    base = _base(path)
    h = _load_json(base.with_suffix(".json"))
    shape = tuple(int(s) for s in h["shape"])
    data = _read_payload(base.with_suffix(".raw"), 4 * int(np.prod(shape)), "<f4").reshape(shape)
    return VoxelVolume(data.astype(np.float64), float(h["voxel_size"]), np.array(h["origin"]))


# --- images ------------------------------------------------------------

def write_pgm(image: np.ndarray, path) -> None:
    """16-bit binary PGM, min-max scaled; a constant image maps to 0."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    pix = np.rint(scaled * 65535).astype(">u2")
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
