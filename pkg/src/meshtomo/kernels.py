"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``use_backend`` switches explicitly (tests and benchmarks use it to
compare the two).
"""
from contextlib import contextmanager

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = _compiled if _compiled is not None else _kernels_py


def available() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active.NAME


def use_backend(name: str) -> None:
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {available()})") from None


@contextmanager
def backend(name: str):
    previous = backend_name()
    use_backend(name)
    try:
        yield
    finally:
        use_backend(previous)


def rasterize(u, v, faces, area2, rows, cols, eps_area):
    return _active.rasterize(u, v, faces, area2, rows, cols, eps_area)


def backward_view(u, v, l, faces, pix, face, w, gfrag, cols, grad):
    return _active.backward_view(u, v, l, faces, pix, face, w, gfrag, cols, grad)


def cast_view(V, faces, P, R, rows, cols, pitch, jx, jy, tol):
    return _active.cast_view(V, faces, P, R, rows, cols, pitch, jx, jy, tol)


def voxel_project(vol, origin, vs, P, R, rows, cols, pitch, step):
    return _active.voxel_project(vol, origin, vs, P, R, rows, cols, pitch, step)


def voxel_backproject(img, out, origin, vs, P, R, rows, cols, pitch, step):
    return _active.voxel_backproject(img, out, origin, vs, P, R, rows, cols, pitch, step)
