"""Pure numpy implementations of the hot kernels.

Same signatures, loop order and arithmetic as ``_kernels.pyx``; used when the
compiled extension is unavailable and as its cross-check in tests.
"""
import numpy as np

NAME = "python"


def _expand_boxes(c0, c1, r0, r1):
    """Enumerate (row, col) of every pixel in each box, box-major then row-major."""
    nc = np.maximum(c1 - c0 + 1, 0)
    nr = np.maximum(r1 - r0 + 1, 0)
    cnt = nc * nr
    total = int(cnt.sum())
    owner = np.repeat(np.arange(len(cnt)), cnt)
    start = np.cumsum(cnt) - cnt
    local = np.arange(total, dtype=np.int64) - start[owner]
    rr = r0[owner] + local // nc[owner]
    cc = c0[owner] + local % nc[owner]
    return owner, rr, cc


def rasterize(u, v, faces, area2, rows, cols, eps_area):
    """Pixel-center coverage of projected triangles.

    ``u, v`` are vertex positions in pixel units (pixel (r, c) has its center
    at ``u = c, v = r``). Returns ``(pixel, face, weights, n_degenerate)``
    with fragments ordered by face, then row, then column.
    """
    ok = np.abs(area2) >= eps_area
    n_deg = int(np.count_nonzero(~ok))
    fi = np.nonzero(ok)[0]
    F = faces[fi]
    U, V = u[F], v[F]
    c0 = np.maximum(np.ceil(U.min(1)), 0).astype(np.int64)
    c1 = np.minimum(np.floor(U.max(1)), cols - 1).astype(np.int64)
    r0 = np.maximum(np.ceil(V.min(1)), 0).astype(np.int64)
    r1 = np.minimum(np.floor(V.max(1)), rows - 1).astype(np.int64)
    owner, rr, cc = _expand_boxes(c0, c1, r0, r1)
    qx = cc.astype(np.float64)
    qy = rr.astype(np.float64)
    Fo = F[owner]
    orient = np.where(area2[fi][owner] > 0, 1.0, -1.0)

    inside = np.ones(len(owner), dtype=bool)
    e = np.empty((len(owner), 3))
    for k in range(3):
        a = Fo[:, (k + 1) % 3]
        b = Fo[:, (k + 2) % 3]
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        ek = (u[hi] - u[lo]) * (qy - v[lo]) - (v[hi] - v[lo]) * (qx - u[lo])
        ek = np.where(a > b, -ek, ek)
        en = orient * ek
        dx = orient * (u[b] - u[a])
        dy = orient * (v[b] - v[a])
        owns = (dy > 0) | ((dy == 0) & (dx < 0))
        inside &= (en > 0) | ((en == 0) & owns)
        e[:, k] = ek
    e = e[inside]
    w = e / (e[:, 0] + e[:, 1] + e[:, 2])[:, None]
    pix = rr[inside] * cols + cc[inside]
    return pix.astype(np.int64), fi[owner[inside]].astype(np.int64), np.ascontiguousarray(w), n_deg


def backward_view(u, v, l, faces, pix, face, w, gfrag, cols, grad):
    """Accumulate per-vertex gradients ``(d/du, d/dv, d/dl)`` into ``grad``.

    ``gfrag`` is dE/d(depth) for each fragment. Depth is
    ``sum_k w_k l_k`` with ``w_k = E_k(q) / A2``; the derivative of the
    weights is taken analytically by the quotient rule.
    """
    if len(pix) == 0:
        return grad
    K = len(u)
    F = faces[face]
    qx = (pix % cols).astype(np.float64)
    qy = (pix // cols).astype(np.float64)
    su, sv, sl = u[F], v[F], l[F]
    A2 = (su[:, 1] - su[:, 0]) * (sv[:, 2] - sv[:, 0]) - (sv[:, 1] - sv[:, 0]) * (su[:, 2] - su[:, 0])
    d = w[:, 0] * sl[:, 0] + w[:, 1] * sl[:, 1] + w[:, 2] * sl[:, 2]
    acc_u = np.zeros((len(pix), 3))
    acc_v = np.zeros((len(pix), 3))
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        lk = sl[:, k]
        acc_u[:, a] += lk * (sv[:, b] - qy)
        acc_v[:, a] += lk * (qx - su[:, b])
        acc_u[:, b] += lk * (qy - sv[:, a])
        acc_v[:, b] += lk * (su[:, a] - qx)
    gu = np.empty((len(pix), 3))
    gv = np.empty((len(pix), 3))
    for m in range(3):
        m1, m2 = (m + 1) % 3, (m + 2) % 3
        dA_u = sv[:, m1] - sv[:, m2]
        dA_v = su[:, m2] - su[:, m1]
        gu[:, m] = gfrag * (acc_u[:, m] - d * dA_u) / A2
        gv[:, m] = gfrag * (acc_v[:, m] - d * dA_v) / A2
    gl = gfrag[:, None] * w
    idx = F.ravel()
    grad[:, 0] += np.bincount(idx, weights=gu.ravel(), minlength=K)
    grad[:, 1] += np.bincount(idx, weights=gv.ravel(), minlength=K)
    grad[:, 2] += np.bincount(idx, weights=gl.ravel(), minlength=K)
    return grad


def cast_view(V, faces, P, R, rows, cols, pitch, jx, jy, tol):
    """Intersect one parallel ray per pixel with every triangle.

    Rays start at the pixel centers (shifted by ``(jx, jy)`` in detector
    units) and travel along ``R[:, 2]``. Returns ``(pixel, face, t, sign,
    graze)``; ``sign`` is -1 when entering through the face and +1 when
    leaving, ``graze[pixel]`` is 1 where some barycentric coordinate is
    within ``tol`` of zero.
    """
    ex, ey, D = R[:, 0], R[:, 1], R[:, 2]
    rel = V - P
    px = rel @ ex / pitch + (cols - 1) / 2.0
    py = rel @ ey / pitch + (rows - 1) / 2.0
    X, Y = px[faces], py[faces]
    c0 = np.maximum(np.floor(X.min(1)) - 1, 0).astype(np.int64)
    c1 = np.minimum(np.ceil(X.max(1)) + 1, cols - 1).astype(np.int64)
    r0 = np.maximum(np.floor(Y.min(1)) - 1, 0).astype(np.int64)
    r1 = np.minimum(np.ceil(Y.max(1)) + 1, rows - 1).astype(np.int64)
    owner, rr, cc = _expand_boxes(c0, c1, r0, r1)
    graze = np.zeros(rows * cols, dtype=np.uint8)
    if len(owner) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0), np.zeros(0, dtype=np.int8), graze

    V0 = V[faces[:, 0]]
    E1 = V[faces[:, 1]] - V0
    E2 = V[faces[:, 2]] - V0
    pvec = np.cross(D, E2)
    det = np.einsum("ij,ij->i", E1, pvec)
    scale = np.linalg.norm(E1, axis=1) * np.linalg.norm(E2, axis=1)
    usable = np.abs(det) > 1e-14 * scale

    xo = (cc - (cols - 1) / 2.0) * pitch + jx
    yo = (rr - (rows - 1) / 2.0) * pitch + jy
    O = P + xo[:, None] * ex + yo[:, None] * ey
    f = owner
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det[f]
        tvec = O - V0[f]
        bu = np.einsum("ij,ij->i", tvec, pvec[f]) * inv
        qvec = np.cross(tvec, E1[f])
        bv = (qvec @ D) * inv
        t = np.einsum("ij,ij->i", E2[f], qvec) * inv
        b0 = 1.0 - bu - bv
        mn = np.minimum(np.minimum(bu, bv), b0)
    ok = usable[f]
    pix = rr * cols + cc
    with np.errstate(invalid="ignore"):
        g = ok & (np.abs(mn) <= tol)
        hit = ok & (mn >= 0) & (t >= 0)
    graze[pix[g]] = 1
    sign = np.where(det[f] > 0, -1, 1).astype(np.int8)
    return pix[hit].astype(np.int64), f[hit].astype(np.int64), t[hit], sign[hit], graze


def _ray_box(O, D, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / D
        ta = (lo - O) * inv
        tb = (hi - O) * inv
    tmin = np.where(D != 0, np.minimum(ta, tb), -np.inf)
    tmax = np.where(D != 0, np.maximum(ta, tb), np.inf)
    outside = (D == 0) & ((O < lo) | (O > hi))
    t0 = tmin.max(axis=-1)
    t1 = tmax.min(axis=-1)
    t1 = np.where(outside.any(axis=-1), -np.inf, t1)
    return t0, t1


def _voxel_samples(shape, origin, vs, P, R, rows, cols, pitch, step):
    """Sample positions (as continuous voxel indices) for every ray of a view."""
    nx, ny, nz = shape
    xs = (np.arange(cols) - (cols - 1) / 2.0) * pitch
    ys = (np.arange(rows) - (rows - 1) / 2.0) * pitch
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    O = P + xx.ravel()[:, None] * R[:, 0] + yy.ravel()[:, None] * R[:, 1]
    D = R[:, 2]
    lo = origin - 0.5 * vs
    hi = origin + (np.array(shape) + 0.5) * vs
    t0, t1 = _ray_box(O, np.broadcast_to(D, O.shape), lo, hi)
    ns = np.where(t1 > t0, np.ceil((t1 - t0) / step), 0).astype(np.int64)
    nmax = int(ns.max()) if len(ns) else 0
    j = np.arange(nmax)
    valid = j[None, :] < ns[:, None]
    t = t0[:, None] + (j[None, :] + 0.5) * step
    pos = O[:, None, :] + t[..., None] * D
    f = (pos - origin) / vs - 0.5
    return f, valid


def _trilinear_corners(f, valid, shape):
    i0 = np.floor(f).astype(np.int64)
    fr = f - i0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix, iy, iz = i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz
                w = ((fr[..., 0] if dx else 1 - fr[..., 0])
                     * (fr[..., 1] if dy else 1 - fr[..., 1])
                     * (fr[..., 2] if dz else 1 - fr[..., 2]))
                inb = (valid & (ix >= 0) & (ix < shape[0]) & (iy >= 0) & (iy < shape[1])
                       & (iz >= 0) & (iz < shape[2]))
                yield ix, iy, iz, w, inb


def voxel_project(vol, origin, vs, P, R, rows, cols, pitch, step):
    shape = vol.shape
    f, valid = _voxel_samples(shape, origin, vs, P, R, rows, cols, pitch, step)
    out = np.zeros(f.shape[:2])
    for ix, iy, iz, w, inb in _trilinear_corners(f, valid, shape):
        vals = np.zeros(f.shape[:2])
        vals[inb] = vol[ix[inb], iy[inb], iz[inb]]
        out += w * vals
    return (out.sum(axis=1) * step).reshape(rows, cols)


def voxel_backproject(img, out, origin, vs, P, R, rows, cols, pitch, step):
    shape = out.shape
    f, valid = _voxel_samples(shape, origin, vs, P, R, rows, cols, pitch, step)
    g = np.broadcast_to(img.reshape(-1, 1) * step, f.shape[:2])
    flat = out.reshape(-1)
    for ix, iy, iz, w, inb in _trilinear_corners(f, valid, shape):
        idx = (ix[inb] * shape[1] + iy[inb]) * shape[2] + iz[inb]
        flat += np.bincount(idx, weights=(w * g)[inb], minlength=flat.size)
    return out
