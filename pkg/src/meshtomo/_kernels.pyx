# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_kernels_py`` exactly; loops run without the GIL."""
import numpy as np

from libc.math cimport ceil, floor, fabs, fmin, fmax

NAME = "cython"

ctypedef long long i64


cdef inline bint _owns(double dx, double dy) noexcept nogil:
    return dy > 0.0 or (dy == 0.0 and dx < 0.0)


cdef inline double _edge(const double[::1] u, const double[::1] v, i64 a, i64 b,
                         double qx, double qy) noexcept nogil:
    # evaluated from the lower vertex index so both faces sharing an edge get the same magnitude
    cdef i64 lo, hi
    cdef double e
    if a < b:
        lo = a
        hi = b
    else:
        lo = b
        hi = a
    e = (u[hi] - u[lo]) * (qy - v[lo]) - (v[hi] - v[lo]) * (qx - u[lo])
    if a > b:
        e = -e
    return e


cdef void _face_box(const double[::1] u, const double[::1] v, const i64[:, ::1] faces, i64 f,
                    i64 rows, i64 cols, i64* c0, i64* c1, i64* r0, i64* r1) noexcept nogil:
    cdef double umin = fmin(fmin(u[faces[f, 0]], u[faces[f, 1]]), u[faces[f, 2]])
    cdef double umax = fmax(fmax(u[faces[f, 0]], u[faces[f, 1]]), u[faces[f, 2]])
    cdef double vmin = fmin(fmin(v[faces[f, 0]], v[faces[f, 1]]), v[faces[f, 2]])
    cdef double vmax = fmax(fmax(v[faces[f, 0]], v[faces[f, 1]]), v[faces[f, 2]])
    c0[0] = <i64>fmax(ceil(umin), 0.0)
    c1[0] = <i64>fmin(floor(umax), <double>(cols - 1))
    r0[0] = <i64>fmax(ceil(vmin), 0.0)
    r1[0] = <i64>fmin(floor(vmax), <double>(rows - 1))


def rasterize(const double[::1] u, const double[::1] v, const i64[:, ::1] faces,
              const double[::1] area2, i64 rows, i64 cols, double eps_area):
    cdef i64 F = faces.shape[0]
    cdef i64 f, r, c, k, a, b, n = 0, cap = 0, n_deg = 0
    cdef i64 c0, c1, r0, r1
    cdef double orient, qx, qy, en, dx, dy, s
    cdef double e[3]
    cdef bint inside

    with nogil:
        for f in range(F):
            if fabs(area2[f]) < eps_area:
                continue
            _face_box(u, v, faces, f, rows, cols, &c0, &c1, &r0, &r1)
            if c1 >= c0 and r1 >= r0:
                cap += (c1 - c0 + 1) * (r1 - r0 + 1)

    pix_a = np.empty(cap, dtype=np.int64)
    face_a = np.empty(cap, dtype=np.int64)
    w_a = np.empty((cap, 3), dtype=np.float64)
    cdef i64[::1] pix = pix_a
    cdef i64[::1] fid = face_a
    cdef double[:, ::1] w = w_a

    with nogil:
        for f in range(F):
            if fabs(area2[f]) < eps_area:
                n_deg += 1
                continue
            orient = 1.0 if area2[f] > 0 else -1.0
            _face_box(u, v, faces, f, rows, cols, &c0, &c1, &r0, &r1)
            for r in range(r0, r1 + 1):
                qy = <double>r
                for c in range(c0, c1 + 1):
                    qx = <double>c
                    inside = True
                    for k in range(3):
                        a = faces[f, (k + 1) % 3]
                        b = faces[f, (k + 2) % 3]
                        e[k] = _edge(u, v, a, b, qx, qy)
                        en = orient * e[k]
                        if en > 0:
                            continue
                        if en == 0:
                            dx = orient * (u[b] - u[a])
                            dy = orient * (v[b] - v[a])
                            if _owns(dx, dy):
                                continue
                        inside = False
                        break
                    if not inside:
                        continue
                    s = e[0] + e[1] + e[2]
                    pix[n] = r * cols + c
                    fid[n] = f
                    w[n, 0] = e[0] / s
                    w[n, 1] = e[1] / s
                    w[n, 2] = e[2] / s
                    n += 1
    return pix_a[:n].copy(), face_a[:n].copy(), w_a[:n].copy(), n_deg


def backward_view(const double[::1] u, const double[::1] v, const double[::1] l,
                  const i64[:, ::1] faces, const i64[::1] pix, const i64[::1] face,
                  const double[:, ::1] w, const double[::1] gfrag, i64 cols, double[:, ::1] grad):
    cdef i64 n = pix.shape[0]
    cdef i64 i, k, m, a, b, m1, m2
    cdef i64 vid[3]
    cdef double su[3]
    cdef double sv[3]
    cdef double sl[3]
    cdef double acc_u[3]
    cdef double acc_v[3]
    cdef double qx, qy, A2, d, g, lk
    with nogil:
        for i in range(n):
            g = gfrag[i]
            for k in range(3):
                vid[k] = faces[face[i], k]
                su[k] = u[vid[k]]
                sv[k] = v[vid[k]]
                sl[k] = l[vid[k]]
                acc_u[k] = 0.0
                acc_v[k] = 0.0
            qx = <double>(pix[i] % cols)
            qy = <double>(pix[i] // cols)
            A2 = (su[1] - su[0]) * (sv[2] - sv[0]) - (sv[1] - sv[0]) * (su[2] - su[0])
            d = w[i, 0] * sl[0] + w[i, 1] * sl[1] + w[i, 2] * sl[2]
            for k in range(3):
                a = (k + 1) % 3
                b = (k + 2) % 3
                lk = sl[k]
                acc_u[a] += lk * (sv[b] - qy)
                acc_v[a] += lk * (qx - su[b])
                acc_u[b] += lk * (qy - sv[a])
                acc_v[b] += lk * (su[a] - qx)
            for m in range(3):
                m1 = (m + 1) % 3
                m2 = (m + 2) % 3
                grad[vid[m], 0] += g * (acc_u[m] - d * (sv[m1] - sv[m2])) / A2
                grad[vid[m], 1] += g * (acc_v[m] - d * (su[m2] - su[m1])) / A2
                grad[vid[m], 2] += g * w[i, m]
    return np.asarray(grad)


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _dot(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def cast_view(const double[:, ::1] V, const i64[:, ::1] faces, const double[::1] P,
              const double[:, ::1] R, i64 rows, i64 cols, double pitch, double jx, double jy,
              double tol):
    cdef i64 K = V.shape[0]
    cdef i64 F = faces.shape[0]
    cdef i64 f, k, j, r, c, n = 0, cap = 0, p
    cdef i64 c0, c1, r0, r1
    cdef double ex[3]
    cdef double ey[3]
    cdef double D[3]
    cdef double rel[3]
    cdef double e1[3]
    cdef double e2[3]
    cdef double pvec[3]
    cdef double tvec[3]
    cdef double qvec[3]
    cdef double O[3]
    cdef double det, inv, bu, bv, b0, t, mn, scale, xo, yo, xmin, xmax, ymin, ymax, x, y
    cdef double half_c = (cols - 1) / 2.0
    cdef double half_r = (rows - 1) / 2.0

    px_a = np.empty(K, dtype=np.float64)
    py_a = np.empty(K, dtype=np.float64)
    cdef double[::1] px = px_a
    cdef double[::1] py = py_a
    graze_a = np.zeros(rows * cols, dtype=np.uint8)
    cdef unsigned char[::1] graze = graze_a

    for j in range(3):
        ex[j] = R[j, 0]
        ey[j] = R[j, 1]
        D[j] = R[j, 2]

    with nogil:
        for k in range(K):
            for j in range(3):
                rel[j] = V[k, j] - P[j]
            px[k] = _dot(rel, ex) / pitch + half_c
            py[k] = _dot(rel, ey) / pitch + half_r
        for f in range(F):
            xmin = fmin(fmin(px[faces[f, 0]], px[faces[f, 1]]), px[faces[f, 2]])
            xmax = fmax(fmax(px[faces[f, 0]], px[faces[f, 1]]), px[faces[f, 2]])
            ymin = fmin(fmin(py[faces[f, 0]], py[faces[f, 1]]), py[faces[f, 2]])
            ymax = fmax(fmax(py[faces[f, 0]], py[faces[f, 1]]), py[faces[f, 2]])
            c0 = <i64>fmax(floor(xmin) - 1, 0.0)
            c1 = <i64>fmin(ceil(xmax) + 1, <double>(cols - 1))
            r0 = <i64>fmax(floor(ymin) - 1, 0.0)
            r1 = <i64>fmin(ceil(ymax) + 1, <double>(rows - 1))
            if c1 >= c0 and r1 >= r0:
                cap += (c1 - c0 + 1) * (r1 - r0 + 1)

    pix_a = np.empty(cap, dtype=np.int64)
    face_a = np.empty(cap, dtype=np.int64)
    t_a = np.empty(cap, dtype=np.float64)
    s_a = np.empty(cap, dtype=np.int8)
    cdef i64[::1] opix = pix_a
    cdef i64[::1] oface = face_a
    cdef double[::1] ot = t_a
    cdef signed char[::1] osign = s_a

    with nogil:
        for f in range(F):
            for j in range(3):
                e1[j] = V[faces[f, 1], j] - V[faces[f, 0], j]
                e2[j] = V[faces[f, 2], j] - V[faces[f, 0], j]
            _cross(D, e2, pvec)
            det = _dot(e1, pvec)
            scale = (_dot(e1, e1) ** 0.5) * (_dot(e2, e2) ** 0.5)
            if not fabs(det) > 1e-14 * scale:
                continue
            inv = 1.0 / det
            xmin = fmin(fmin(px[faces[f, 0]], px[faces[f, 1]]), px[faces[f, 2]])
            xmax = fmax(fmax(px[faces[f, 0]], px[faces[f, 1]]), px[faces[f, 2]])
            ymin = fmin(fmin(py[faces[f, 0]], py[faces[f, 1]]), py[faces[f, 2]])
            ymax = fmax(fmax(py[faces[f, 0]], py[faces[f, 1]]), py[faces[f, 2]])
            c0 = <i64>fmax(floor(xmin) - 1, 0.0)
            c1 = <i64>fmin(ceil(xmax) + 1, <double>(cols - 1))
            r0 = <i64>fmax(floor(ymin) - 1, 0.0)
            r1 = <i64>fmin(ceil(ymax) + 1, <double>(rows - 1))
            for r in range(r0, r1 + 1):
                yo = (r - half_r) * pitch + jy
                for c in range(c0, c1 + 1):
                    xo = (c - half_c) * pitch + jx
                    for j in range(3):
                        O[j] = P[j] + xo * ex[j] + yo * ey[j]
                        tvec[j] = O[j] - V[faces[f, 0], j]
                    bu = _dot(tvec, pvec) * inv
                    _cross(tvec, e1, qvec)
                    bv = _dot(qvec, D) * inv
                    t = _dot(e2, qvec) * inv
                    b0 = 1.0 - bu - bv
                    mn = fmin(fmin(bu, bv), b0)
                    p = r * cols + c
                    if fabs(mn) <= tol:
                        graze[p] = 1
                    if mn >= 0 and t >= 0:
                        opix[n] = p
                        oface[n] = f
                        ot[n] = t
                        osign[n] = -1 if det > 0 else 1
                        n += 1
    return pix_a[:n].copy(), face_a[:n].copy(), t_a[:n].copy(), s_a[:n].copy(), graze_a


cdef bint _ray_box(const double* O, const double* D, const double* lo, const double* hi,
                   double* t0, double* t1) noexcept nogil:
    cdef double tmin = -1e300, tmax = 1e300, ta, tb
    cdef int a
    for a in range(3):
        if D[a] != 0:
            ta = (lo[a] - O[a]) / D[a]
            tb = (hi[a] - O[a]) / D[a]
            tmin = fmax(tmin, fmin(ta, tb))
            tmax = fmin(tmax, fmax(ta, tb))
        elif O[a] < lo[a] or O[a] > hi[a]:
            return False
    t0[0] = tmin
    t1[0] = tmax
    return tmax > tmin


cdef void _march(double[:, :, ::1] vol, double[:, ::1] img, const double[::1] origin, double vs,
                 const double[::1] P, const double[:, ::1] R, i64 rows, i64 cols, double pitch,
                 double step, bint adjoint) noexcept nogil:
    cdef i64 nx = vol.shape[0], ny = vol.shape[1], nz = vol.shape[2]
    cdef i64 r, c, j, ns, a, ix, iy, iz, dx, dy, dz
    cdef double O[3]
    cdef double D[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double fidx[3]
    cdef double fr[3]
    cdef i64 i0[3]
    cdef double t0, t1, t, xo, yo, acc, wgt, g
    cdef double half_c = (cols - 1) / 2.0
    cdef double half_r = (rows - 1) / 2.0
    for a in range(3):
        D[a] = R[a, 2]
    lo[0] = origin[0] - 0.5 * vs
    lo[1] = origin[1] - 0.5 * vs
    lo[2] = origin[2] - 0.5 * vs
    hi[0] = origin[0] + (nx + 0.5) * vs
    hi[1] = origin[1] + (ny + 0.5) * vs
    hi[2] = origin[2] + (nz + 0.5) * vs
    for r in range(rows):
        yo = (r - half_r) * pitch
        for c in range(cols):
            xo = (c - half_c) * pitch
            for a in range(3):
                O[a] = P[a] + xo * R[a, 0] + yo * R[a, 1]
            if not _ray_box(O, D, lo, hi, &t0, &t1):
                if not adjoint:
                    img[r, c] = 0.0
                continue
            ns = <i64>ceil((t1 - t0) / step)
            acc = 0.0
            g = img[r, c] * step
            for j in range(ns):
                t = t0 + (j + 0.5) * step
                for a in range(3):
                    fidx[a] = (O[a] + t * D[a] - origin[a]) / vs - 0.5
                    i0[a] = <i64>floor(fidx[a])
                    fr[a] = fidx[a] - i0[a]
                for dx in range(2):
                    ix = i0[0] + dx
                    if ix < 0 or ix >= nx:
                        continue
                    for dy in range(2):
                        iy = i0[1] + dy
                        if iy < 0 or iy >= ny:
                            continue
                        for dz in range(2):
                            iz = i0[2] + dz
                            if iz < 0 or iz >= nz:
                                continue
                            wgt = ((fr[0] if dx else 1.0 - fr[0])
                                   * (fr[1] if dy else 1.0 - fr[1])
                                   * (fr[2] if dz else 1.0 - fr[2]))
                            if adjoint:
                                vol[ix, iy, iz] += wgt * g
                            else:
                                acc += wgt * vol[ix, iy, iz]
            if not adjoint:
                img[r, c] = acc * step


def voxel_project(double[:, :, ::1] vol, const double[::1] origin, double vs, const double[::1] P,
                  const double[:, ::1] R, i64 rows, i64 cols, double pitch, double step):
    img_a = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] img = img_a
    with nogil:
        _march(vol, img, origin, vs, P, R, rows, cols, pitch, step, False)
    return img_a


def voxel_backproject(double[:, ::1] img, double[:, :, ::1] out, const double[::1] origin, double vs,
                      const double[::1] P, const double[:, ::1] R, i64 rows, i64 cols,
                      double pitch, double step):
    with nogil:
        _march(out, img, origin, vs, P, R, rows, cols, pitch, step, True)
    return np.asarray(out)
