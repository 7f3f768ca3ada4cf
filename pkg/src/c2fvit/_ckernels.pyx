# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled voxel kernels; same contract as ``c2fvit._pykernels``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport floor

cnp.import_array()

cdef double SNAP = 1e-9


cdef inline void _axis(double u, Py_ssize_t n, Py_ssize_t* i0, double* t,
                       bint* v0, bint* v1) noexcept nogil:
    cdef double f = floor(u)
    cdef double r = u - f
    if r < SNAP:
        r = 0.0
    elif r > 1.0 - SNAP:
        f += 1.0
        r = 0.0
    i0[0] = <Py_ssize_t>f
    t[0] = r
    v0[0] = i0[0] >= 0 and i0[0] < n
    v1[0] = i0[0] + 1 >= 0 and i0[0] + 1 < n


def trilinear_forward(floating[:, :, :, ::1] vol, floating[:, ::1] idx):
    cdef Py_ssize_t C = vol.shape[0], H = vol.shape[1], W = vol.shape[2], D = vol.shape[3]
    cdef Py_ssize_t P = idx.shape[0]
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.zeros((C, P), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t p, c, a, b, e, i0, j0, k0, ii, jj, kk
    cdef double tx, ty, tz, w, acc
    cdef bint vx0, vx1, vy0, vy1, vz0, vz1
    cdef double wxs[2]
    cdef double wys[2]
    cdef double wzs[2]
    cdef bint vxs[2]
    cdef bint vys[2]
    cdef bint vzs[2]
    with nogil:
        for p in range(P):
            _axis(idx[p, 0], H, &i0, &tx, &vx0, &vx1)
            _axis(idx[p, 1], W, &j0, &ty, &vy0, &vy1)
            _axis(idx[p, 2], D, &k0, &tz, &vz0, &vz1)
            wxs[0] = 1.0 - tx; wxs[1] = tx; vxs[0] = vx0; vxs[1] = vx1
            wys[0] = 1.0 - ty; wys[1] = ty; vys[0] = vy0; vys[1] = vy1
            wzs[0] = 1.0 - tz; wzs[1] = tz; vzs[0] = vz0; vzs[1] = vz1
            for a in range(2):
                if not vxs[a]:
                    continue
                ii = i0 + a
                for b in range(2):
                    if not vys[b]:
                        continue
                    jj = j0 + b
                    for e in range(2):
                        if not vzs[e]:
                            continue
                        kk = k0 + e
                        w = wxs[a] * wys[b] * wzs[e]
                        for c in range(C):
                            out[c, p] += <floating>(w * vol[c, ii, jj, kk])
    return out_arr


def trilinear_backward(floating[:, :, :, ::1] vol, floating[:, ::1] idx,
                       floating[:, ::1] gout, bint want_vol):
    cdef Py_ssize_t C = vol.shape[0], H = vol.shape[1], W = vol.shape[2], D = vol.shape[3]
    cdef Py_ssize_t P = idx.shape[0]
    dtype = np.float64 if floating is double else np.float32
    gidx_arr = np.zeros((P, 3), dtype=dtype)
    cdef floating[:, ::1] gidx = gidx_arr
    gvol_arr = np.zeros((C, H, W, D), dtype=dtype) if want_vol else np.zeros((1, 1, 1, 1), dtype=dtype)
    cdef floating[:, :, :, ::1] gvol = gvol_arr
    cdef Py_ssize_t p, c, a, b, e, i0, j0, k0, ii, jj, kk
    cdef double tx, ty, tz, gv, w, g0, g1, g2
    cdef bint vx0, vx1, vy0, vy1, vz0, vz1
    cdef double wxs[2]
    cdef double wys[2]
    cdef double wzs[2]
    cdef double sg[2]
    cdef bint vxs[2]
    cdef bint vys[2]
    cdef bint vzs[2]
    sg[0] = -1.0
    sg[1] = 1.0
    with nogil:
        for p in range(P):
            _axis(idx[p, 0], H, &i0, &tx, &vx0, &vx1)
            _axis(idx[p, 1], W, &j0, &ty, &vy0, &vy1)
            _axis(idx[p, 2], D, &k0, &tz, &vz0, &vz1)
            wxs[0] = 1.0 - tx; wxs[1] = tx; vxs[0] = vx0; vxs[1] = vx1
            wys[0] = 1.0 - ty; wys[1] = ty; vys[0] = vy0; vys[1] = vy1
            wzs[0] = 1.0 - tz; wzs[1] = tz; vzs[0] = vz0; vzs[1] = vz1
            g0 = 0.0
            g1 = 0.0
            g2 = 0.0
            for a in range(2):
                if not vxs[a]:
                    continue
                ii = i0 + a
                for b in range(2):
                    if not vys[b]:
                        continue
                    jj = j0 + b
                    for e in range(2):
                        if not vzs[e]:
                            continue
                        kk = k0 + e
                        gv = 0.0
                        for c in range(C):
                            gv = gv + gout[c, p] * vol[c, ii, jj, kk]
                        g0 = g0 + gv * sg[a] * wys[b] * wzs[e]
                        g1 = g1 + gv * wxs[a] * sg[b] * wzs[e]
                        g2 = g2 + gv * wxs[a] * wys[b] * sg[e]
                        if want_vol:
                            w = wxs[a] * wys[b] * wzs[e]
                            for c in range(C):
                                gvol[c, ii, jj, kk] += <floating>(w * gout[c, p])
            gidx[p, 0] = <floating>g0
            gidx[p, 1] = <floating>g1
            gidx[p, 2] = <floating>g2
    return (gvol_arr if want_vol else None), gidx_arr


def nearest_sample(labels, floating[:, ::1] idx):
    cdef cnp.int64_t[:, :, ::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t H = lab.shape[0], W = lab.shape[1], D = lab.shape[2]
    cdef Py_ssize_t P = idx.shape[0], p, i, j, k
    out_arr = np.zeros(P, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for p in range(P):
            i = <Py_ssize_t>floor(idx[p, 0] + 0.5)
            j = <Py_ssize_t>floor(idx[p, 1] + 0.5)
            k = <Py_ssize_t>floor(idx[p, 2] + 0.5)
            if 0 <= i < H and 0 <= j < W and 0 <= k < D:
                out[p] = lab[i, j, k]
    return out_arr.astype(labels.dtype, copy=False)
