"""Pure-numpy voxel kernels.

Reference implementation of the hot loops.  The compiled ``_ckernels``
module exposes the same functions with identical semantics and is preferred
when it imports; see :mod:`c2fvit.kernels`.

Coordinates are voxel indices along (axis0, axis1, axis2).  A fractional part
within ``SNAP`` of an integer is snapped onto the grid point so that identity
resampling reproduces the input bit-exactly.
"""
import numpy as np

SNAP = 1e-9


def _axis_terms(u, n):
    f = np.floor(u)
    t = u - f
    lo = t < SNAP
    hi = t > 1.0 - SNAP
    t = np.where(lo | hi, 0.0, t)
    f = np.where(hi, f + 1.0, f)
    i0 = f.astype(np.int64)
    i1 = i0 + 1
    v0 = (i0 >= 0) & (i0 < n)
    v1 = (i1 >= 0) & (i1 < n)
    return i0, i1, v0, v1, t


def _corners(vol_shape, idx):
    _, H, W, D = vol_shape
    ax = [_axis_terms(idx[:, a], n) for a, n in enumerate((H, W, D))]
    out = []
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                ii, vi = (ax[0][cx], ax[0][2 + cx])
                jj, vj = (ax[1][cy], ax[1][2 + cy])
                kk, vk = (ax[2][cz], ax[2][2 + cz])
                valid = vi & vj & vk
                flat = (np.clip(ii, 0, H - 1) * W + np.clip(jj, 0, W - 1)) * D + np.clip(kk, 0, D - 1)
                out.append(((cx, cy, cz), flat, valid))
    return out, (ax[0][4], ax[1][4], ax[2][4])


def _weights(bits, t):
    return [t[a] if b else 1.0 - t[a] for a, b in enumerate(bits)]


def trilinear_forward(vol, idx):
    """Sample ``vol`` (C, H, W, D) at ``idx`` (P, 3); returns (C, P)."""
    C = vol.shape[0]
    flatvol = vol.reshape(C, -1)
    corners, t = _corners(vol.shape, idx)
    out = np.zeros((C, idx.shape[0]), dtype=vol.dtype)
    for bits, flat, valid in corners:
        wx, wy, wz = _weights(bits, t)
        w = np.where(valid, wx * wy * wz, 0.0)
        out += flatvol[:, flat] * w
    return out


def trilinear_backward(vol, idx, gout, want_vol):
    """Adjoint of :func:`trilinear_forward`.

    Returns ``(gvol, gidx)``; ``gvol`` is None unless ``want_vol``.
    """
    C = vol.shape[0]
    flatvol = vol.reshape(C, -1)
    corners, t = _corners(vol.shape, idx)
    gidx = np.zeros(idx.shape, dtype=vol.dtype)
    gvol = np.zeros(flatvol.size, dtype=vol.dtype) if want_vol else None
    nvox = flatvol.shape[1]
    for bits, flat, valid in corners:
        wx, wy, wz = _weights(bits, t)
        sx = 1.0 if bits[0] else -1.0
        sy = 1.0 if bits[1] else -1.0
        sz = 1.0 if bits[2] else -1.0
        # (C, P) products of upstream gradient and corner values
        gv = np.where(valid, (gout * flatvol[:, flat]).sum(axis=0), 0.0)
        gidx[:, 0] += gv * sx * wy * wz
        gidx[:, 1] += gv * wx * sy * wz
        gidx[:, 2] += gv * wx * wy * sz
        if want_vol:
            w = np.where(valid, wx * wy * wz, 0.0)
            for c in range(C):
                gvol[c * nvox:(c + 1) * nvox] += np.bincount(flat, weights=gout[c] * w, minlength=nvox)
    if want_vol:
        gvol = gvol.reshape(vol.shape)
    return gvol, gidx


def nearest_sample(labels, idx):
    """Nearest-neighbour lookup of an integer (H, W, D) map; outside → 0."""
    H, W, D = labels.shape
    r = np.floor(idx + 0.5).astype(np.int64)
    valid = (
        (r[:, 0] >= 0) & (r[:, 0] < H)
        & (r[:, 1] >= 0) & (r[:, 1] < W)
        & (r[:, 2] >= 0) & (r[:, 2] < D)
    )
    out = np.zeros(idx.shape[0], dtype=labels.dtype)
    rv = r[valid]
    out[valid] = labels[rv[:, 0], rv[:, 1], rv[:, 2]]
    return out
