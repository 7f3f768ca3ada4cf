"""Decoupled affine transformation model.

Twelve geometric parameters (translation t, rotation r, scale s, shear h)
compose to ``A = T @ R @ S @ H`` with ``R = Rx @ Ry @ Rz``.  The tensor forms
(``*_tensor``) are differentiable; the plain forms take and return numpy.
"""
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .volume import center_of_mass

TRANSLATION_BOUND = 1.0
ROTATION_BOUND = np.pi
SCALE_RANGE = (0.5, 1.5)
SHEAR_BOUND = np.pi

# raw -> params: offset + scale * tanh(raw), per slot in (t, r, s, h) order
_OFFSET = np.array([0.0] * 3 + [0.0] * 3 + [1.0] * 3 + [0.0] * 3)
_SCALE = np.array([TRANSLATION_BOUND] * 3 + [ROTATION_BOUND] * 3 + [0.5] * 3 + [SHEAR_BOUND] * 3)


@dataclass
class GeometricParams:
    t: np.ndarray
    r: np.ndarray
    s: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        for name in "trsh":
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be three finite values, got {v}")
            setattr(self, name, v)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3), np.ones(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64).reshape(12)
        return cls(v[0:3], v[3:6], v[6:9], v[9:12])

    def as_vector(self):
        return np.concatenate([self.t, self.r, self.s, self.h])

    def in_bounds(self):
        return bool(
            np.all(np.abs(self.t) <= TRANSLATION_BOUND)
            and np.all(np.abs(self.r) <= ROTATION_BOUND)
            and np.all((self.s >= SCALE_RANGE[0]) & (self.s <= SCALE_RANGE[1]))
            and np.all(np.abs(self.h) <= SHEAR_BOUND)
        )


def _matrix(rows):
    return dc.stack([dc.stack(row) for row in rows])


def elementary_matrix_tensor(kind, p):
    """Elementary 4x4 matrix of one kind; ``p`` is a 3-vector tensor (or a scalar for Rx/Ry/Rz)."""
    p = dc.as_tensor(p)
    if kind == "T":
        tx, ty, tz = p[0], p[1], p[2]
        return _matrix([[1.0, 0.0, 0.0, tx], [0.0, 1.0, 0.0, ty], [0.0, 0.0, 1.0, tz], [0.0, 0.0, 0.0, 1.0]])
    if kind == "S":
        sx, sy, sz = p[0], p[1], p[2]
        return _matrix([[sx, 0.0, 0.0, 0.0], [0.0, sy, 0.0, 0.0], [0.0, 0.0, sz, 0.0], [0.0, 0.0, 0.0, 1.0]])
    if kind == "H":
        hxy, hxz, hyz = p[0], p[1], p[2]
        return _matrix([[1.0, hxy, hxz, 0.0], [0.0, 1.0, hyz, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    if kind in ("Rx", "Ry", "Rz"):
        a = dc.reshape(p, ()) if p.ndim else p
        c, s = dc.cos(a), dc.sin(a)
        if kind == "Rx":
            rows = [[1.0, 0.0, 0.0, 0.0], [0.0, c, s, 0.0], [0.0, -s, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
        elif kind == "Ry":
            rows = [[c, 0.0, -s, 0.0], [0.0, 1.0, 0.0, 0.0], [s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
        else:
            rows = [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
        return _matrix(rows)
    if kind == "R":
        return rotation_tensor(p)
    raise ValueError(f"unknown elementary matrix kind {kind!r}")


def rotation_tensor(r):
    r = dc.as_tensor(r)
    return (
        elementary_matrix_tensor("Rx", r[0])
        @ elementary_matrix_tensor("Ry", r[1])
        @ elementary_matrix_tensor("Rz", r[2])
    )


def elementary_matrix(kind, params):
    """Numpy form of :func:`elementary_matrix_tensor`."""
    p = np.asarray(params, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("elementary matrix parameters must be finite")
    with dc.no_grad():
        return elementary_matrix_tensor(kind, p).data


def compose_tensor(p12):
    """A = T R S H from a 12-vector tensor ordered (t, r, s, h)."""
    p12 = dc.as_tensor(p12)
    T = elementary_matrix_tensor("T", p12[0:3])
    R = rotation_tensor(p12[3:6])
    S = elementary_matrix_tensor("S", p12[6:9])
    H = elementary_matrix_tensor("H", p12[9:12])
    return T @ R @ S @ H


def compose(params):
    if not isinstance(params, GeometricParams):
        params = GeometricParams.from_vector(params)
    if not params.in_bounds():
        raise ValueError(f"parameters outside the constraint box: {params.as_vector()}")
    with dc.no_grad():
        return compose_tensor(params.as_vector()).data


def constrain_tensor(raw):
    raw = dc.as_tensor(raw)
    return dc.tanh(raw) * _SCALE.astype(raw.dtype) + _OFFSET.astype(raw.dtype)


def constrain(raw):
    """Map 12 unbounded reals onto the open constraint box."""
    raw = np.asarray(raw, dtype=np.float64).reshape(12)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw parameters must be finite")
    return GeometricParams.from_vector(_OFFSET + _SCALE * np.tanh(raw))


def unconstrain(params):
    """Inverse of :func:`constrain` for parameters strictly inside the box."""
    v = params.as_vector() if isinstance(params, GeometricParams) else np.asarray(params, dtype=np.float64)
    return np.arctanh((v - _OFFSET) / _SCALE)


def translation(c):
    A = np.eye(4)
    A[:3, 3] = c
    return A


def recenter_tensor(A, c):
    c = np.asarray(c, dtype=np.float64)
    A = dc.as_tensor(A)
    return dc.matmul(dc.matmul(translation(c).astype(A.dtype), A), translation(-c).astype(A.dtype))


def recenter(A, c):
    """T(c) A T(-c): rotation, scale and shear pivot about ``c``."""
    return translation(c) @ np.asarray(A, dtype=np.float64) @ translation(-np.asarray(c, dtype=np.float64))


def com_initialization(F, M):
    """Pure translation moving the CoM of ``M`` onto that of ``F`` under warping."""
    return translation(center_of_mass(M) - center_of_mass(F))


_IDENTITY_BLOCK = np.eye(4)[:3].reshape(12)
_LAST_ROW = np.array([[0.0, 0.0, 0.0, 1.0]])


def direct_matrix_tensor(raw):
    raw = dc.as_tensor(raw)
    top = dc.reshape(raw + _IDENTITY_BLOCK.astype(raw.dtype), (3, 4))
    return dc.concat([top, _LAST_ROW.astype(raw.dtype)], axis=0)


def direct_matrix(raw):
    """Top 3x4 block is identity plus ``raw`` (row-major); last row (0, 0, 0, 1)."""
    raw = np.asarray(raw, dtype=np.float64).reshape(12)
    A = np.eye(4)
    A[:3] += raw.reshape(3, 4)
    return A


def decompose(A):
    """Recover (t, r, s, h) with ``compose(params) == A``.

    Uses the QR factorisation of the linear block (rotation times an upper
    triangular scale-shear factor).  Rotation angles are unique for
    |ry| < pi/2; the linear block must have positive determinant.
    """
    A = np.asarray(A, dtype=np.float64)
    lin = A[:3, :3]
    if np.linalg.det(lin) <= 0:
        raise ValueError("cannot decompose a reflection or singular matrix")
    q, u = np.linalg.qr(lin)
    sign = np.sign(np.diag(u))
    q, u = q * sign, u * sign[:, None]
    s = np.diag(u).copy()
    h = np.array([u[0, 1] / s[0], u[0, 2] / s[0], u[1, 2] / s[1]])
    ry = -np.arcsin(np.clip(q[0, 2], -1.0, 1.0))
    rz = np.arctan2(-q[0, 1], q[0, 0])
    rx = np.arctan2(q[1, 2], q[2, 2])
    return GeometricParams(A[:3, 3].copy(), np.array([rx, ry, rz]), s, h)
