"""Volumes, image pyramids, centre of mass and affine resampling.

Coordinates are normalized per axis to [-1, 1]: voxel ``i`` of an ``n``-voxel
axis sits at ``2 i / (n - 1) - 1``.  Axis 0 is x, axis 1 is y, axis 2 is z.
A matrix ``A`` maps output (fixed-domain) coordinates to input
(moving-domain) coordinates: ``out(x) = vol(A x)``.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import diffcore as dc
from . import kernels


@dataclass
class Volume3D:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 2:
            raise ValueError(f"Volume3D needs three axes of at least 2 voxels, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Volume3D intensities must be finite")

    @property
    def dims(self):
        return self.data.shape


@dataclass
class LabelVolume:
    labels: np.ndarray
    num_labels: int = None
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError(f"labels must be integers, got {self.labels.dtype}")
        if self.labels.ndim != 3 or min(self.labels.shape) < 2:
            raise ValueError(f"LabelVolume needs three axes of at least 2 voxels, got {self.labels.shape}")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("label values must be non-negative")
        top = int(self.labels.max()) if self.labels.size else 0
        if self.num_labels is None:
            self.num_labels = top
        elif top > self.num_labels:
            raise ValueError(f"label {top} exceeds num_labels={self.num_labels}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self):
        return self.labels.shape

    def one_hot(self, dtype=np.float64):
        """(K, H, W, D) indicator channels for labels 1..K."""
        ks = np.arange(1, self.num_labels + 1).reshape(-1, 1, 1, 1)
        return (self.labels[None] == ks).astype(dtype)


@dataclass
class ImagePyramid:
    """Levels ordered coarsest first; the last level aliases the source."""

    levels: list = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def as_volume(v):
    return v if isinstance(v, Volume3D) else Volume3D(v)


# ---------------------------------------------------------------- grids


def index_to_normalized(idx, dims):
    dims = np.asarray(dims, dtype=np.float64)
    return 2.0 * np.asarray(idx, dtype=np.float64) / (dims - 1.0) - 1.0


def normalized_to_index(x, dims):
    dims = np.asarray(dims, dtype=np.float64)
    return (np.asarray(x, dtype=np.float64) + 1.0) * (dims - 1.0) / 2.0


@lru_cache(maxsize=32)
def _grid(dims):
    axes = [np.linspace(-1.0, 1.0, n) for n in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    g = np.stack([m.reshape(-1) for m in mesh] + [np.ones(int(np.prod(dims)))], axis=1)
    g.flags.writeable = False
    return g


def homogeneous_grid(dims):
    """(P, 4) normalized voxel coordinates of ``dims`` in row-major order, with a ones column."""
    return _grid(tuple(int(n) for n in dims))


@lru_cache(maxsize=64)
def _interp_matrix(n_in, n_out):
    if n_in == n_out:
        m = np.eye(n_in)
    else:
        m = np.zeros((n_out, n_in))
        u = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        f = np.floor(u)
        t = u - f
        hi = t > 1.0 - kernels._pykernels.SNAP
        t[hi | (t < kernels._pykernels.SNAP)] = 0.0
        f[hi] += 1
        f = f.astype(int)
        rows = np.arange(n_out)
        m[rows, f] += 1.0 - t
        inside = f + 1 < n_in
        m[rows[inside], f[inside] + 1] += t[inside]
    m.flags.writeable = False
    return m


def scaled_dims(dims, factor):
    return tuple(int(np.floor(n * factor + 0.5)) for n in dims)


# ---------------------------------------------------------------- differentiable forms


def resample_to(x, out_dims):
    """Trilinear resampling of a tensor's last three axes onto ``out_dims``."""
    x = dc.as_tensor(x)
    in_dims = x.shape[-3:]
    if tuple(out_dims) == tuple(in_dims):
        return x
    mats = [_interp_matrix(a, b) for a, b in zip(in_dims, out_dims)]
    return dc.resample_axes(x, mats)


def pyramid_tensors(x, levels):
    """Coarse-to-fine list of ``x`` resampled at factors 0.5**(levels-i)."""
    x = dc.as_tensor(x)
    dims = x.shape[-3:]
    out = []
    for i in range(1, levels + 1):
        d = scaled_dims(dims, 0.5 ** (levels - i))
        if min(d) < 2:
            raise ValueError(f"volume {dims} too small for a {levels}-level pyramid")
        out.append(resample_to(x, d))
    return out


def warp_tensor(vol, A, out_dims=None):
    """Differentiable trilinear warp of (H, W, D) or (C, H, W, D) by a 4x4 matrix."""
    vol, A = dc.as_tensor(vol), dc.as_tensor(A)
    if out_dims is None:
        out_dims = vol.shape[-3:]
    grid = homogeneous_grid(out_dims)
    coords = dc.matmul(grid, dc.transpose(A[:3, :]))
    out = dc.grid_sample(vol, coords)
    lead = vol.shape[:-3]
    return dc.reshape(out, tuple(lead) + tuple(out_dims))


# ---------------------------------------------------------------- public operations


def downsample_trilinear(v, factor):
    v = as_volume(v)
    if not 0.0 < factor <= 1.0:
        raise ValueError(f"factor must lie in (0, 1], got {factor}")
    d = scaled_dims(v.dims, factor)
    if min(d) < 2:
        raise ValueError(f"downsampling {v.dims} by {factor} leaves fewer than 2 voxels per axis")
    with dc.no_grad():
        out = resample_to(v.data, d).data
    return Volume3D(np.array(out, copy=True) if out is v.data else out, tuple(s / factor for s in v.spacing))


def build_pyramid(v, levels):
    v = as_volume(v)
    if levels < 1:
        raise ValueError(f"pyramid needs at least one level, got {levels}")
    coarse = scaled_dims(v.dims, 0.5 ** (levels - 1))
    if min(coarse) < 2:
        raise ValueError(f"volume {v.dims} too small for a {levels}-level pyramid")
    out = [downsample_trilinear(v, 0.5 ** (levels - i)) for i in range(1, levels)]
    out.append(v)
    return ImagePyramid(out)


def center_of_mass(v):
    """Intensity-weighted mean position in normalized coordinates."""
    data = as_volume(v).data
    if np.any(data < 0):
        raise ValueError("center_of_mass requires non-negative intensities")
    total = data.sum()
    if total <= 0:
        raise ValueError("center_of_mass undefined for an all-zero volume")
    com = []
    for axis, n in enumerate(data.shape):
        other = tuple(a for a in range(3) if a != axis)
        marginal = data.sum(axis=other)
        com.append(float((marginal * np.linspace(-1.0, 1.0, n)).sum() / total))
    return np.array(com)


def check_affine(A):
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (4, 4):
        raise ValueError(f"affine matrix must be 4x4, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("affine matrix has non-finite entries")
    if not np.array_equal(A[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValueError(f"affine matrix last row must be (0, 0, 0, 1), got {A[3]}")
    return A


def warp_affine(v, A, out_dims=None):
    """Resample ``v`` at ``A x`` for every output voxel ``x``; zero outside."""
    v = as_volume(v)
    A = check_affine(A)
    out_dims = tuple(out_dims) if out_dims is not None else v.dims
    with dc.no_grad():
        out = warp_tensor(v.data, A, out_dims).data
    return Volume3D(out, v.spacing)


def warp_labels(lv, A, out_dims=None):
    """Nearest-neighbour label resampling; outside the grid is background."""
    A = check_affine(A)
    out_dims = tuple(out_dims) if out_dims is not None else lv.dims
    coords = homogeneous_grid(out_dims) @ A[:3].T
    idx = np.ascontiguousarray(normalized_to_index(coords, lv.dims))
    out = kernels.nearest_sample(lv.labels, idx).reshape(out_dims)
    return LabelVolume(out, lv.num_labels, lv.spacing)
