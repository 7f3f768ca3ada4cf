"""Registration objectives: windowed NCC, the similarity pyramid and soft Dice."""
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .volume import ImagePyramid, LabelVolume, Volume3D, pyramid_tensors


@dataclass
class LossConfig:
    levels: int = 3
    window: int = 7
    lam: float = 0.5
    eps: float = 1e-5

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


def level_weights(levels):
    """Coarse-to-fine weights 1 / 2**(L - i)."""
    return [1.0 / 2 ** (levels - i) for i in range(1, levels + 1)]


def _data(v):
    if isinstance(v, Volume3D):
        return v.data
    return v


def local_ncc_tensor(a, b, window=7, eps=1e-5):
    """Mean windowed normalized cross-correlation of two tensors.

    Per window: (cov + eps) / sqrt((var_a + eps) (var_b + eps)), where the
    moments are per-voxel averages over the in-grid part of the window.  The
    eps in the numerator makes two identical flat windows score exactly 1.
    """
    a, b = dc.as_tensor(a), dc.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"local_ncc: shapes {a.shape} and {b.shape} differ")
    inv_n = 1.0 / dc.ops.box_sum_array(np.ones(a.shape[-3:], dtype=a.dtype), window)
    ma, mb = dc.box_sum(a, window) * inv_n, dc.box_sum(b, window) * inv_n
    cross = dc.box_sum(a * b, window) * inv_n - ma * mb
    va = dc.box_sum(a * a, window) * inv_n - ma * ma
    vb = dc.box_sum(b * b, window) * inv_n - mb * mb
    ncc = (cross + eps) / dc.sqrt((va + eps) * (vb + eps))
    return dc.mean(ncc)


def local_ncc(a, b, window=7, eps=1e-5):
    a, b = _data(a), _data(b)
    with dc.no_grad():
        return float(local_ncc_tensor(a, b, window, eps).data)


def similarity_pyramid_tensor(F_levels, M_levels, window=7, eps=1e-5):
    """Sum over levels of -w_i * NCC(F_i, M_i), levels ordered coarsest first."""
    if len(F_levels) != len(M_levels):
        raise ValueError(f"pyramids have {len(F_levels)} and {len(M_levels)} levels")
    total = None
    for wt, f, m in zip(level_weights(len(F_levels)), F_levels, M_levels):
        term = local_ncc_tensor(f, m, window, eps) * (-wt)
        total = term if total is None else total + term
    return total


def similarity_pyramid_loss(F_pyr, M_pyr, window=7, eps=1e-5):
    fl = [_data(v) for v in (F_pyr.levels if isinstance(F_pyr, ImagePyramid) else F_pyr)]
    ml = [_data(v) for v in (M_pyr.levels if isinstance(M_pyr, ImagePyramid) else M_pyr)]
    for f, m in zip(fl, ml):
        if np.shape(f) != np.shape(m):
            raise ValueError(f"pyramid level shapes differ: {np.shape(f)} vs {np.shape(m)}")
    with dc.no_grad():
        return float(similarity_pyramid_tensor(fl, ml, window, eps).data)


def dice_loss_tensor(fixed_onehot, moving_soft, eps=1e-5):
    """Mean over channels of 1 - 2|F∩M| / (|F| + |M| + eps) for (K, ...) soft masks."""
    f, m = dc.as_tensor(fixed_onehot), dc.as_tensor(moving_soft)
    if f.shape != m.shape:
        raise ValueError(f"dice_loss: shapes {f.shape} and {m.shape} differ")
    K = f.shape[0]
    axes = tuple(range(1, f.ndim))
    inter = dc.sum(f * m, axis=axes)
    denom = dc.sum(f, axis=axes) + dc.sum(m, axis=axes) + eps
    return dc.mean(1.0 - inter * 2.0 / denom) if K else None


def dice_loss(S_F, S_M, K, eps=1e-5):
    if K < 1:
        raise ValueError("dice_loss needs at least one structure (K >= 1)")
    if S_F.dims != S_M.dims:
        raise ValueError(f"label maps differ in shape: {S_F.dims} vs {S_M.dims}")
    f = LabelVolume(S_F.labels, K).one_hot()
    m = LabelVolume(S_M.labels, K).one_hot()
    with dc.no_grad():
        return float(dice_loss_tensor(f, m, eps).data)


def semi_supervised_loss(sim, seg, lam=0.5):
    return sim + lam * seg


def registration_loss(F_levels, warped_full, cfg, fixed_onehot=None, warped_onehot=None):
    """Similarity pyramid of a full-resolution warped image, plus optional Dice term.

    ``F_levels`` is the precomputed fixed pyramid.  The warped image is
    resampled into the same pyramid after warping.  Returns ``(total, terms)``
    where ``terms`` holds plain floats for logging.
    """
    M_levels = pyramid_tensors(warped_full, cfg.levels)
    sim = similarity_pyramid_tensor(F_levels, M_levels, cfg.window, cfg.eps)
    terms = {"sim": float(sim.data)}
    if fixed_onehot is None:
        return sim, terms
    seg = dice_loss_tensor(fixed_onehot, warped_onehot, cfg.eps)
    terms["seg"] = float(seg.data)
    return semi_supervised_loss(sim, seg, cfg.lam), terms
