"""Segmentation overlap and surface-distance measures."""
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, warp_labels

_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def _labels(x):
    return x.labels if isinstance(x, LabelVolume) else np.asarray(x)


def _masks(S_F, S_M, label):
    a, b = _labels(S_F), _labels(S_M)
    if a.shape != b.shape:
        raise ValueError(f"label maps differ in shape: {a.shape} vs {b.shape}")
    return a == label, b == label


def dice_score(S_F, S_M, label):
    """2|A∩B| / (|A| + |B|); 1.0 when both are empty."""
    a, b = _masks(S_F, S_M, label)
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb)


def dsc30(case_scores):
    """Mean of the ceil(0.3 n) lowest scores."""
    scores = np.sort(np.asarray(case_scores, dtype=np.float64).reshape(-1))
    if scores.size == 0:
        raise ValueError("dsc30 needs at least one score")
    k = (3 * scores.size + 9) // 10  # integer ceil avoids 0.3 * 10 > 3 in floating point
    return float(scores[:k].mean())


def boundary(mask):
    """Foreground voxels with a 6-neighbour in the background (grid exterior counts)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)


def surface_distances(a, b):
    """Pooled directed boundary-to-boundary distances (voxels) of two masks."""
    ba, bb = boundary(a), boundary(b)
    dist_to_b = ndimage.distance_transform_edt(~bb)
    dist_to_a = ndimage.distance_transform_edt(~ba)
    return np.concatenate([dist_to_b[ba], dist_to_a[bb]])


def hd95(S_F, S_M, label):
    """95th percentile of pooled surface distances; NaN if either structure is empty."""
    a, b = _masks(S_F, S_M, label)
    if not a.any() or not b.any():
        return float("nan")
    return float(np.percentile(surface_distances(a, b), 95))


@dataclass
class CaseResult:
    case_id: str
    dsc: list = field(default_factory=list)
    hd95: list = field(default_factory=list)

    @property
    def mean_dsc(self):
        return float(np.mean(self.dsc)) if self.dsc else float("nan")

    @property
    def mean_hd95(self):
        vals = [h for h in self.hd95 if np.isfinite(h)]
        return float(np.mean(vals)) if vals else float("nan")


def evaluate_case(F_labels, M_labels, A, case_id="", num_labels=None):
    """Propagate the moving labels through ``A`` and score them against the fixed labels."""
    warped = warp_labels(M_labels, A, F_labels.dims)
    K = num_labels or max(F_labels.num_labels, M_labels.num_labels)
    res = CaseResult(case_id)
    for k in range(1, K + 1):
        res.dsc.append(dice_score(F_labels, warped, k))
        res.hd95.append(hd95(F_labels, warped, k))
    return res
