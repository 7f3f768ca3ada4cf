"""Coarse-to-fine vision-transformer affine registration on a small numpy autodiff core."""
import os as _os

# C2FVIT_THREADS caps BLAS threads; it only takes effect before numpy loads.
if _os.environ.get("C2FVIT_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["C2FVIT_THREADS"])

from .affine import GeometricParams, com_initialization, compose, constrain, decompose, recenter  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .loss import LossConfig, dice_loss, local_ncc, similarity_pyramid_loss  # noqa: E402
from .metrics import CaseResult, dice_score, dsc30, evaluate_case, hd95  # noqa: E402
from .model import C2FViTConfig, ModelState, init_weights, model_forward  # noqa: E402
from .optim import AdamState, IterRegConfig, adam_step, iterative_register, train_step  # noqa: E402
from .phantom import make_pair, make_phantom, sample_random_affine  # noqa: E402
from .volume import ImagePyramid, LabelVolume, Volume3D, build_pyramid, warp_affine, warp_labels  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BACKEND", "C2FViTConfig", "CaseResult", "GeometricParams", "ImagePyramid", "IterRegConfig",
    "LabelVolume", "LossConfig", "ModelState", "Volume3D", "adam_step", "build_pyramid", "com_initialization",
    "compose", "constrain", "decompose", "dice_loss", "dice_score", "dsc30", "evaluate_case", "hd95",
    "init_weights", "iterative_register", "local_ncc", "make_pair", "make_phantom", "model_forward", "recenter",
    "sample_random_affine", "similarity_pyramid_loss", "train_step", "warp_affine", "warp_labels",
]
