"""Desk-scale training and evaluation protocol on synthetic phantom pairs."""
from dataclasses import dataclass, field, replace

import numpy as np

from .affine import com_initialization
from .loss import LossConfig
from .metrics import evaluate_case
from .model import init_weights, model_forward
from .optim import AdamState, prepare_pair, train
from .phantom import make_pair
from .volume import LabelVolume, Volume3D, warp_affine


@dataclass
class CompactPair:
    """A synthetic pair held as float32 images and uint8 labels."""

    fixed: np.ndarray
    moving: np.ndarray
    fixed_labels: np.ndarray
    moving_labels: np.ndarray
    num_labels: int
    matrix: np.ndarray

    @classmethod
    def from_pair(cls, p):
        return cls(
            p.fixed.data.astype(np.float32), p.moving.data.astype(np.float32),
            p.fixed_labels.labels.astype(np.uint8), p.moving_labels.labels.astype(np.uint8),
            p.fixed_labels.num_labels, p.matrix,
        )

    def volumes(self):
        K = self.num_labels
        return (
            Volume3D(self.fixed.astype(np.float64)), Volume3D(self.moving.astype(np.float64)),
            LabelVolume(self.fixed_labels.astype(np.int64), K), LabelVolume(self.moving_labels.astype(np.int64), K),
        )


def make_pairs(first_seed, count, dims, magnitude):
    return [CompactPair.from_pair(make_pair(dims, first_seed + i, magnitude)) for i in range(count)]


class PreparedPairs:
    """Sequence view that builds each training pair's pyramids on access."""

    def __init__(self, pairs, model_cfg, loss_cfg, semi=False):
        self.pairs, self.model_cfg, self.loss_cfg, self.semi = pairs, model_cfg, loss_cfg, semi

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        F, M, S_F, S_M = self.pairs[i].volumes()
        if self.semi:
            return prepare_pair(F, M, self.model_cfg, self.loss_cfg, S_F, S_M)
        return prepare_pair(F, M, self.model_cfg, self.loss_cfg)


def register_with_model(F, M, state, com_init=False):
    """Model prediction, optionally after a centre-of-mass pre-alignment."""
    if not com_init:
        return model_forward(F, M, state)[0]
    A0 = com_initialization(F, M)
    A1, _ = model_forward(F, warp_affine(M, A0), state)
    return A0 @ A1


def evaluate_model(state, pairs, com_init=False):
    """Per-pair (initial, registered) mean DSC."""
    before, after = [], []
    for i, p in enumerate(pairs):
        F, M, S_F, S_M = p.volumes()
        A = register_with_model(F, M, state, com_init)
        before.append(evaluate_case(S_F, S_M, np.eye(4), f"pair{i}").mean_dsc)
        after.append(evaluate_case(S_F, S_M, A, f"pair{i}").mean_dsc)
    return np.array(before), np.array(after)


@dataclass
class DeskProtocol:
    dims: int = 64
    train_pairs: int = 200
    test_pairs: int = 20
    magnitude: float = 0.3
    steps: int = 2000
    lr: float = 1e-4
    seed: int = 0
    semi: bool = False
    train_seed: int = 10_000
    test_seed: int = 20_000


@dataclass
class ProtocolResult:
    name: str
    initial_dsc: np.ndarray
    final_dsc: np.ndarray
    history: list = field(default_factory=list)

    @property
    def median_initial(self):
        return float(np.median(self.initial_dsc))

    @property
    def median_final(self):
        return float(np.median(self.final_dsc))

    @property
    def median_improvement(self):
        return float(np.median(self.final_dsc - self.initial_dsc))


def run_protocol(model_cfg, protocol, train_set=None, test_set=None, name="", log=None, log_every=100):
    """Train a fresh model under ``protocol`` and score it on the held-out pairs."""
    if model_cfg.input_size != protocol.dims:
        raise ValueError(f"model input {model_cfg.input_size} != protocol dims {protocol.dims}")
    loss_cfg = LossConfig(levels=model_cfg.levels)
    if train_set is None:
        train_set = make_pairs(protocol.train_seed, protocol.train_pairs, protocol.dims, protocol.magnitude)
    if test_set is None:
        test_set = make_pairs(protocol.test_seed, protocol.test_pairs, protocol.dims, protocol.magnitude)
    state = init_weights(model_cfg, seed=protocol.seed)
    history = train(
        PreparedPairs(train_set, model_cfg, loss_cfg, protocol.semi), state, loss_cfg, protocol.steps,
        adam=AdamState(lr=protocol.lr), semi=protocol.semi, seed=protocol.seed, log=log, log_every=log_every,
    )
    before, after = evaluate_model(state, test_set)
    return ProtocolResult(name, before, after, history), state


ABLATIONS = {
    "full": {},
    "non-progressive": {"progressive": False},
    "direct-head": {"head_mode": "direct"},
}


def run_ablation(model_cfg, protocol, variants=("full", "non-progressive", "direct-head"), log=None, log_every=100):
    """Train each variant with shared data and seeds; returns name -> ProtocolResult."""
    train_set = make_pairs(protocol.train_seed, protocol.train_pairs, protocol.dims, protocol.magnitude)
    test_set = make_pairs(protocol.test_seed, protocol.test_pairs, protocol.dims, protocol.magnitude)
    results = {}
    for name in variants:
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation variant {name!r}; choose from {sorted(ABLATIONS)}")
        cfg = replace(model_cfg, **ABLATIONS[name])
        if log is not None:
            print(f"# variant={name}", file=log, flush=True)
        results[name], _ = run_protocol(cfg, protocol, train_set, test_set, name, log, log_every)
    return results
