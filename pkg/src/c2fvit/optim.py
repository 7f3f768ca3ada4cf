"""Adam, C2FViT training and the iterative affine optimizer."""
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .affine import compose, compose_tensor, constrain, constrain_tensor, recenter, recenter_tensor, unconstrain
from .loss import local_ncc, registration_loss, similarity_pyramid_tensor
from .model import forward, prepare_inputs
from .volume import LabelVolume, as_volume, center_of_mass, pyramid_tensors, resample_to, scaled_dims, warp_affine, warp_tensor


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One bias-corrected Adam update of ``params`` (a name -> array dict) in place.

    Raises ``FloatingPointError`` without touching anything if a gradient is
    not finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}; step rejected")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------- network training


@dataclass
class PreparedPair:
    """Everything a training or inference step needs, precomputed once per pair."""

    F_levels: list
    M_levels: list
    pivot: np.ndarray
    M_full: np.ndarray
    F_loss_levels: list
    F_onehot: np.ndarray = None
    M_onehot: np.ndarray = None


def prepare_pair(F, M, model_cfg, loss_cfg, S_F=None, S_M=None, dtype=np.float64):
    F, M = as_volume(F), as_volume(M)
    fl, ml, pivot = prepare_inputs(F, M, model_cfg, dtype)
    with dc.no_grad():
        floss = [t.data for t in pyramid_tensors(F.data.astype(dtype), loss_cfg.levels)]
    pair = PreparedPair(fl, ml, pivot, M.data.astype(dtype), floss)
    if S_F is not None and S_M is not None:
        K = max(S_F.num_labels, S_M.num_labels)
        pair.F_onehot = LabelVolume(S_F.labels, K).one_hot(dtype)
        pair.M_onehot = LabelVolume(S_M.labels, K).one_hot(dtype)
    return pair


def loss_and_grads(state, pair, loss_cfg, semi=False):
    leaves = {k: dc.Tensor(v, requires_grad=True) for k, v in state.params.items()}
    mats = forward(leaves, pair.F_levels, pair.M_levels, pair.pivot, state.config)
    A = mats[-1]
    warped = warp_tensor(pair.M_full, A)
    if semi and pair.F_onehot is not None:
        total, terms = registration_loss(pair.F_loss_levels, warped, loss_cfg, pair.F_onehot, warp_tensor(pair.M_onehot, A))
    else:
        total, terms = registration_loss(pair.F_loss_levels, warped, loss_cfg)
    g = dc.backprop(total, wrt=list(leaves.values()))
    grads = {k: g[t] for k, t in leaves.items()}
    terms["loss"] = float(total.data)
    return terms, grads, A.data


def train_step(pair, state, loss_cfg, adam, semi=False):
    """Forward, loss, backprop and one Adam update; returns the pre-step loss terms."""
    terms, grads, _ = loss_and_grads(state, pair, loss_cfg, semi)
    adam_step(adam, state.params, grads)
    return terms


def format_log(step, terms):
    return " ".join([f"step={step}"] + [f"{k}={v:.6f}" for k, v in terms.items()])


def parse_log_line(line):
    out = {}
    for tok in line.split():
        k, v = tok.split("=", 1)
        out[k] = int(v) if k == "step" else float(v)
    return out


def train(pairs, state, loss_cfg, steps, adam=None, semi=False, seed=0, log=None, log_every=1):
    """Train on ``pairs`` (a list of :class:`PreparedPair`) for ``steps`` updates.

    Pairs are visited in a seeded random order, one per step (batch size 1).
    Returns the per-step loss history.
    """
    adam = adam or AdamState()
    rng = np.random.default_rng(seed)
    order = []
    history = []
    for step in range(1, steps + 1):
        if not order:
            order = list(rng.permutation(len(pairs)))
        terms = train_step(pairs[order.pop()], state, loss_cfg, adam, semi)
        history.append(terms["loss"])
        if log is not None and (step % log_every == 0 or step == steps):
            print(format_log(step, terms), file=log, flush=True)
    return history


# ---------------------------------------------------------------- iterative baseline


@dataclass
class IterRegConfig:
    levels: int = 3
    iterations: tuple = (100, 100, 50)
    lr: tuple = (0.01, 0.005, 0.002)
    freeze: tuple = None
    window: int = 7
    eps: float = 1e-5
    grad_floor: float = 1e-10  # components below this are round-off; Adam would blow them up to lr-sized steps

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        self.iterations = tuple(self.iterations)
        self.lr = tuple(self.lr)
        if len(self.iterations) != self.levels or len(self.lr) != self.levels:
            raise ValueError("need one iteration count and one learning rate per level")
        if min(self.iterations) <= 0:
            raise ValueError("iterations must be positive")
        if self.freeze is not None:
            self.freeze = tuple(bool(f) for f in self.freeze)
            if len(self.freeze) != 12:
                raise ValueError("freeze mask needs 12 entries")

    @classmethod
    def rigid(cls, **kw):
        """Translation and rotation only."""
        return cls(freeze=(False,) * 6 + (True,) * 6, **kw)


def iterative_register(F, M, cfg=None, init=None, log=None):
    """Optimize the 12 decoupled parameters by Adam on the similarity pyramid.

    Works coarse to fine, warm-starting each level from the previous one.
    Returns ``(params, matrix, trace)`` where ``trace`` lists
    ``(level, iteration, loss)`` tuples.
    """
    cfg = cfg or IterRegConfig()
    F, M = as_volume(F), as_volume(M)
    if F.dims != M.dims:
        raise ValueError(f"fixed {F.dims} and moving {M.dims} differ in shape")
    pivot = center_of_mass(F)
    raw = np.zeros(12) if init is None else unconstrain(init)
    mask = np.ones(12) if cfg.freeze is None else 1.0 - np.array(cfg.freeze, dtype=float)
    trace = []
    for level in range(1, cfg.levels + 1):
        dims = scaled_dims(F.dims, 0.5 ** (cfg.levels - level))
        with dc.no_grad():
            f_l = resample_to(F.data, dims).data
            m_l = resample_to(M.data, dims).data
            f_pyr = [t.data for t in pyramid_tensors(f_l, level)]
        adam = AdamState(lr=cfg.lr[level - 1])
        params = {"raw": raw}
        for it in range(cfg.iterations[level - 1]):
            leaf = dc.Tensor(params["raw"], requires_grad=True)
            A = recenter_tensor(compose_tensor(constrain_tensor(leaf)), pivot)
            warped = warp_tensor(m_l, A)
            loss = similarity_pyramid_tensor(f_pyr, pyramid_tensors(warped, level), cfg.window, cfg.eps)
            value = float(loss.data)
            trace.append((level, it, value))
            if log is not None:
                print(f"level={level} iter={it} loss={value:.6f}", file=log)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at level {level}, iteration {it}", trace)
            g = dc.backprop(loss, wrt=[leaf])[leaf] * mask
            g[np.abs(g) < cfg.grad_floor] = 0.0
            try:
                adam_step(adam, params, {"raw": g})
            except FloatingPointError as exc:
                raise DivergenceError(str(exc), trace) from exc
        raw = params["raw"]
    p = constrain(raw)
    return p, recenter(compose(p), pivot), trace


def registration_ncc(F, M, A, window=7):
    """Local NCC between ``F`` and ``M`` warped by ``A`` at full resolution."""
    return local_ncc(as_volume(F), warp_affine(M, A), window)
