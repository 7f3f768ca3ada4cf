"""Coarse-to-fine vision transformer for affine registration.

Each of the L stages embeds the concatenated (fixed, warped moving) pair at
its pyramid resolution with an overlapping strided convolution, runs a stack
of normalization-free encoder blocks (multi-head self-attention followed by
a feed-forward layer with a depth-wise 3x3x3 convolution), and regresses 12
raw transform values from the mean token.  Raw values accumulate across
stages; stage ``i`` warps its moving image with the transform of stage
``i - 1``.
"""
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .affine import compose_tensor, constrain_tensor, direct_matrix_tensor, recenter_tensor
from .volume import as_volume, center_of_mass, pyramid_tensors, scaled_dims, warp_tensor


POS_EMBED_KINDS = ("none", "learned", "sincos")
INIT_SCHEMES = ("fixed", "fan_in")


@dataclass
class C2FViTConfig:
    levels: int = 3
    blocks: int = 4
    dim: int = 256
    heads: int = 2
    token_grid: int = 16
    mlp_dim: int = 512
    input_size: int = 128
    head_mode: str = "decoupled"
    progressive: bool = True
    pos_embed: str = "none"
    init_scheme: str = "fixed"

    def __post_init__(self):
        if self.levels < 1 or self.blocks < 0:
            raise ValueError("need levels >= 1 and blocks >= 0")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.head_mode not in ("decoupled", "direct"):
            raise ValueError(f"head_mode must be 'decoupled' or 'direct', got {self.head_mode!r}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}, got {self.init_scheme!r}")
        if self.pos_embed not in POS_EMBED_KINDS:
            raise ValueError(f"pos_embed must be one of {POS_EMBED_KINDS}, got {self.pos_embed!r}")
        for dims in self.stage_dims():
            if dims[0] % self.token_grid:
                raise ValueError(f"stage input {dims[0]} not divisible by token grid {self.token_grid}")

    @property
    def tokens(self):
        return self.token_grid**3

    def stage_dims(self):
        full = (self.input_size,) * 3
        return [scaled_dims(full, 0.5 ** (self.levels - i)) for i in range(1, self.levels + 1)]

    def stage_geometry(self, i):
        """(stride, kernel, padding) of the patch embedding at stage ``i`` (0-based)."""
        s = self.stage_dims()[i][0] // self.token_grid
        k = 2 * s - 1
        return s, k, k // 2

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def toy(cls, **kw):
        base = dict(levels=2, blocks=1, dim=16, heads=2, token_grid=4, mlp_dim=32, input_size=32)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, **kw):
        base = dict(levels=3, blocks=2, dim=32, heads=2, token_grid=4, mlp_dim=64, input_size=64)
        base.update(kw)
        return cls(**base)


def param_shapes(cfg):
    d, m = cfg.dim, cfg.mlp_dim
    shapes = {}
    for i in range(cfg.levels):
        _, k, _ = cfg.stage_geometry(i)
        shapes[f"s{i}.embed.w"] = (d, 2, k, k, k)
        shapes[f"s{i}.embed.b"] = (d,)
        if cfg.pos_embed == "learned":
            shapes[f"s{i}.pos"] = (cfg.tokens, d)
        for j in range(cfg.blocks):
            p = f"s{i}.b{j}."
            for name in ("wq", "wk", "wv", "wo"):
                shapes[p + name] = (d, d)
            shapes[p + "ff1.w"] = (d, m)
            shapes[p + "ff1.b"] = (m,)
            shapes[p + "dw.w"] = (m, 3, 3, 3)
            shapes[p + "dw.b"] = (m,)
            shapes[p + "ff2.w"] = (m, d)
            shapes[p + "ff2.b"] = (d,)
        shapes[f"s{i}.head1.w"] = (d, d)
        shapes[f"s{i}.head1.b"] = (d,)
        shapes[f"s{i}.head2.w"] = (d, 12)
        shapes[f"s{i}.head2.b"] = (12,)
    return shapes


class ModelState:
    """Named weight arrays of a C2FViT plus its configuration."""

    def __init__(self, config, params):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) ^ set(params))
            raise ValueError(f"parameter set does not match config: {missing[:5]}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != {shape}")
        self.config = config
        self.params = {name: params[name] for name in expected}

    def copy(self):
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype):
        return ModelState(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def num_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    def save(self, path, extra=None):
        """Write an ``.npz`` checkpoint with the config embedded as JSON."""
        meta = {"config": asdict(self.config), "format": "c2fvit-checkpoint/1"}
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        for k, v in (extra or {}).items():
            arrays[f"extra/{k}"] = v
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path, with_extra=False):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            cfg = C2FViTConfig(**meta["config"])
            params = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
            extra = {k[6:]: z[k] for k in z.files if k.startswith("extra/")}
        state = cls(cfg, params)
        return (state, extra) if with_extra else state


def _trunc_normal(rng, shape, std):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _fan_in(name, shape):
    if name.endswith(".pos"):
        return None
    if len(shape) == 2:
        return shape[0]
    return int(np.prod(shape[1:]))


def init_weights(config, seed=0):
    """Truncated-normal weights, zero biases, zero final head layer.

    The ``fixed`` scheme uses a standard deviation of 0.02 everywhere;
    ``fan_in`` uses 1/sqrt(fan_in) so activations keep unit scale through
    the normalization-free stack.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or ".head2." in name:
            params[name] = np.zeros(shape)
            continue
        fan = _fan_in(name, shape)
        std = 0.02 if config.init_scheme == "fixed" or fan is None else 1.0 / np.sqrt(fan)
        params[name] = _trunc_normal(rng, shape, std)
    return ModelState(config, params)


# ---------------------------------------------------------------- layers


def sincos_position_table(grid, dim):
    """Fixed (grid**3, dim) table of sines and cosines of each axis coordinate."""
    per_axis = dim // 6
    out = np.zeros((grid, grid, grid, dim))
    if per_axis == 0:
        return out.reshape(grid**3, dim)
    pos = (np.arange(grid) + 0.5) / grid
    freqs = np.pi * 2.0 ** np.arange(per_axis)
    for axis in range(3):
        shape = [1, 1, 1, per_axis]
        shape[axis] = grid
        ang = (pos[:, None] * freqs[None, :]).reshape(shape)
        base = 2 * per_axis * axis
        out[..., base:base + per_axis] = np.sin(ang)
        out[..., base + per_axis:base + 2 * per_axis] = np.cos(ang)
    return out.reshape(grid**3, dim)


def conv_patch_embed(stage_input, w, b, stride, padding):
    """(2, H, W, D) stage input -> (N, d) token matrix."""
    z = dc.conv3d(stage_input, w, b, stride, padding)
    n = z.shape[0] * z.shape[1] * z.shape[2]
    return dc.reshape(z, (n, z.shape[3]))


def multi_head_attention(Z, wq, wk, wv, wo, heads):
    Z = dc.as_tensor(Z)
    N, d = Z.shape
    if d % heads:
        raise ValueError(f"multi_head_attention: dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x):
        return dc.transpose(dc.reshape(x, (N, heads, dh)), (1, 0, 2))

    q, k, v = split(Z @ wq), split(Z @ wk), split(Z @ wv)
    scores = dc.matmul(q, dc.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    attended = dc.matmul(dc.softmax(scores), v)
    merged = dc.reshape(dc.transpose(attended, (1, 0, 2)), (N, d))
    return merged @ wo


def conv_feed_forward(Z, w1, b1, dw, dwb, w2, b2, grid):
    Z = dc.as_tensor(Z)
    N = Z.shape[0]
    if grid**3 != N:
        raise ValueError(f"conv_feed_forward: {N} tokens do not form a {grid}^3 grid")
    h = Z @ w1 + b1
    h = dc.reshape(h, (grid, grid, grid, h.shape[1]))
    h = dc.relu(dc.depthwise_conv3d(h, dw, dwb))
    return dc.reshape(h, (N, h.shape[3])) @ w2 + b2


def encoder_block(Z, p, prefix, heads, grid):
    Z = Z + multi_head_attention(Z, p[prefix + "wq"], p[prefix + "wk"], p[prefix + "wv"], p[prefix + "wo"], heads)
    ff = conv_feed_forward(
        Z, p[prefix + "ff1.w"], p[prefix + "ff1.b"], p[prefix + "dw.w"], p[prefix + "dw.b"],
        p[prefix + "ff2.w"], p[prefix + "ff2.b"], grid,
    )
    return Z + ff


def classification_head(Z, w1, b1, w2, b2):
    """Mean token -> dense + tanh -> dense to 12 raw values."""
    pooled = dc.reshape(dc.mean(Z, axis=0), (1, Z.shape[1]))
    hidden = dc.tanh(pooled @ w1 + b1)
    return dc.reshape(hidden @ w2 + b2, (12,))


def raw_to_matrix(raw, head_mode, pivot):
    if head_mode == "decoupled":
        A = compose_tensor(constrain_tensor(raw))
    else:
        A = direct_matrix_tensor(raw)
    return recenter_tensor(A, pivot)


# ---------------------------------------------------------------- forward


def forward(params, F_levels, M_levels, pivot, config):
    """Run all stages on precomputed pyramids; returns per-stage matrix tensors.

    ``params`` maps names to tensors (or arrays); pyramid levels are ordered
    coarsest first and must match ``config.stage_dims()``.
    """
    p = {k: dc.as_tensor(v) for k, v in params.items()}
    mats = []
    tokens = None
    raw = None
    A = None
    for i in range(config.levels):
        f_i, m_i = dc.as_tensor(F_levels[i]), dc.as_tensor(M_levels[i])
        if f_i.shape != tuple(config.stage_dims()[i]) or m_i.shape != f_i.shape:
            raise ValueError(f"stage {i}: inputs {f_i.shape}/{m_i.shape} != {config.stage_dims()[i]}")
        moving = warp_tensor(m_i, A) if (config.progressive and A is not None) else m_i
        stage_in = dc.stack([f_i, moving])
        s, _, pad = config.stage_geometry(i)
        z = conv_patch_embed(stage_in, p[f"s{i}.embed.w"], p[f"s{i}.embed.b"], s, pad)
        if config.pos_embed == "learned":
            z = z + p[f"s{i}.pos"]
        elif config.pos_embed == "sincos":
            z = z + sincos_position_table(config.token_grid, config.dim)
        tokens = z if tokens is None else z + tokens
        for j in range(config.blocks):
            tokens = encoder_block(tokens, p, f"s{i}.b{j}.", config.heads, config.token_grid)
        head = classification_head(
            tokens, p[f"s{i}.head1.w"], p[f"s{i}.head1.b"], p[f"s{i}.head2.w"], p[f"s{i}.head2.b"]
        )
        raw = head if raw is None else raw + head
        A = raw_to_matrix(raw, config.head_mode, pivot)
        mats.append(A)
    return mats


def prepare_inputs(F, M, config, dtype=np.float64):
    """Pyramids of both images and the fixed-image pivot."""
    F, M = as_volume(F), as_volume(M)
    full = (config.input_size,) * 3
    if F.dims != full or M.dims != full:
        raise ValueError(f"inputs {F.dims}/{M.dims} do not match configured size {full}")
    with dc.no_grad():
        fl = [t.data for t in pyramid_tensors(F.data.astype(dtype), config.levels)]
        ml = [t.data for t in pyramid_tensors(M.data.astype(dtype), config.levels)]
    return fl, ml, center_of_mass(F)


def model_forward(F, M, state, config=None):
    """Predict the affine matrix registering ``M`` to ``F``.

    Returns ``(A_final, per_stage)`` as numpy 4x4 arrays.
    """
    config = config or state.config
    fl, ml, pivot = prepare_inputs(F, M, config)
    with dc.no_grad():
        mats = forward(state.params, fl, ml, pivot, config)
    per_stage = [m.data.copy() for m in mats]
    return per_stage[-1], per_stage
