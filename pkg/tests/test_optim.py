import io

import numpy as np
import pytest

from c2fvit.affine import GeometricParams
from c2fvit.loss import LossConfig
from c2fvit.model import C2FViTConfig, init_weights
from c2fvit.optim import (
    AdamState,
    DivergenceError,
    IterRegConfig,
    adam_step,
    format_log,
    iterative_register,
    loss_and_grads,
    parse_log_line,
    prepare_pair,
    registration_ncc,
    train,
    train_step,
)
from c2fvit.phantom import make_pair, make_phantom


def test_adam_zero_grads_leave_params():
    p = {"w": np.arange(4.0)}
    st = AdamState()
    adam_step(st, p, {"w": np.zeros(4)})
    assert np.array_equal(p["w"], np.arange(4.0)) and st.step == 1


def test_adam_first_step_hand_value():
    p = {"w": np.array([0.0])}
    adam_step(AdamState(), p, {"w": np.array([1.0])})
    assert p["w"][0] == pytest.approx(-1e-4 / (1.0 + 1e-8), abs=1e-18)


def test_adam_matches_recurrence_over_steps():
    rng = np.random.default_rng(0)
    p = {"w": rng.normal(size=5)}
    ref = p["w"].copy()
    m = v = np.zeros(5)
    st = AdamState(lr=0.01)
    for t in range(1, 20):
        g = rng.normal(size=5)
        adam_step(st, p, {"w": g.copy()})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.abs(p["w"] - ref).max() < 1e-14


def test_adam_deterministic():
    rng = np.random.default_rng(1)
    grads = [rng.normal(size=3) for _ in range(10)]
    outs = []
    for _ in range(2):
        p, st = {"w": np.ones(3)}, AdamState()
        for g in grads:
            adam_step(st, p, {"w": g})
        outs.append(p["w"])
    assert np.array_equal(*outs)


def test_adam_rejects_non_finite_without_mutation():
    p, st = {"w": np.ones(2)}, AdamState()
    with pytest.raises(FloatingPointError):
        adam_step(st, p, {"w": np.array([1.0, np.nan])})
    assert st.step == 0 and np.array_equal(p["w"], np.ones(2))
    with pytest.raises(ValueError):
        adam_step(st, p, {"w": np.ones(3)})


def test_train_step_self_pair_at_identity():
    cfg = C2FViTConfig.toy()
    F, _ = make_phantom(32, 0)
    state = init_weights(cfg, 0)
    pair = prepare_pair(F, F, cfg, LossConfig())
    terms, grads, A = loss_and_grads(state, pair, LossConfig())
    assert abs(terms["loss"] + 1.75) < 1e-3
    assert np.array_equal(A, np.eye(4))
    # the first head is zero-initialized, so only its last layer sees the warp gradient
    assert np.abs(grads["s1.head2.w"]).max() < 1e-9


def test_train_step_semi_supervised_combination():
    cfg = C2FViTConfig.toy()
    p = make_pair(32, 1, 0.1)
    lc = LossConfig()
    pair = prepare_pair(p.fixed, p.moving, cfg, lc, p.fixed_labels, p.moving_labels)
    terms = train_step(pair, init_weights(cfg, 0), lc, AdamState(), semi=True)
    assert terms["loss"] == pytest.approx(terms["sim"] + 0.5 * terms["seg"], abs=1e-12)
    assert 0.0 < terms["seg"] <= 1.0


@pytest.mark.slow
def test_training_on_fixed_pair_reduces_loss():
    cfg = C2FViTConfig.toy()
    p = make_pair(32, 2, 0.15)
    lc = LossConfig(levels=2)
    pair = prepare_pair(p.fixed, p.moving, cfg, lc)
    log = io.StringIO()
    hist = train([pair], init_weights(cfg, 0), lc, 200, adam=AdamState(lr=1e-3), log=log, log_every=50)
    assert np.mean(hist[-10:]) < hist[0]
    lines = log.getvalue().splitlines()
    assert len(lines) == 4
    rec = parse_log_line(lines[-1])
    assert rec["step"] == 200 and "loss" in rec and "sim" in rec


def test_log_format_round_trip():
    line = format_log(7, {"loss": -1.25, "sim": -1.5, "seg": 0.5})
    assert line == "step=7 loss=-1.250000 sim=-1.500000 seg=0.500000"
    assert parse_log_line(line) == {"step": 7, "loss": -1.25, "sim": -1.5, "seg": 0.5}


def test_iter_config_validation():
    with pytest.raises(ValueError):
        IterRegConfig(levels=0)
    with pytest.raises(ValueError):
        IterRegConfig(iterations=(10, 10))
    with pytest.raises(ValueError):
        IterRegConfig(iterations=(10, 0, 10))
    with pytest.raises(ValueError):
        IterRegConfig(freeze=(True,) * 5)
    assert IterRegConfig.rigid().freeze == (False,) * 6 + (True,) * 6


def test_iterative_identity_pair_stays_put():
    F, _ = make_phantom(24, 3)
    params, A, trace = iterative_register(F, F, IterRegConfig(levels=2, iterations=(50, 50), lr=(0.01, 0.005)))
    raw_dev = np.abs(params.as_vector() - GeometricParams.identity().as_vector()).max()
    assert raw_dev < 1e-3
    assert len(trace) == 100


def _single(kind, value):
    t, r, s, h = np.zeros(3), np.zeros(3), np.ones(3), np.zeros(3)
    {"t": t, "r": r}[kind][0] = value
    return GeometricParams(t, r, s, h)


def test_iterative_recovers_translation():
    p = make_pair(32, 4, params=_single("t", 0.1))
    params, A, _ = iterative_register(p.fixed, p.moving)
    assert abs(params.t[0] - 0.1) <= 0.01
    assert registration_ncc(p.fixed, p.moving, A) >= 0.99


def test_iterative_recovers_rotation():
    p = make_pair(32, 5, params=_single("r", 0.2))
    params, _, _ = iterative_register(p.fixed, p.moving)
    assert abs(params.r[0] - 0.2) <= 0.02


def test_iterative_rigid_mask_freezes_scale_and_shear():
    p = make_pair(24, 6, 0.1)
    params, _, _ = iterative_register(p.fixed, p.moving, IterRegConfig.rigid(levels=1, iterations=(20,), lr=(0.01,)))
    assert np.array_equal(params.s, np.ones(3)) and np.array_equal(params.h, np.zeros(3))


def test_iterative_deterministic_and_coarse_to_fine():
    p = make_pair(24, 7, 0.15)
    cfg = IterRegConfig(levels=2, iterations=(30, 30), lr=(0.01, 0.005))
    log = io.StringIO()
    a = iterative_register(p.fixed, p.moving, cfg, log=log)
    b = iterative_register(p.fixed, p.moving, cfg)
    assert [x[2] for x in a[2]] == [x[2] for x in b[2]]
    first_level_start = a[2][0][2]
    assert a[2][-1][2] <= first_level_start
    assert log.getvalue().splitlines()[0].startswith("level=1 iter=0 loss=")


def test_iterative_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        iterative_register(np.ones((8, 8, 8)), np.ones((8, 8, 9)))


def test_iterative_divergence_reports_trace():
    F, _ = make_phantom(16, 8)
    with pytest.raises(DivergenceError) as info:
        iterative_register(F, F, IterRegConfig(levels=1, iterations=(5,), lr=(np.nan,)))
    assert len(info.value.trace) >= 1
