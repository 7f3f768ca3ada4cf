import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from c2fvit.metrics import CaseResult, boundary, dice_score, dsc30, evaluate_case, hd95
from c2fvit.volume import LabelVolume


def brute_boundary(mask):
    H, W, D = mask.shape
    out = []
    for i, j, k in zip(*np.nonzero(mask)):
        for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + di, j + dj, k + dk
            if not (0 <= a < H and 0 <= b < W and 0 <= c < D) or not mask[a, b, c]:
                out.append((i, j, k))
                break
    return np.array(out, dtype=float)


def brute_hd95(a, b):
    pa, pb = brute_boundary(a), brute_boundary(b)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    pooled = np.concatenate([d.min(axis=1), d.min(axis=0)])
    pooled.sort()
    # linear interpolation between order statistics at rank 0.95 (n - 1)
    pos = 0.95 * (len(pooled) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(pooled) - 1)
    return pooled[lo] + (pos - lo) * (pooled[hi] - pooled[lo]), d


def random_blob(rng, shape):
    m = rng.random(shape) < rng.uniform(0.2, 0.6)
    if not m.any():
        m[tuple(rng.integers(0, n) for n in shape)] = True
    return m


def test_dice_anchors():
    a = np.zeros((10, 10, 10), dtype=int)
    a.reshape(-1)[:100] = 1
    b = np.zeros_like(a)
    b.reshape(-1)[50:150] = 1
    assert dice_score(a, a, 1) == 1.0
    assert dice_score(a, np.roll(a, 500), 1) == 0.0
    assert dice_score(a, b, 1) == 0.5
    assert dice_score(np.zeros_like(a), np.zeros_like(a), 1) == 1.0
    assert dice_score(a, np.zeros_like(a), 1) == 0.0


def test_dice_dims_mismatch():
    with pytest.raises(ValueError):
        dice_score(np.zeros((3, 3, 3)), np.zeros((3, 3, 4)), 1)


def test_dice_symmetric_and_permutation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.integers(0, 3, (6, 7, 8)), rng.integers(0, 3, (6, 7, 8))
        perm = rng.permutation(a.size)
        pa, pb = a.reshape(-1)[perm].reshape(a.shape), b.reshape(-1)[perm].reshape(b.shape)
        for k in (1, 2):
            assert dice_score(a, b, k) == dice_score(b, a, k) == dice_score(pa, pb, k)


def test_dsc30_examples():
    assert dsc30([0.7] * 7) == pytest.approx(0.7)
    assert dsc30([0.1 * i for i in range(1, 11)]) == pytest.approx(0.2)
    assert dsc30([0.5]) == 0.5
    with pytest.raises(ValueError):
        dsc30([])


def test_dsc30_matches_definition_for_all_small_n():
    rng = np.random.default_rng(1)
    for n in range(1, 41):
        scores = rng.random(n)
        k = -(-3 * n // 10)  # ceil(0.3 n) in exact integer arithmetic
        assert dsc30(scores) == pytest.approx(np.sort(scores)[:k].mean(), abs=1e-15)
        assert dsc30(scores) <= scores.mean() + 1e-15


def test_dsc30_enumerated_lists():
    values = [0.2, 0.5, 0.9]
    for n in range(1, 6):
        for combo in itertools.product(values, repeat=n):
            k = -(-3 * n // 10)
            assert dsc30(list(combo)) == pytest.approx(np.mean(sorted(combo)[:k]), abs=1e-15)


def test_boundary_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(10):
        m = random_blob(rng, (6, 7, 5))
        got = np.argwhere(boundary(m)).astype(float)
        assert np.array_equal(got, brute_boundary(m))


def test_hd95_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        shape = tuple(rng.integers(3, 13, 3))
        a, b = random_blob(rng, shape), random_blob(rng, shape)
        expected, d = brute_hd95(a, b)
        got = hd95(a.astype(int), b.astype(int), 1)
        assert abs(got - expected) < 1e-9
        exact = max(d.min(axis=1).max(), d.min(axis=0).max())
        assert got <= exact + 1e-12


def test_hd95_identical_and_shifted_cube():
    a = np.zeros((12, 12, 12), dtype=int)
    a[3:7, 3:7, 3:7] = 1
    assert hd95(a, a, 1) == 0.0
    b = np.roll(a, 1, axis=0)
    assert hd95(a, b, 1) == pytest.approx(1.0)


def test_hd95_empty_is_nan_and_excluded():
    a = np.zeros((5, 5, 5), dtype=int)
    a[1:3, 1:3, 1:3] = 1
    assert np.isnan(hd95(a, np.zeros_like(a), 1))
    r = CaseResult("x", [1.0, 0.0], [2.0, float("nan")])
    assert r.mean_hd95 == 2.0
    assert r.mean_dsc == 0.5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_hd95_nonnegative_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = random_blob(rng, (5, 5, 5)), random_blob(rng, (5, 5, 5))
    h = hd95(a.astype(int), b.astype(int), 1)
    assert 0.0 <= h <= np.sqrt(3 * 16) + 1e-12


def test_evaluate_case_identity_and_integer_shift():
    lab = np.zeros((16, 16, 16), dtype=np.int64)
    lab[3:8, 4:9, 5:10] = 1
    lab[9:13, 9:13, 2:6] = 2
    F = LabelVolume(lab)
    r = evaluate_case(F, F, np.eye(4))
    assert r.dsc == [1.0, 1.0] and r.hd95 == [0.0, 0.0]
    # moving labels shifted by +2 voxels along x; A samples at x + 2 voxels
    M = LabelVolume(np.roll(lab, 2, axis=0))
    A = np.eye(4)
    A[0, 3] = 2 * 2.0 / 15
    r = evaluate_case(F, M, A, case_id="shift")
    assert r.dsc == [1.0, 1.0]
    assert r.case_id == "shift"
