import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fskws import losses as L
from fskws import tensor as T
from fskws.tensor import Tape, Tensor

M = math.radians(28.6)


def t64(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def ref_triplet(a, p, n, margin):
    out = []
    for ai, pi, ni in zip(a, p, n):
        ua, up, un = ai / np.linalg.norm(ai), pi / np.linalg.norm(pi), ni / np.linalg.norm(ni)
        out.append(max(0.0, float(np.sum((ua - up) ** 2) - np.sum((ua - un) ** 2)) + margin))
    return sum(out) / len(out)


def ref_scaf(e, labels, centers, m, s):
    """Per-sample loop over classes and subcenters."""
    eps = 1e-7
    total = 0.0
    for x, y in zip(e, labels):
        xh = x / np.linalg.norm(x)
        logits = []
        for j in range(centers.shape[0]):
            cos = max(float(xh @ centers[j, k]) for k in range(centers.shape[1]))
            cos = min(max(cos, -1 + eps), 1 - eps)
            if j == y:
                if cos > math.cos(math.pi - m):
                    cos = cos * math.cos(m) - math.sqrt(1 - cos * cos) * math.sin(m)
                else:
                    cos = cos - m * math.sin(m)
            logits.append(s * cos)
        top = max(logits)
        lse = top + math.log(sum(math.exp(v - top) for v in logits))
        total += lse - logits[y]
    return total / len(labels)


def test_triplet_closed_forms():
    a = t64([[1.0, 0.0]])
    assert float(L.triplet_loss(a, a, t64([[0.0, 3.0]])).data) == 0.0
    assert float(L.triplet_loss(a, a, a).data) == pytest.approx(0.5, abs=1e-12)


def test_triplet_matches_straight_line():
    rng = np.random.default_rng(0)
    a, p, n = (rng.normal(size=(16, 8)) for _ in range(3))
    assert float(L.triplet_loss(t64(a), t64(p), t64(n)).data) == pytest.approx(ref_triplet(a, p, n, 0.5), abs=1e-6)


def test_triplet_rejects_zero_and_misaligned():
    with pytest.raises(ValueError, match="zero-norm"):
        L.triplet_loss(t64([[0.0, 0.0]]), t64([[1.0, 0.0]]), t64([[0.0, 1.0]]))
    with pytest.raises(ValueError, match="misaligned"):
        L.triplet_loss(t64(np.ones((2, 3))), t64(np.ones((3, 3))), t64(np.ones((2, 3))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_triplet_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    a, p, n = (rng.normal(size=(6, 5)) for _ in range(3))
    c = rng.uniform(0.01, 100, size=(3, 6, 1))
    base = float(L.triplet_loss(t64(a), t64(p), t64(n)).data)
    scaled = float(L.triplet_loss(t64(a * c[0]), t64(p * c[1]), t64(n * c[2])).data)
    assert scaled == pytest.approx(base, abs=1e-6)


def test_scaf_matches_straight_line_c5_k3_e8():
    rng = np.random.default_rng(1)
    e = rng.normal(size=(10, 8))
    labels = rng.integers(0, 5, size=10)
    centers = L.init_subcenters(5, 3, 8, rng).astype(np.float64)
    got = float(L.scaf_loss(t64(e), labels, t64(centers), M, 32.0).data)
    assert got == pytest.approx(ref_scaf(e, labels, centers, M, 32.0), abs=1e-6)


def test_scaf_fallback_branch_matches_reference():
    # true class pointing away: theta + m > pi takes the linear fallback
    centers = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    e = np.array([[-1.0, 0.01]])
    got = float(L.scaf_loss(t64(e), np.array([0]), t64(centers), M, 4.0).data)
    assert got == pytest.approx(ref_scaf(e, [0], centers, M, 4.0), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6), st.integers(2, 9))
def test_scaf_k1_is_arcface(seed, c, e_dim):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(7, e_dim))
    labels = rng.integers(0, c, size=7)
    w = unit(rng.normal(size=(c, e_dim)))
    a = float(L.arcface_loss(t64(e), labels, t64(w), M, 32.0).data)
    s = float(L.scaf_loss(t64(e), labels, t64(w[:, None, :]), M, 32.0).data)
    assert abs(a - s) <= 1e-12


def test_scaf_m0_s1_is_cross_entropy_over_cosines():
    rng = np.random.default_rng(2)
    e = rng.normal(size=(9, 6))
    labels = rng.integers(0, 4, size=9)
    centers = L.init_subcenters(4, 3, 6, rng).astype(np.float64)
    cos = (unit(e) @ centers.reshape(12, 6).T).reshape(9, 4, 3).max(axis=2)
    ce = np.mean(np.log(np.exp(cos).sum(axis=1)) - cos[np.arange(9), labels])
    assert float(L.scaf_loss(t64(e), labels, t64(centers), 0.0, 1.0).data) == pytest.approx(ce, abs=1e-6)


def test_scaf_orthogonal_closed_form():
    c = 4
    centers = np.eye(c)[:, None, :]
    e = np.eye(c)
    got = float(L.scaf_loss(t64(e), np.arange(c), t64(centers), 0.0, 1.0).data)
    assert got == pytest.approx(-math.log(math.e / (math.e + (c - 1))), abs=1e-6)


def test_scaf_decreases_as_true_center_rotates_toward_sample():
    x = np.array([[1.0, 0.0, 0.0]])
    other = np.array([0.0, 0.0, 1.0])
    start = np.array([0.0, 1.0, 0.0])
    values = []
    for a in np.linspace(0, 1, 6):
        true = unit((1 - a) * start + a * x[0])
        centers = np.stack([true, other])[:, None, :]
        values.append(float(L.scaf_loss(t64(x), np.array([0]), t64(centers), M, 32.0).data))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_scaf_label_range_checked():
    with pytest.raises(ValueError, match="labels"):
        L.scaf_loss(t64(np.ones((1, 2))), np.array([3]), t64(np.ones((2, 1, 2))))


def test_subcenter_ties_go_to_lowest_index():
    centers = T.Tensor(np.array([[[1.0, 0.0], [1.0, 0.0]]]), requires_grad=True)
    e = t64([[1.0, 0.5]])
    with Tape() as tape:
        loss = T.sum(L.subcenter_cosines(e, centers))
    tape.backward(loss)
    assert np.any(centers.grad[0, 0] != 0) and np.all(centers.grad[0, 1] == 0)


def test_centers_renormalized():
    c = Tensor(np.random.default_rng(0).normal(size=(3, 2, 4)) * 5)
    L.renormalize_centers(c)
    np.testing.assert_allclose(np.linalg.norm(c.data, axis=-1), 1.0, atol=1e-12)


def test_kd_mse_closed_forms_and_reference():
    rng = np.random.default_rng(3)
    t = rng.normal(size=(5, 7))
    assert float(L.kd_mse(t64(t), t64(t)).data) == 0.0
    assert float(L.kd_mse(t64(t + 0.3), t64(t)).data) == pytest.approx(0.09, abs=1e-12)
    s = rng.normal(size=(5, 7))
    ref = sum((s[i, j] - t[i, j]) ** 2 for i in range(5) for j in range(7)) / 35
    assert float(L.kd_mse(t64(s), t64(t)).data) == pytest.approx(ref, abs=1e-7)
    with pytest.raises(ValueError, match="mse"):
        L.kd_mse(t64(s), t64(t[:, :3]))


def test_combined_loss_arithmetic():
    kd = t64(1.0)
    assert L.combined_loss(kd, t64(7.0), 0.0) is kd
    assert float(L.combined_loss(kd, t64(2.0), 0.03).data) == pytest.approx(1.06, abs=1e-12)
    assert float(L.combined_loss(t64(0.0), t64(10.0), 0.0003).data) == pytest.approx(0.003, abs=1e-12)
    with pytest.raises(ValueError, match="lambda"):
        L.combined_loss(kd, kd, -0.1)


def test_default_lambdas():
    assert L.LossConfig("kd").lam == 0.0
    assert L.LossConfig("kd+triplet").lam == 0.03
    assert L.LossConfig("kd+scaf").lam == 0.0003
    assert L.LossConfig("kd+scaf", lam=0.5).lam == 0.5
    assert L.LossConfig("scaf").scaf_margin == pytest.approx(0.4992, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(6, 4))
    labels = rng.integers(0, 3, size=6)
    c = L.init_subcenters(3, 3, 4, rng).astype(np.float64)
    assert float(L.scaf_loss(t64(e), labels, t64(c)).data) >= 0
    assert float(L.triplet_loss(t64(e[:2]), t64(e[2:4]), t64(e[4:])).data) >= 0
    assert float(L.kd_mse(t64(e), t64(e[::-1])).data) >= 0
