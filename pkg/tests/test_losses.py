import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import numeric_grad, rel_error
from oslnet.linalg import softmax
from oslnet.losses import (ClassCenters, LabelError, LossKind, center_loss, cross_entropy, focal,
                           large_margin_backward, large_margin_logits, psi, truncated_lq)


def _batch(r, k=4, n=6):
    return r.standard_normal((k, n)) * 2, r.integers(0, k, n)


def test_cross_entropy_values():
    assert cross_entropy(np.array([[1.0], [0.0]]), [0])[0] == 0.0
    for k in (2, 5, 10):
        assert cross_entropy(np.full((k, 3), 1 / k), [0, 1, 1])[0] == pytest.approx(math.log(k), abs=1e-15)


def test_label_out_of_range():
    with pytest.raises(LabelError):
        cross_entropy(np.full((3, 1), 1 / 3), [3])


def test_focal_values():
    assert focal(np.array([[1.0], [0.0]]), [0], 2.0)[0] == 0.0
    loss, _ = focal(np.array([[0.5], [0.5]]), [0], 2.0)
    assert loss == pytest.approx(0.25 * math.log(2), abs=1e-15)
    assert loss == pytest.approx(0.173287, abs=1e-6)


def test_focal_gamma_zero_is_cross_entropy():
    r = np.random.default_rng(0)
    for _ in range(100):
        z, y = _batch(r)
        p = softmax(z)
        fl, fg = focal(p, y, 0.0)
        ce, cg = cross_entropy(p, y)
        assert abs(fl - ce) < 1e-12
        assert np.max(np.abs(fg - cg)) < 1e-12


def test_truncated_lq_values():
    assert truncated_lq(np.array([[1.0], [0.0]]), [0], 0.5, 0.1)[0] == 0.0
    assert truncated_lq(np.array([[0.25], [0.75]]), [0], 0.5, 0.1)[0] == pytest.approx(1.0, abs=1e-15)


def test_truncated_lq_clamp_zero_gradient():
    p = np.array([[0.05, 0.6], [0.95, 0.4]])
    _, g = truncated_lq(p, [0, 0], 0.5, 0.1)
    assert np.all(g[:, 0] == 0.0)
    assert np.any(g[:, 1] != 0.0)


LOGIT_LOSSES = {
    "cross_entropy": lambda p, y: cross_entropy(p, y),
    "focal": lambda p, y: focal(p, y, 2.0),
    "focal_half": lambda p, y: focal(p, y, 0.5),
    "truncated_lq": lambda p, y: truncated_lq(p, y, 0.5, 1e-4),
}


@pytest.mark.parametrize("name", sorted(LOGIT_LOSSES))
@pytest.mark.parametrize("seed", range(20))
def test_logit_gradients_finite_differences(name, seed):
    r = np.random.default_rng(seed)
    z, y = _batch(r)
    loss = LOGIT_LOSSES[name]
    _, g = loss(softmax(z), y)
    assert rel_error(numeric_grad(lambda: loss(softmax(z), y)[0], z), g) < 1e-5


def test_center_loss_trivial_cases():
    r = np.random.default_rng(0)
    f, y = r.standard_normal((3, 5)), np.array([0, 1, 1, 2, 0])
    c = ClassCenters(r.standard_normal((3, 3)))
    loss, grad, _ = center_loss(f, y, c, 0.0)
    assert loss == 0.0 and not grad.any()
    on_center = ClassCenters(f[:, [0, 1, 3]].copy())
    f2 = on_center.centers[:, [0, 1, 1, 2, 0]]
    assert center_loss(f2, y, on_center, 1.0)[0] == 0.0


@pytest.mark.parametrize("lam", [1e-10, 0.5])
@pytest.mark.parametrize("seed", range(20))
def test_center_loss_finite_differences(lam, seed):
    r = np.random.default_rng(seed)
    f, y = r.standard_normal((4, 6)), r.integers(0, 3, 6)
    c = ClassCenters(r.standard_normal((4, 3)))
    _, grad, _ = center_loss(f, y, c, lam)
    # lam=1e-10 puts the loss near 1e-10; scale so the difference quotient is not pure rounding
    scale = 1.0 / lam
    fd = numeric_grad(lambda: scale * center_loss(f, y, c, lam)[0], f)
    assert rel_error(fd, scale * grad) < 1e-5


def test_center_update_moves_toward_batch_mean():
    f = np.array([[2.0, 4.0, 10.0]])
    c = ClassCenters.zeros(1, 2, alpha=0.5)
    _, _, update = center_loss(f, [0, 0, 1], c, 1.0)
    c.update(update)
    assert c.centers.tolist() == [[1.5, 5.0]]


def test_psi_values_and_bound():
    assert psi(1.0) == 1.0
    assert psi(0.0) == -1.0
    assert psi(-1.0) == -3.0
    cos = np.linspace(-1, 1, 1000)
    assert np.all(psi(cos) <= cos + 1e-15)
    # monotone decreasing in the angle
    assert np.all(np.diff(psi(cos)) >= 0)


def test_large_margin_parallel_feature_unchanged():
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    x = np.array([[3.0], [0.0]])
    np.testing.assert_allclose(large_margin_logits(w, x, [0], lam_anneal=0.0), w.T @ x, atol=1e-15)


def test_large_margin_orthogonal_feature():
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    x = np.array([[0.0], [2.0]])
    z = large_margin_logits(w, x, [0], lam_anneal=0.0)
    assert z[0, 0] == pytest.approx(-2.0)
    assert z[1, 0] == 2.0


@pytest.mark.parametrize("lam", [math.inf, 1e12])
def test_large_margin_blend_limit(lam, rng):
    w, x, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 4)), rng.integers(0, 3, 4)
    np.testing.assert_allclose(large_margin_logits(w, x, y, lam_anneal=lam), w.T @ x, rtol=0, atol=1e-9)


@pytest.mark.parametrize("lam", [0.0, 0.1, 3.0])
@pytest.mark.parametrize("seed", range(20))
def test_large_margin_finite_differences(lam, seed):
    r = np.random.default_rng(seed)
    w, x, y = r.standard_normal((5, 3)), r.standard_normal((5, 4)), r.integers(0, 3, 4)
    # keep targets away from cos=0 where psi has a kink
    u = np.einsum("ij,ij->j", w[:, y], x)
    x[:, np.abs(u) < 0.05] += 0.2 * w[:, y][:, np.abs(u) < 0.05]
    upstream = r.standard_normal((3, 4))

    def f():
        return float(np.sum(upstream * large_margin_logits(w, x, y, 2, lam)))

    gw, gx = large_margin_backward(w, x, y, upstream, 2, lam)
    assert rel_error(numeric_grad(f, w), gw) < 1e-5
    assert rel_error(numeric_grad(f, x), gx) < 1e-5


def test_loss_kind_validation():
    with pytest.raises(ValueError):
        LossKind(name="hinge")
    with pytest.raises(ValueError):
        LossKind(name="focal", gamma=-1)
    assert LossKind(name="large_margin").anneal(0) == 100.0
    assert LossKind(name="large_margin").anneal(10_000) == 0.1


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.data())
def test_cross_entropy_gradient_columns_sum_to_zero(z, data):
    y = data.draw(st.integers(0, len(z) - 1))
    _, g = cross_entropy(softmax(np.array(z)), [y])
    assert abs(g.sum()) < 1e-12
