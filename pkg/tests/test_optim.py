"""Optimizer steps against hand-derived updates; schedule closed form."""

import math

import numpy as np
import pytest

from metadep.autodiff import Tensor
from metadep.optim import Adam, clone_params, cosine_warmup, params_fingerprint, sgd_step


def test_sgd_matches_hand_update():
    p = {"w": Tensor(np.array([1.0, -2.0, 0.5]))}
    g = {"w": np.array([0.5, 0.5, -1.0])}
    sgd_step(p, g, lrs=0.1)
    np.testing.assert_allclose(p["w"].data, [0.95, -2.05, 0.6], atol=1e-15)


def test_sgd_group_learning_rates():
    p = {"enc.w": Tensor(np.array([1.0])), "dec.w": Tensor(np.array([1.0]))}
    g = {"enc.w": np.array([1.0]), "dec.w": np.array([1.0])}
    group_of = lambda n: "encoder" if n.startswith("enc") else "decoder"
    sgd_step(p, g, lrs={"encoder": 0.01, "decoder": 0.1}, group_of=group_of)
    np.testing.assert_allclose(p["enc.w"].data, [0.99], atol=1e-15)
    np.testing.assert_allclose(p["dec.w"].data, [0.90], atol=1e-15)


def test_adam_bias_correction_first_two_steps():
    # hand-derived: m_t, v_t with bias correction at t=1 and t=2
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w0 = 1.0
    g1, g2 = 0.4, -0.2

    m1 = (1 - b1) * g1
    v1 = (1 - b2) * g1 * g1
    w1 = w0 - lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
    m2 = b1 * m1 + (1 - b1) * g2
    v2 = b2 * v1 + (1 - b2) * g2 * g2
    w2 = w1 - lr * (m2 / (1 - b1 ** 2)) / (math.sqrt(v2 / (1 - b2 ** 2)) + eps)

    p = {"w": Tensor(np.array([w0]))}
    opt = Adam(lrs=lr)
    opt.step(p, {"w": np.array([g1])})
    np.testing.assert_allclose(p["w"].data, [w1], atol=1e-12)
    opt.step(p, {"w": np.array([g2])})
    np.testing.assert_allclose(p["w"].data, [w2], atol=1e-12)


def test_adam_decoupled_weight_decay():
    lr, wd = 0.1, 0.01
    p = {"w": Tensor(np.array([2.0]))}
    opt = Adam(lrs=lr, weight_decay=wd)
    opt.step(p, {"w": np.array([1.0])})
    # first step: adam update = g/(|g|+eps) ~ 1, decay adds wd*w
    expected = 2.0 - lr * (1.0 / (1.0 + 1e-8) + wd * 2.0)
    np.testing.assert_allclose(p["w"].data, [expected], atol=1e-10)


def test_adam_skip_groups_freezes_parameters_and_moments():
    p = {"enc.w": Tensor(np.array([1.0])), "dec.w": Tensor(np.array([1.0]))}
    group_of = lambda n: "encoder" if n.startswith("enc") else "decoder"
    opt = Adam(lrs={"encoder": 0.1, "decoder": 0.1}, group_of=group_of)
    opt.step(p, {"enc.w": np.array([1.0]), "dec.w": np.array([1.0])},
             skip_groups={"encoder"})
    assert p["enc.w"].data[0] == 1.0
    assert p["dec.w"].data[0] != 1.0
    assert "enc.w" not in opt._m


def test_clone_params_is_deep():
    p = {"w": Tensor(np.array([1.0]))}
    q = clone_params(p)
    q["w"].data[0] = 99.0
    assert p["w"].data[0] == 1.0
    assert params_fingerprint(p) != params_fingerprint(q)


def test_cosine_warmup_closed_form():
    total, frac = 200, 0.1
    warmup = 20
    # mid-warmup: multiplier equals (step+1)/warmup_steps
    assert cosine_warmup(9, total, frac) == pytest.approx(10 / 20)
    # warmup end reaches exactly 1
    assert cosine_warmup(19, total, frac) == pytest.approx(1.0)
    # post-warmup: half cosine toward zero
    for step in (20, 60, 110, 199):
        progress = (step - warmup) / (total - warmup)
        want = 0.5 * (1 + math.cos(math.pi * progress))
        assert cosine_warmup(step, total, frac) == pytest.approx(want, abs=1e-12)


def test_cosine_warmup_monotone_down_after_warmup_and_bounded():
    vals = [cosine_warmup(s, 100, 0.1) for s in range(100)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    post = vals[10:]
    assert all(a >= b for a, b in zip(post, post[1:]))
    assert max(vals) == pytest.approx(1.0)


def test_cosine_warmup_rejects_bad_arguments():
    with pytest.raises(ValueError):
        cosine_warmup(0, 0, 0.1)
    with pytest.raises(ValueError):
        cosine_warmup(0, 10, 1.5)
