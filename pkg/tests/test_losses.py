"""Distillation losses against frozen hand-derived values and invariances."""

import numpy as np
import pytest

from mvdistill import tensor as T
from mvdistill.losses import (
    DistillConfig,
    crd_loss,
    feature_loss,
    logit_loss,
    perturb_teacher_feature,
    total_loss,
)
from mvdistill.tensor import ContractError, ShapeError, Tensor

from oracles import finite_diff_grad, rel_err


def unit_rows(rng, b, d):
    z = rng.standard_normal((b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# ------------------------------------------------------------ frozen values


def test_feature_loss_oracle():
    loss = feature_loss(Tensor(np.array([0.0, 0.0])), Tensor(np.array([2.0, 0.0])), tau_f=2.0)
    assert abs(loss.item() - 0.4436) < 1e-3


def test_logit_loss_oracle():
    loss = logit_loss(Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 0.0])), tau_l=4.0)
    assert abs(loss.item() - 0.00777) < 1e-4


def test_crd_loss_orthonormal_oracle():
    eye = Tensor(np.eye(2))
    loss = crd_loss(eye, eye, tau_crd=2.0)
    # each of the four InfoNCE terms is ln(1 + e^(-1/2))
    assert abs(loss.item() - 0.9481) < 1e-3
    assert abs(loss.item() - 2.0 * np.log1p(np.exp(-0.5))) < 1e-12


def test_total_loss_oracle():
    cfg = DistillConfig()
    l_feat = feature_loss(Tensor(np.array([0.0, 0.0])), Tensor(np.array([2.0, 0.0])), cfg.tau_f)
    l_logit = logit_loss(Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 0.0])), cfg.tau_l)
    eye = Tensor(np.eye(2))
    l_crd = crd_loss(eye, eye, cfg.tau_crd)
    total, report = total_loss(cfg, l_feat, l_logit, l_crd)
    assert abs(total.item() - 0.06938) < 1e-3
    assert report.l_all == total.item()
    assert report.l_feat == l_feat.item()


# ------------------------------------------------------------- invariances


def test_kd_losses_are_shift_invariant():
    rng = np.random.default_rng(0)
    z_t = rng.standard_normal((4, 6))
    z_s = rng.standard_normal((4, 6))
    base_f = feature_loss(Tensor(z_s), Tensor(z_t), 2.0).item()
    base_l = logit_loss(Tensor(z_t), Tensor(z_s), 4.0).item()
    shifted_f = feature_loss(Tensor(z_s + 7.0), Tensor(z_t - 3.0), 2.0).item()
    shifted_l = logit_loss(Tensor(z_t - 3.0), Tensor(z_s + 7.0), 4.0).item()
    assert abs(base_f - shifted_f) < 1e-9
    assert abs(base_l - shifted_l) < 1e-9


def test_crd_loss_is_rotation_invariant():
    rng = np.random.default_rng(1)
    z_s, z_text = unit_rows(rng, 5, 4), unit_rows(rng, 5, 4)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    base = crd_loss(Tensor(z_s), Tensor(z_text), 2.0).item()
    rotated = crd_loss(Tensor(z_s @ q), Tensor(z_text @ q), 2.0).item()
    assert abs(base - rotated) < 1e-9


def test_kl_terms_vanish_at_identical_inputs():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((3, 5))
    assert feature_loss(Tensor(z), Tensor(z), 2.0).item() < 1e-12
    assert logit_loss(Tensor(z), Tensor(z), 4.0).item() < 1e-12


def test_kd_loss_decreases_with_temperature():
    # hotter softmax flattens both distributions, shrinking their KL
    rng = np.random.default_rng(3)
    z_t = rng.standard_normal((4, 6))
    z_s = rng.standard_normal((4, 6))
    vals = [logit_loss(Tensor(z_t), Tensor(z_s), tau).item() for tau in (1.0, 2.0, 4.0, 8.0, 16.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(v >= 0 for v in vals)


def test_feature_loss_single_dim_is_zero():
    # with d=1, both softmaxes are the constant distribution [1]
    loss = feature_loss(Tensor(np.array([3.7])), Tensor(np.array([-2.0])), 2.0)
    assert loss.item() == 0.0


def test_crd_loss_prefers_aligned_pairs():
    rng = np.random.default_rng(4)
    z = unit_rows(rng, 6, 8)
    other = unit_rows(rng, 6, 8)
    aligned = crd_loss(Tensor(z), Tensor(z), 2.0).item()
    shuffled = crd_loss(Tensor(z), Tensor(other), 2.0).item()
    assert aligned < shuffled


def test_logit_loss_tau_sq_flag():
    rng = np.random.default_rng(5)
    z_t = rng.standard_normal((2, 4))
    z_s = rng.standard_normal((2, 4))
    plain = logit_loss(Tensor(z_t), Tensor(z_s), 4.0).item()
    scaled = logit_loss(Tensor(z_t), Tensor(z_s), 4.0, scale_by_tau_sq=True).item()
    assert abs(scaled - 16.0 * plain) < 1e-12


# ---------------------------------------------------------------- contracts


def test_shape_mismatches_rejected():
    with pytest.raises(ShapeError):
        feature_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)), 2.0)
    with pytest.raises(ShapeError):
        logit_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 4.0)
    with pytest.raises(ShapeError):
        crd_loss(Tensor(np.eye(3)), Tensor(np.eye(4)[:3]), 2.0)


def test_crd_batch_and_norm_contracts():
    with pytest.raises(ContractError):
        crd_loss(Tensor(np.eye(2)[:1]), Tensor(np.eye(2)[:1]), 2.0)
    bad = Tensor(2.0 * np.eye(2))
    with pytest.raises(ContractError):
        crd_loss(bad, Tensor(np.eye(2)), 2.0)


def test_config_validation():
    with pytest.raises(ContractError):
        DistillConfig(tau_f=0.0)
    with pytest.raises(ContractError):
        DistillConfig(beta=-0.01)


def test_total_loss_none_terms_contribute_zero():
    cfg = DistillConfig()
    l_logit = logit_loss(Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 0.0])), cfg.tau_l)
    total, report = total_loss(cfg, None, l_logit, None)
    assert abs(total.item() - cfg.alpha * l_logit.item()) < 1e-15
    assert report.l_feat == 0.0 and report.l_crd == 0.0


# -------------------------------------------------------------------- noise


def test_perturbation_noise_statistics():
    rng = np.random.Generator(np.random.PCG64(6))
    base = Tensor(np.zeros(20_000))
    out = perturb_teacher_feature(base, 0.01, rng)
    delta = out.data - base.data
    assert abs(delta.mean()) < 5e-4
    assert abs(delta.std() - 0.01) < 5e-4


def test_zero_noise_returns_input_object():
    base = Tensor(np.ones(5))
    rng = np.random.Generator(np.random.PCG64(7))
    assert perturb_teacher_feature(base, 0.0, rng) is base


def test_noise_is_constant_wrt_gradients():
    rng = np.random.Generator(np.random.PCG64(8))
    fused = Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)
    out = perturb_teacher_feature(fused, 0.01, rng)
    T.mean(out).backward()
    assert np.allclose(fused.grad, np.full(3, 1 / 3), atol=1e-15)


# ---------------------------------------------------------------- gradients


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    z_t = rng.standard_normal((3, 5))
    z_s_data = rng.standard_normal((3, 5))

    z_s = Tensor(z_s_data, requires_grad=True)
    logit_loss(Tensor(z_t), z_s, 4.0).backward()
    fd = finite_diff_grad(lambda: logit_loss(Tensor(z_t), Tensor(z_s_data), 4.0).item(), z_s_data)
    assert rel_err(z_s.grad, fd) < 1e-5

    f_s_data = rng.standard_normal((3, 5))
    f_s = Tensor(f_s_data, requires_grad=True)
    feature_loss(f_s, Tensor(z_t), 2.0).backward()
    fd = finite_diff_grad(lambda: feature_loss(Tensor(f_s_data), Tensor(z_t), 2.0).item(), f_s_data)
    assert rel_err(f_s.grad, fd) < 1e-5


def test_crd_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    raw = rng.standard_normal((4, 6))
    z_text = Tensor(unit_rows(rng, 4, 6))

    x = Tensor(raw, requires_grad=True)
    crd_loss(T.l2_normalize(x), z_text, 2.0).backward()

    def scalar():
        z = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        return crd_loss(Tensor(z), z_text, 2.0).item()

    assert rel_err(x.grad, finite_diff_grad(scalar, raw)) < 1e-5
