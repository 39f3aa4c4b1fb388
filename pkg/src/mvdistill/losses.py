"""The three distillation losses and their weighted combination.

Conventions pinned here because they are easy to get backwards:

* All KL terms are KL(teacher || student): the teacher-side softmax is the
  target distribution, the student side enters as log-probabilities.
* The feature loss carries a tau**2 prefactor; the logit loss does not
  (scale_logit_kd_by_tau_sq restores the classic recipe if wanted).
* The Gaussian perturbation of the fused teacher feature treats the noise
  as a constant: the fused feature itself stays differentiable so the
  fusion network keeps receiving gradients through the feature loss.
* "gamma" names two unrelated knobs upstream of this module; they are split
  into gamma_noise (perturbation scale) and gamma_loss (feature-loss weight).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor


@dataclass
class DistillConfig:
    tau_f: float = 2.0
    tau_l: float = 4.0
    tau_crd: float = 2.0
    alpha: float = 2.0        # logit-loss weight
    beta: float = 0.01        # contrastive-loss weight
    gamma_loss: float = 0.1   # feature-loss weight
    gamma_noise: float = 0.01
    seed: int = 0
    scale_logit_kd_by_tau_sq: bool = False

    def __post_init__(self):
        if min(self.tau_f, self.tau_l, self.tau_crd) <= 0:
            raise ContractError("temperatures must be positive")
        if min(self.alpha, self.beta, self.gamma_loss, self.gamma_noise) < 0:
            raise ContractError("loss weights and noise scale must be nonnegative")


@dataclass
class LossReport:
    l_feat: float
    l_logit: float
    l_crd: float
    l_all: float


def perturb_teacher_feature(f_fused: Tensor, gamma_noise: float, rng: np.random.Generator) -> Tensor:
    if gamma_noise == 0.0:
        return f_fused
    noise = rng.standard_normal(f_fused.data.shape)
    return T.add(f_fused, Tensor(gamma_noise * noise))


def feature_loss(f_s_proj: Tensor, f_tilde: Tensor, tau_f: float) -> Tensor:
    if f_s_proj.data.shape != f_tilde.data.shape:
        raise ShapeError(
            f"feature shapes disagree: {f_s_proj.data.shape} vs {f_tilde.data.shape}"
        )
    p_teacher = T.softmax(T.scale(f_tilde, 1.0 / tau_f), axis=-1)
    lp_student = T.log_softmax(T.scale(f_s_proj, 1.0 / tau_f), axis=-1)
    return T.scale(T.kl_div(p_teacher, lp_student), tau_f * tau_f)


def logit_loss(z_t: Tensor, z_s: Tensor, tau_l: float, scale_by_tau_sq: bool = False) -> Tensor:
    if z_t.data.shape != z_s.data.shape:
        raise ShapeError(f"logit shapes disagree: {z_t.data.shape} vs {z_s.data.shape}")
    p_teacher = T.softmax(T.scale(z_t, 1.0 / tau_l), axis=-1)
    lp_student = T.log_softmax(T.scale(z_s, 1.0 / tau_l), axis=-1)
    loss = T.kl_div(p_teacher, lp_student)
    if scale_by_tau_sq:
        loss = T.scale(loss, tau_l * tau_l)
    return loss


def crd_loss(z_s: Tensor, z_text: Tensor, tau_crd: float) -> Tensor:
    """Symmetric in-batch InfoNCE between student and text embeddings.

    Both inputs must be row-normalized (B, d) batches with B >= 2; the
    in-batch rows serve as negatives for each other.
    """
    if z_s.data.ndim != 2 or z_s.data.shape != z_text.data.shape:
        raise ShapeError(f"crd batches disagree: {z_s.data.shape} vs {z_text.data.shape}")
    b = z_s.data.shape[0]
    if b < 2:
        raise ContractError(f"crd_loss needs batch size >= 2 for negatives, got {b}")
    for name, z in (("z_s", z_s), ("z_text", z_text)):
        norms = np.linalg.norm(z.data, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ContractError(f"{name} rows are not L2-normalized within 1e-6")
    sims = T.scale(T.matmul(z_s, T.transpose(z_text)), 1.0 / tau_crd)  # sims[i,j] = z_s[i].z_text[j]/tau
    per_row = T.diag(T.log_softmax(sims, axis=1))   # anchor student i vs all text j
    per_col = T.diag(T.log_softmax(sims, axis=0))   # anchor text i vs all student j
    return T.scale(T.mean(T.add(per_row, per_col)), -1.0)


def total_loss(
    cfg: DistillConfig,
    l_feat: Tensor | None,
    l_logit: Tensor | None,
    l_crd: Tensor | None,
) -> tuple[Tensor, LossReport]:
    """Weighted sum of the available terms; a None term contributes zero."""
    zero = Tensor(np.asarray(0.0))
    parts = [
        T.scale(l_logit, cfg.alpha) if l_logit is not None else zero,
        T.scale(l_crd, cfg.beta) if l_crd is not None else zero,
        T.scale(l_feat, cfg.gamma_loss) if l_feat is not None else zero,
    ]
    total = parts[0]
    for p in parts[1:]:
        total = T.add(total, p)
    report = LossReport(
        l_feat=l_feat.item() if l_feat is not None else 0.0,
        l_logit=l_logit.item() if l_logit is not None else 0.0,
        l_crd=l_crd.item() if l_crd is not None else 0.0,
        l_all=total.item(),
    )
    return total, report
