"""Losses and variational MI estimators over paired embedding batches.

Critics are fixed: ``T = cos / temp`` for the DV, InfoNCE and JSD families and the
plain dot product of standardized features for the Taylor-DV surrogate. Every
function takes :class:`~mimax.autodiff.Tensor` inputs and returns tensors (or a
:class:`LossBreakdown` holding one), so the same code path serves training and
gradient-free evaluation.

Sign convention: losses are minimized, estimates are maximized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class InsufficientNegativesError(ValueError):
    """Batches of one row have no off-diagonal pairs to form a marginal term."""


class StandardizationError(ValueError):
    pass


@dataclass
class LossBreakdown:
    loss: Tensor
    joint_term: float
    marginal_term: float

    @property
    def total(self) -> float:
        return self.loss.item()


@dataclass(frozen=True)
class Temperature:
    value: float = 0.1

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"temperature must be > 0, got {self.value}")


def _temp(temp) -> float:
    value = temp.value if isinstance(temp, Temperature) else float(temp)
    if not value > 0:
        raise ValueError(f"temperature must be > 0, got {value}")
    return value


def _check_pair(zA: Tensor, zB: Tensor) -> int:
    if zA.shape != zB.shape or zA.ndim != 2:
        raise ad.DimensionError(f"paired batches must share an N x d shape, got {zA.shape} and {zB.shape}")
    n = zA.shape[0]
    if n < 2:
        raise InsufficientNegativesError(f"need at least 2 rows for negatives, got {n}")
    return n


def _scores(zA: Tensor, zB: Tensor, temp) -> Tensor:
    return ad.cosine_sim_matrix(zA, zB, scale=1.0 / _temp(temp))


def _joint(zA: Tensor, zB: Tensor, temp) -> Tensor:
    # diagonal of the score matrix, computed in O(N d)
    return ad.scalar_mul(ad.rowwise_cosine(zA, zB), 1.0 / _temp(temp))


def cos_dv_loss(zA: Tensor, zB: Tensor, temp=0.1) -> LossBreakdown:
    n = _check_pair(zA, zB)
    joint = ad.mean(_joint(zA, zB, temp))
    marginal = ad.logsumexp(_scores(zA, zB, temp), mask=ad.offdiag_mask(n)) - math.log(n * (n - 1))
    return LossBreakdown(-(joint - marginal), joint.item(), marginal.item())


def joint_only_loss(zA: Tensor, zB: Tensor, temp=0.1) -> LossBreakdown:
    """cos-DV with the marginal term removed."""
    _check_pair(zA, zB)
    joint = ad.mean(_joint(zA, zB, temp))
    return LossBreakdown(-joint, joint.item(), 0.0)


def infonce_estimate(zA: Tensor, zB: Tensor, temp=0.1) -> Tensor:
    """Batch InfoNCE bound log N + mean_i [T_ii - log sum_j e^T_ij]; never exceeds log N."""
    return -infonce_loss(zA, zB, temp).loss + math.log(zA.shape[0])


def infonce_loss(zA: Tensor, zB: Tensor, temp=0.1) -> LossBreakdown:
    """Cross-entropy form with each row's candidates as negatives; equals -(estimate - log N)."""
    _check_pair(zA, zB)
    joint = ad.mean(_joint(zA, zB, temp))
    marginal = ad.mean(ad.logsumexp(_scores(zA, zB, temp), axis=1))
    return LossBreakdown(-(joint - marginal), joint.item(), marginal.item())


def jsd_estimate(zA: Tensor, zB: Tensor, temp=0.1) -> Tensor:
    return -jsd_loss(zA, zB, temp).loss


def jsd_loss(zA: Tensor, zB: Tensor, temp=0.1) -> LossBreakdown:
    n = _check_pair(zA, zB)
    joint = -ad.mean(ad.softplus(-_joint(zA, zB, temp)))
    marginal = ad.scalar_mul(ad.sum(ad.softplus(_scores(zA, zB, temp)) * ad.offdiag_mask(n)), 1.0 / (n * (n - 1)))
    return LossBreakdown(-(joint - marginal), joint.item(), marginal.item())


def neg_cosine_loss(p: Tensor, z_target: Tensor) -> Tensor:
    """-mean_i <p_i, z_i>; the caller stops gradients through ``z_target``."""
    if p.shape != z_target.shape:
        raise ad.DimensionError(f"shape mismatch {p.shape} vs {z_target.shape}")
    return -ad.mean(ad.sum(p * z_target, axis=1))


def _standardize(z: Tensor, eps: float = 1e-8) -> Tensor:
    var = ad.variance(z, axis=0, keepdims=True)
    if np.any(var.data <= eps):
        raise StandardizationError("a feature column has (near) zero variance")
    return (z - ad.mean(z, axis=0, keepdims=True)) / ad.sqrt(var + eps)


def cross_correlation(zA: Tensor, zB: Tensor) -> Tensor:
    _check_pair(zA, zB)
    n = zA.shape[0]
    return ad.scalar_mul(ad.transpose(_standardize(zA)) @ _standardize(zB), 1.0 / n)


def taylor_dv_loss(zA: Tensor, zB: Tensor, lam: float = 1.0) -> LossBreakdown:
    """Barlow-Twins-shaped surrogate: -trace(C) + lam * sum_{i != j} C_ij^2."""
    c = cross_correlation(zA, zB)
    d = c.shape[0]
    trace = ad.sum(ad.diagonal(c))
    off = ad.scalar_mul(ad.sum(c * c * ad.offdiag_mask(d)), lam)
    return LossBreakdown(-(trace - off), trace.item(), off.item())


def symmetric(loss_fn: Callable[..., LossBreakdown], zA: Tensor, zB: Tensor, *args, **kwargs) -> LossBreakdown:
    """Average of the loss over both view orderings."""
    ab = loss_fn(zA, zB, *args, **kwargs)
    ba = loss_fn(zB, zA, *args, **kwargs)
    return LossBreakdown(
        ad.scalar_mul(ab.loss + ba.loss, 0.5),
        0.5 * (ab.joint_term + ba.joint_term),
        0.5 * (ab.marginal_term + ba.marginal_term),
    )


def cos_dv_estimate(zA: Tensor, zB: Tensor, temp=0.1) -> Tensor:
    return -cos_dv_loss(zA, zB, temp).loss


LOSSES: dict[str, Callable[..., LossBreakdown]] = {
    "cos_dv": cos_dv_loss,
    "infonce": infonce_loss,
    "jsd": jsd_loss,
    "joint_only": joint_only_loss,
}
