"""Training objective: binary cross-entropy + soft Dice + scaled weight decay.

One objective serves both the adaptation loop and the meta-update; the
regularizer is the squared parameter norm scaled by lam / q where q is the
total parameter count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1e2          # weight-decay coefficient
    dice_eps: float = 1e-6    # smoothing in the soft Dice ratio
    bce_clamp: float = 1e-7   # probability clamp before logs

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError("lam must be nonnegative")
        if not 0 < self.bce_clamp < 0.5:
            raise ContractError("bce_clamp must lie in (0, 0.5)")
        if self.dice_eps <= 0:
            raise ContractError("dice_eps must be positive")


def _check_pair(p, z):
    p = ad._as_tensor(p)
    z = ad._as_tensor(z)
    if p.shape != z.shape:
        raise DimensionError(f"probability/label shapes differ: {p.shape} vs {z.shape}")
    return p, z


def bce_loss(p, z, cfg: LossConfig) -> ad.Tensor:
    """Mean binary cross-entropy with clamped probabilities."""
    p, z = _check_pair(p, z)
    c = cfg.bce_clamp
    pc = ad.clamp(p, c, 1.0 - c)
    ones = ad.constant(np.ones(pc.data.shape))
    one_minus_p = ad.add(ad.scalar_mul(pc, -1.0), ones)
    one_minus_z = ad.constant(1.0 - z.data)
    ll = ad.add(ad.mul(z, ad.log(pc)), ad.mul(one_minus_z, ad.log(one_minus_p)))
    return ad.scalar_mul(ad.tmean(ll), -1.0)


def soft_dice_loss(p, z, cfg: LossConfig) -> ad.Tensor:
    """1 - (2*sum(pz) + eps) / (sum(p) + sum(z) + eps)."""
    p, z = _check_pair(p, z)
    if p.data.size < 1:
        raise ContractError("soft dice needs at least one element")
    eps = ad.constant(cfg.dice_eps)
    num = ad.add(ad.scalar_mul(ad.tsum(ad.mul(p, z)), 2.0), eps)
    den = ad.add(ad.add(ad.tsum(p), ad.tsum(z)), eps)
    ratio = ad.mul(num, ad.reciprocal(den))
    return ad.add(ad.constant(1.0), ad.scalar_mul(ratio, -1.0))


def weight_norm(params: ad.ParamVector) -> ad.Tensor:
    """Sum of squared parameter values across all entries."""
    total = None
    for _, t in params.entries:
        s = ad.tsum(ad.square(t))
        total = s if total is None else ad.add(total, s)
    return total


def objective(spec, params: ad.ParamVector, points, labels, cfg: LossConfig) -> ad.Tensor:
    """BCE + Dice + lam/q * ||params||^2 on a batch of labeled points."""
    from .siren import forward_logits

    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if points.shape[0] == 0:
        raise ContractError("objective needs a nonempty observation batch")
    p = ad.sigmoid(forward_logits(spec, params, points))
    z = ad.constant(labels)
    loss = ad.add(bce_loss(p, z, cfg), soft_dice_loss(p, z, cfg))
    if cfg.lam != 0.0:
        reg = ad.scalar_mul(weight_norm(params), cfg.lam / params.q)
        loss = ad.add(loss, reg)
    return loss


def total_loss(net, obs, cfg: LossConfig) -> ad.Tensor:
    """Objective of a network on an observation set (both training loops)."""
    if obs.points.shape[0] == 0:
        raise ContractError("observation set is empty")
    return objective(net.spec, net.params, obs.points, obs.labels, cfg)
