"""Domain-shifts-with-uncertainty feature-statistics perturbation.

During training, with probability ``apply_prob`` per call, every instance's
per-channel mean and standard deviation (over the length axis) are replaced
by Gaussian draws centred on the originals. The spread of each draw is the
across-batch standard deviation of that statistic for the channel::

    y = (sigma + eps_s * S_sigma) * (x - mu) / (sigma + eps) + (mu + eps_m * S_mu)

The backward pass treats the draws ``eps_*`` and the batch spreads ``S_*``
as constants; gradients flow through ``mu`` and ``sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn.layers import Module


@dataclass
class DsuConfig:
    apply_prob: float = 0.5
    eps: float = 1e-6
    active: bool = True

    def __post_init__(self):
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError("apply_prob must lie in [0, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class DsuDraw:
    """Random quantities of one forward call. ``applied=False`` means identity."""

    applied: bool
    eps_mu: Optional[np.ndarray] = None
    eps_sigma: Optional[np.ndarray] = None
    spread_mu: Optional[np.ndarray] = None
    spread_sigma: Optional[np.ndarray] = None


def instance_stats(x):
    mu = x.mean(axis=2, keepdims=True, dtype=np.float64)
    sigma = np.sqrt(x.var(axis=2, keepdims=True, dtype=np.float64))
    return mu, sigma


def draw(x, cfg: DsuConfig, rng) -> DsuDraw:
    """Sample the gate and the Gaussian noise for input ``x``."""
    if not cfg.active or rng.random() >= cfg.apply_prob:
        return DsuDraw(False)
    if x.shape[0] < 2:
        raise ValueError("DSU needs a batch of at least 2 instances while active")
    mu, sigma = instance_stats(x)
    spread_mu = mu.std(axis=0, keepdims=True)
    spread_sigma = sigma.std(axis=0, keepdims=True)
    shape = (x.shape[0], x.shape[1], 1)
    return DsuDraw(True, rng.standard_normal(shape), rng.standard_normal(shape),
                   spread_mu, spread_sigma)


def dsu_forward(x, cfg: DsuConfig, rng=None, frozen: Optional[DsuDraw] = None):
    """Returns ``(y, cache)``. Pass ``frozen`` to replay a previous draw."""
    if x.ndim != 3:
        raise ValueError(f"DSU expects (batch, channels, length), got {x.shape}")
    d = frozen if frozen is not None else draw(x, cfg, rng)
    if not d.applied:
        return x, (d, None)
    mu, sigma = instance_stats(x)
    denom = sigma + cfg.eps
    xhat = (x - mu) / denom
    gamma = sigma + d.eps_sigma * d.spread_sigma
    beta = mu + d.eps_mu * d.spread_mu
    y = (gamma * xhat + beta).astype(x.dtype)
    return y, (d, (x, mu, sigma, denom, xhat, gamma))


def dsu_backward(dy, cache):
    d, saved = cache
    if not d.applied:
        return dy
    x, mu, sigma, denom, xhat, gamma = saved
    length = x.shape[2]
    dy64 = dy.astype(np.float64)
    dgamma = (dy64 * xhat).sum(axis=2, keepdims=True)
    dbeta = dy64.sum(axis=2, keepdims=True)
    dxhat = dy64 * gamma
    centered = x - mu
    d_denom = -(dxhat * centered).sum(axis=2, keepdims=True) / denom**2
    d_mu = dbeta - dxhat.sum(axis=2, keepdims=True) / denom
    d_sigma = dgamma + d_denom
    # d sigma / d x = (x - mu) / (L * sigma); a constant channel has no direction
    safe = np.where(sigma > 0, sigma, 1.0)
    dsig_dx = np.where(sigma > 0, centered / (length * safe), 0.0)
    dx = dxhat / denom + d_mu / length + d_sigma * dsig_dx
    return dx.astype(dy.dtype)


class DSU(Module):
    """Layer wrapper; identity in eval mode."""

    def __init__(self, cfg: Optional[DsuConfig] = None, rng=None):
        super().__init__()
        self.cfg = cfg or DsuConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.last_draw: Optional[DsuDraw] = None

    def forward(self, x):
        cfg = DsuConfig(self.cfg.apply_prob, self.cfg.eps, self.cfg.active and self.training)
        y, self._cache = dsu_forward(x, cfg, self.rng)
        self.last_draw = self._cache[0]
        return y

    def backward(self, dy):
        return dsu_backward(dy, self._cache)
