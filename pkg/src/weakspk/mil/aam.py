"""Additive angular margin softmax on bounded logits.

The target logit ``x`` is replaced by ``cos(arccos(x) + m)`` when
``x > cos(pi - m)`` and by ``x - m*sin(m)`` otherwise, then all logits are
multiplied by the scale ``s`` and fed to cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import ConfigError

_SIN_FLOOR = 1e-12


@dataclass
class AamConfig:
    scale: float = 30.0
    margin: float = 0.1

    def validate(self):
        if not self.scale > 0:
            raise ConfigError("AAM scale must be > 0")
        if not 0 <= self.margin < math.pi / 2:
            raise ConfigError("AAM margin must lie in [0, pi/2)")


def margin_map(x, margin):
    """Penalized target logit and its derivative w.r.t. ``x``."""
    x = np.asarray(x, dtype=np.float64)
    cos_m, sin_m = math.cos(margin), math.sin(margin)
    sine = np.sqrt(np.maximum(1.0 - x * x, _SIN_FLOOR))
    main = x > math.cos(math.pi - margin)
    value = np.where(main, x * cos_m - sine * sin_m, x - margin * sin_m)
    slope = np.where(main, cos_m + x * sin_m / sine, 1.0)
    return value, slope


def aam_forward(l, targets, scale, margin):
    """``l``: ``(R, J)``; returns per-row losses, posteriors and a cache."""
    l = np.atleast_2d(np.asarray(l, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    rows = np.arange(l.shape[0])
    penalized, slope = margin_map(l[rows, targets], margin)
    logits = l.copy()
    logits[rows, targets] = penalized
    logits *= scale
    lse = logsumexp(logits, axis=1)
    losses = lse - logits[rows, targets]
    post = np.exp(logits - lse[:, None])
    return losses, post, (targets, slope, scale, post)


def aam_backward(dlosses, cache):
    """Gradient w.r.t. ``l`` given upstream gradients of the per-row losses."""
    targets, slope, scale, post = cache
    rows = np.arange(post.shape[0])
    err = post.copy()
    err[rows, targets] -= 1.0
    dl = scale * err * np.asarray(dlosses, dtype=np.float64).reshape(-1, 1)
    dl[rows, targets] *= slope
    return dl


def aam_loss(l, target, aam: AamConfig):
    """Loss ``-log p(target)`` and the posterior over classes for one logit vector."""
    losses, post, _ = aam_forward(np.asarray(l)[None], [target], aam.scale, aam.margin)
    return float(losses[0]), post[0]
