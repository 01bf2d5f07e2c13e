"""Recording-level logits from per-cluster similarities.

``max`` keeps the best-matching cluster per class; ``lse`` is the
temperature-controlled soft maximum

    l_j = tau * log( (1/C) * sum_c exp(o_cj / tau) )

which tends to ``max`` as ``tau -> 0+`` and satisfies
``max(o) - tau*log(C) <= l_j <= max(o)``.  Average pooling is deliberately
not offered: it pulls every cluster of a recording towards the target class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

KINDS = ("max", "lse")


@dataclass
class AggregationConfig:
    kind: str = "lse"
    tau_start: float = 0.5
    tau_end: float = 0.1
    schedule: str = "linear"

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"aggregation kind must be one of {KINDS}, got {self.kind!r}")
        if self.schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown tau schedule {self.schedule!r}")
        if self.kind == "lse" and (self.tau_start <= 0 or self.tau_end <= 0):
            raise ConfigError("log-sum-exp temperature must be > 0")

    def tau(self, epoch, num_epochs):
        if self.schedule == "constant" or num_epochs <= 1:
            return self.tau_start
        frac = epoch / (num_epochs - 1)
        return self.tau_start + (self.tau_end - self.tau_start) * frac


def aggregate_with_weights(o, kind, tau=None):
    """``o``: ``(C, J)`` -> ``(l, weights)`` with ``l`` of shape ``(J,)``.

    ``weights[c, j]`` is the derivative of ``l_j`` w.r.t. ``o[c, j]``: the
    cluster posterior for ``lse`` and the one-hot argmax (lowest index wins
    ties) for ``max``.
    """
    o = np.asarray(o, dtype=np.float64)
    C = o.shape[0]
    if kind == "max":
        idx = np.argmax(o, axis=0)
        weights = np.zeros_like(o)
        weights[idx, np.arange(o.shape[1])] = 1.0
        return o[idx, np.arange(o.shape[1])], weights
    if kind != "lse":
        raise ConfigError(f"unknown aggregation {kind!r}")
    if tau is None or not tau > 0:
        raise ConfigError("log-sum-exp temperature must be > 0")
    top = o.max(axis=0)
    u = np.exp((o - top) / tau)
    total = u.sum(axis=0)
    return top + tau * (np.log(total) - np.log(C)), u / total


def aggregate(o_j, config: AggregationConfig, tau=None):
    """Aggregate one class column ``o_j`` (length C) into a scalar logit."""
    config.validate()
    t = config.tau_start if tau is None else tau
    col = np.asarray(o_j, dtype=np.float64).reshape(-1, 1)
    l, _ = aggregate_with_weights(col, config.kind, t)
    return float(l[0])
