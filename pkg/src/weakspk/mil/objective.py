"""Recording-level loss over aggregated cluster similarities and its gradient.

For log-sum-exp aggregation the gradient w.r.t. a segment similarity is the
cluster posterior times the error signal of its class,

    dL/do_cj = p(c | j) * dL/dl_j,    dL/dl_j = s * (p(j) - [j == target])

with the target column additionally multiplied by the slope of the margin
map.  Max pooling uses the one-hot argmax in place of ``p(c | j)``.
"""

from __future__ import annotations

import numpy as np

from .aam import AamConfig, aam_backward, aam_forward
from .aggregation import AggregationConfig, aggregate_with_weights


def weak_objective(o, groups, targets, kind, tau, scale, margin):
    """Mean AAM loss over recordings whose clusters occupy ``groups`` rows of ``o``.

    ``o`` is ``(N, J)`` for all segments of a minibatch and ``groups`` a list of
    ``(start, stop)`` row ranges, one per recording.  Returns
    ``(loss, do, logits, posteriors)``.
    """
    R = len(groups)
    logits = np.empty((R, o.shape[1]))
    weights = []
    for r, (a, b) in enumerate(groups):
        logits[r], w = aggregate_with_weights(o[a:b], kind, tau)
        weights.append(w)
    losses, post, cache = aam_forward(logits, targets, scale, margin)
    dl = aam_backward(np.full(R, 1.0 / R), cache)
    do = np.empty_like(o)
    for r, (a, b) in enumerate(groups):
        do[a:b] = weights[r] * dl[r]
    return float(losses.mean()), do, logits, post


def supervised_objective(o, targets, scale, margin):
    """Mean per-segment AAM loss; returns ``(loss, do, posteriors)``."""
    losses, post, cache = aam_forward(o, targets, scale, margin)
    do = aam_backward(np.full(len(losses), 1.0 / len(losses)), cache)
    return float(losses.mean()), do, post


def loss_gradients(o, target, aggregation: AggregationConfig, aam: AamConfig, tau=None):
    """``dL/do`` (shape ``(C, J)``) for a single recording's similarity matrix."""
    t = aggregation.tau_start if tau is None else tau
    o = np.asarray(o, dtype=np.float64)
    _, do, _, _ = weak_objective(o, [(0, o.shape[0])], [target], aggregation.kind, t, aam.scale, aam.margin)
    return do


def error_signal(o, target, aggregation: AggregationConfig, aam: AamConfig, tau=None):
    """``(eps, cluster_posterior, class_posterior)`` for one recording (eps = p(j) - delta)."""
    t = aggregation.tau_start if tau is None else tau
    logits, weights = aggregate_with_weights(o, aggregation.kind, t)
    _, post, _ = aam_forward(logits[None], [target], aam.scale, aam.margin)
    eps = post[0].copy()
    eps[target] -= 1.0
    return eps, weights, post[0]
