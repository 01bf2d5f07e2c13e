from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class OptState:
    """SGD with classical momentum, linear warm-up and halving on CV plateaus.

    During the first ``warmup_steps`` updates the learning rate ramps linearly
    from ``lr_target / 100`` to ``lr_target``.  After warm-up every CV
    evaluation that fails to improve on the best loss counts against
    ``patience``; when it runs out the rate is halved.
    """

    lr_target: float = 0.05
    momentum: float = 0.9
    warmup_steps: int = 0
    patience: int = 2
    step: int = 0
    lr_scale: float = 1.0
    best_cv: float = math.inf
    bad_evals: int = 0
    skipped: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr_target > 0:
            raise ValueError("learning rate must be > 0")

    @property
    def in_warmup(self):
        return self.step < self.warmup_steps

    @property
    def lr(self):
        if self.in_warmup:
            start = self.lr_target / 100.0
            return start + (self.lr_target - start) * self.step / self.warmup_steps
        return self.lr_target * self.lr_scale

    def report_cv(self, cv_loss):
        """Feed one cross-validation loss; returns True when the rate was halved."""
        if self.in_warmup:
            self.best_cv = min(self.best_cv, cv_loss)
            return False
        if cv_loss < self.best_cv:
            self.best_cv = cv_loss
            self.bad_evals = 0
            return False
        self.bad_evals += 1
        if self.bad_evals >= self.patience:
            self.lr_scale *= 0.5
            self.bad_evals = 0
            log.info("CV loss plateaued; learning rate halved to %g", self.lr)
            return True
        return False


def diagnostic_snapshot(params, opt: OptState, loss):
    """JSON-friendly state dump attached to a :class:`NumericalError`."""
    return {
        "step": opt.step,
        "lr": opt.lr,
        "loss": float(loss) if np.isfinite(loss) else repr(float(loss)),
        "skipped_updates": opt.skipped,
        "param_norms": {k: float(np.linalg.norm(v)) for k, v in params.items()},
        "finite_params": {k: bool(np.all(np.isfinite(v))) for k, v in params.items()},
    }


def sgd_step(params, grads, opt: OptState, unit_rows=("head.weight",)):
    """In-place momentum update; returns False (and skips) on non-finite gradients."""
    if not all(np.all(np.isfinite(grads[k])) for k in params):
        opt.skipped += 1
        log.warning("non-finite gradient at step %d; update skipped", opt.step)
        return False
    lr = opt.lr
    for name, p in params.items():
        buf = opt.buffers.get(name)
        if buf is None:
            buf = opt.buffers[name] = np.zeros_like(p)
        buf *= opt.momentum
        buf += grads[name]
        p -= lr * buf
    for name in unit_rows:
        if name in params:
            p = params[name]
            p /= np.linalg.norm(p, axis=1, keepdims=True)
    opt.step += 1
    return True
