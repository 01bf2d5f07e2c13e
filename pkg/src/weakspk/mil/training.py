"""Stage-1 weak training loop and the shared sharded forward/backward pass."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError
from ..parallel import ordered_map, tree_sum
from .aam import AamConfig, aam_forward
from .aggregation import AggregationConfig
from .inference import recording_logits
from .network import ClassificationHead, EmbeddingNet, model_params
from .objective import weak_objective
from .optim import OptState, diagnostic_snapshot, sgd_step
from .sampling import Minibatch, build_minibatch, plan_epoch

log = logging.getLogger(__name__)

_INIT_STREAM = 10
_SAMPLE_STREAM = 11


@dataclass
class WeakDataset:
    """Recordings keyed by id: features, fixed clusterings and weak labels."""

    features: dict[int, np.ndarray]
    clusterings: dict
    labels: dict[int, int]

    def __len__(self):
        return len(self.labels)

    def subset(self, ids):
        ids = [i for i in ids if i in self.labels]
        return WeakDataset(
            {i: self.features[i] for i in ids},
            {i: self.clusterings[i] for i in ids},
            {i: self.labels[i] for i in ids},
        )


@dataclass
class Stage1Config:
    epochs: int = 40
    seg_frames: int = 200
    batch_budget: int = 32
    hidden: tuple[int, ...] = (128, 128)
    embedding_dim: int = 64
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    aam: AamConfig = field(default_factory=AamConfig)
    lr: float = 0.0025
    momentum: float = 0.9
    warmup_fraction: float = 0.05
    patience: int = 4
    cv_speakers: int = 8
    shard_size: int = 32
    eval_max_frames: int = 2000


def forward_backward(net: EmbeddingNet, head: ClassificationHead, segments, objective, shard_size=32):
    """Sharded forward/backward with an index-ordered gradient reduction.

    ``objective(o)`` maps the ``(N, J)`` similarity matrix to
    ``(loss, dL/do, extra)``.  Shards are fixed by ``shard_size`` alone, so the
    thread count never changes the result.
    """
    N = segments.shape[0]
    bounds = [(a, min(a + shard_size, N)) for a in range(0, N, shard_size)]
    outs = ordered_map(lambda ab: net.forward(segments[ab[0]:ab[1]]), bounds)
    z = np.concatenate([zz for zz, _ in outs])
    o, hcache = head.similarities(z)
    loss, do, extra = objective(o)
    dz, dweight = head.backward(do, hcache)
    parts = ordered_map(
        lambda k: net.backward(dz[bounds[k][0]:bounds[k][1]], outs[k][1]),
        range(len(bounds)),
    )
    grads = {f"net.{k}": v for k, v in tree_sum(parts).items()}
    grads["head.weight"] = dweight
    return loss, grads, extra


def model_loss(net, head, segments, objective):
    """Loss only (no gradients); used by finite-difference checks."""
    z, _ = net.forward(segments)
    o, _ = head.similarities(z)
    return objective(o)[0]


class WeakTrainer:
    """One SGD update per minibatch of cluster segments."""

    def __init__(self, net, head, config: Stage1Config, total_steps):
        self.net = net
        self.head = head
        self.config = config
        self.opt = OptState(
            lr_target=config.lr,
            momentum=config.momentum,
            warmup_steps=int(math.ceil(config.warmup_fraction * total_steps)),
            patience=config.patience,
        )
        self.params = model_params(net, head)

    def step(self, batch: Minibatch, tau):
        cfg = self.config

        def objective(o):
            loss, do, logits, post = weak_objective(
                o, batch.groups, batch.targets, cfg.aggregation.kind, tau, cfg.aam.scale, cfg.aam.margin
            )
            return loss, do, logits

        loss, grads, logits = forward_backward(self.net, self.head, batch.segments, objective, cfg.shard_size)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite training loss at step {self.opt.step}",
                diagnostic_snapshot(self.params, self.opt, loss),
            )
        sgd_step(self.params, grads, self.opt)
        correct = int(np.sum(np.argmax(logits, axis=1) == batch.targets))
        return loss, correct


def evaluate_recordings(net, head, data: WeakDataset, kind, tau, aam: AamConfig, max_frames=2000, loss_ids=None):
    """Recording-level accuracy on all of ``data`` and mean AAM loss on ``loss_ids``."""
    ids = sorted(data.labels)
    if not ids:
        return math.nan, math.nan
    logits = np.stack([
        recording_logits(net, head, data.features[i], data.clusterings[i], kind, tau, max_frames) for i in ids
    ])
    targets = np.array([data.labels[i] for i in ids])
    acc = float(np.mean(np.argmax(logits, axis=1) == targets))
    loss_ids = ids if loss_ids is None else sorted(loss_ids)
    sel = [ids.index(i) for i in loss_ids]
    if not sel:
        return acc, math.nan
    losses, _, _ = aam_forward(logits[sel], targets[sel], aam.scale, aam.margin)
    return acc, float(losses.mean())


def cv_recording_ids(heldout: WeakDataset, num_speakers):
    speakers = sorted(set(heldout.labels.values()))[:num_speakers]
    return [i for i in sorted(heldout.labels) if heldout.labels[i] in speakers]


def train_stage1(train: WeakDataset, num_classes, config: Stage1Config, seed=0,
                 heldout: WeakDataset | None = None, on_epoch=None):
    """Weakly supervised training; returns ``(net, head, log)``.

    ``log`` holds one dict per epoch with training loss, CV loss, held-out
    recording accuracy, learning rate, temperature and the per-step losses.
    """
    config.aggregation.validate()
    config.aam.validate()
    init_rng = np.random.default_rng([seed, _INIT_STREAM])
    rng = np.random.default_rng([seed, _SAMPLE_STREAM])
    input_dim = next(iter(train.features.values())).shape[1]
    net = EmbeddingNet.init(input_dim, config.hidden, config.embedding_dim, init_rng)
    head = ClassificationHead.init(num_classes, config.embedding_dim, 1, init_rng)

    counts = {rid: cl.num_clusters for rid, cl in train.clusterings.items()}
    # steps per epoch vary slightly with the shuffle; estimate from total segment mass
    est_steps = config.epochs * max(1, math.ceil(sum(min(c, config.batch_budget) for c in counts.values()) / config.batch_budget))
    trainer = WeakTrainer(net, head, config, est_steps)
    cv_ids = cv_recording_ids(heldout, config.cv_speakers) if heldout is not None and len(heldout) else []

    history = []
    for epoch in range(config.epochs):
        tau = config.aggregation.tau(epoch, config.epochs)
        lr_start = trainer.opt.lr
        step_losses, correct, seen = [], 0, 0
        for rids in plan_epoch(counts, config.batch_budget, rng):
            batch = build_minibatch(rids, train.features, train.clusterings, train.labels, config.seg_frames, rng)
            loss, ok = trainer.step(batch, tau)
            step_losses.append(loss)
            correct += ok
            seen += len(rids)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(step_losses)),
            "train_accuracy": correct / max(seen, 1),
            "lr": lr_start,
            "tau": tau if config.aggregation.kind == "lse" else None,
            "steps": trainer.opt.step,
            "step_losses": step_losses,
        }
        if heldout is not None and len(heldout):
            acc, cv_loss = evaluate_recordings(
                net, head, heldout, config.aggregation.kind, tau, config.aam, config.eval_max_frames, cv_ids
            )
            entry["heldout_accuracy"] = acc
            entry["cv_loss"] = cv_loss
            if np.isfinite(cv_loss):
                trainer.opt.report_cv(cv_loss)
        history.append(entry)
        log.info("stage1 epoch %d loss %.4f acc %s lr %.4g", epoch, entry["train_loss"], entry.get("heldout_accuracy"), lr_start)
        if on_epoch is not None:
            on_epoch(entry)
    return net, head, history
