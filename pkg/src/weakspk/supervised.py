"""Stage-2 supervised AAM training on self-labeled chunks.

Every minibatch element is one fixed-length crop with its pseudo label; there
is no aggregation.  The margin rises linearly once warm-up is over and
``sub_centers=2`` gives each class a second row in the head so that noisy
chunks (interviewers, non-speech) can attach to it instead of the speaker row.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .features import instance_normalize
from .mil.aam import aam_forward
from .mil.inference import embed_features
from .mil.network import ClassificationHead, EmbeddingNet, model_params
from .mil.objective import supervised_objective
from .mil.optim import OptState, diagnostic_snapshot, sgd_step
from .mil.sampling import crop_segment
from .mil.training import forward_backward

log = logging.getLogger(__name__)

_INIT_STREAM = 20
_SAMPLE_STREAM = 21


@dataclass
class Stage2Config:
    epochs: int = 30
    seg_frames: int = 200
    batch_size: int = 32
    hidden: tuple[int, ...] = (128, 128)
    embedding_dim: int = 64
    scale: float = 30.0
    margin_start: float = 0.1
    margin_end: float = 0.3
    sub_centers: int = 1
    lr: float = 0.0025
    momentum: float = 0.9
    warmup_fraction: float = 0.05
    patience: int = 4
    cv_speakers: int = 8
    min_chunks_per_class: int = 2
    shard_size: int = 32
    eval_max_frames: int = 2000

    def validate(self):
        if self.sub_centers < 1:
            raise ConfigError("sub_centers must be >= 1")
        for m in (self.margin_start, self.margin_end):
            if not 0 <= m < math.pi / 2:
                raise ConfigError("margin endpoints must lie in [0, pi/2)")
        if self.margin_end < self.margin_start:
            raise ConfigError("margin schedule must be non-decreasing")


def margin_schedule(config: Stage2Config, steps_per_epoch):
    """Per-epoch margins: flat during warm-up epochs, then linear up to ``margin_end``."""
    E = config.epochs
    warm_steps = math.ceil(config.warmup_fraction * E * steps_per_epoch)
    first = min(E - 1, math.ceil(warm_steps / max(steps_per_epoch, 1)))
    out = []
    for e in range(E):
        if e < first:
            out.append(config.margin_start)
        elif E - 1 == first:
            out.append(config.margin_end)
        else:
            frac = (e - first) / (E - 1 - first)
            out.append(config.margin_start + (config.margin_end - config.margin_start) * frac)
    return out


class SupervisedTrainer:
    def __init__(self, net, head, config: Stage2Config, total_steps):
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

    def step(self, segments, labels, margin):
        labels = np.asarray(labels, dtype=np.int64)

        def objective(o):
            loss, do, post = supervised_objective(o, labels, self.config.scale, margin)
            return loss, do, post

        loss, grads, post = forward_backward(self.net, self.head, segments, objective, self.config.shard_size)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite training loss at step {self.opt.step}",
                diagnostic_snapshot(self.params, self.opt, loss),
            )
        sgd_step(self.params, grads, self.opt)
        return loss, int(np.sum(np.argmax(post, axis=1) == labels))


def prepare_items(self_labeled, min_chunks):
    """Class remapping and chunk list; celebrities below ``min_chunks`` are dropped."""
    classes = [j for j in sorted(self_labeled.chunks) if len(self_labeled.chunks[j]) >= min_chunks]
    dropped = [j for j in sorted(self_labeled.chunks) if j not in classes]
    if dropped:
        log.info("stage2: %d celebrities below %d chunks excluded: %s", len(dropped), min_chunks, dropped)
    class_of = {j: k for k, j in enumerate(classes)}
    items = [(class_of[j], rid, ch) for j, rid, ch in self_labeled.items() if j in class_of]
    return classes, items


def train_stage2(self_labeled, features: dict, config: Stage2Config, seed=0, on_epoch=None):
    """Fresh supervised training on pseudo-labeled chunks; returns ``(net, head, log, classes)``."""
    config.validate()
    classes, items = prepare_items(self_labeled, config.min_chunks_per_class)
    if not items:
        raise ValueError("self-labeled set is empty; nothing to train on")
    init_rng = np.random.default_rng([seed, _INIT_STREAM])
    rng = np.random.default_rng([seed, _SAMPLE_STREAM])

    # one held-out chunk per class for the first cv_speakers classes with >= 3 chunks
    cv_items, train_items = [], []
    cv_budget = config.cv_speakers
    taken = set()
    for k, rid, ch in reversed(items):
        n_k = sum(1 for kk, _, _ in items if kk == k)
        if k not in taken and k < cv_budget and n_k >= 3:
            cv_items.append((k, rid, ch))
            taken.add(k)
        else:
            train_items.append((k, rid, ch))
    train_items.reverse()
    cv_items.sort(key=lambda it: it[0])

    input_dim = next(iter(features.values())).shape[1]
    net = EmbeddingNet.init(input_dim, config.hidden, config.embedding_dim, init_rng)
    head = ClassificationHead.init(len(classes), config.embedding_dim, config.sub_centers, init_rng)
    steps_per_epoch = math.ceil(len(train_items) / config.batch_size)
    trainer = SupervisedTrainer(net, head, config, steps_per_epoch * config.epochs)
    margins = margin_schedule(config, steps_per_epoch)

    history = []
    for epoch in range(config.epochs):
        margin = margins[epoch]
        lr_start = trainer.opt.lr
        order = rng.permutation(len(train_items))
        step_losses, correct = [], 0
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            segs, labels = [], []
            for i in idx:
                k, rid, ch = train_items[i]
                segs.append(crop_segment(features[rid][ch.start:ch.end], config.seg_frames, rng))
                labels.append(k)
            loss, ok = trainer.step(instance_normalize(np.stack(segs)), labels, margin)
            step_losses.append(loss)
            correct += ok
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(step_losses)),
            "train_accuracy": correct / len(train_items),
            "lr": lr_start,
            "margin": margin,
            "steps": trainer.opt.step,
            "step_losses": step_losses,
        }
        if cv_items:
            cv_loss = chunk_loss(net, head, features, cv_items, config.scale, config.margin_start, config.eval_max_frames)
            entry["cv_loss"] = cv_loss
            trainer.opt.report_cv(cv_loss)
        history.append(entry)
        log.info("stage2 epoch %d loss %.4f margin %.3f lr %.4g", epoch, entry["train_loss"], margin, lr_start)
        if on_epoch is not None:
            on_epoch(entry)
    return net, head, history, classes


def chunk_loss(net, head, features, items, scale, margin, max_frames=2000):
    z = np.stack([embed_features(net, features[rid][ch.start:ch.end], max_frames) for _, rid, ch in items])
    o, _ = head.similarities(z)
    losses, _, _ = aam_forward(o, [k for k, _, _ in items], scale, margin)
    return float(losses.mean())
