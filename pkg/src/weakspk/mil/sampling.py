"""Minibatch construction: one fixed-length crop per cluster of each recording."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..features import instance_normalize

log = logging.getLogger(__name__)


@dataclass
class Minibatch:
    recording_ids: list[int]
    targets: np.ndarray
    segments: np.ndarray  # (N, T_seg, F), instance-normalized
    groups: list[tuple[int, int]]  # rows of ``segments`` belonging to each recording

    @property
    def num_segments(self):
        return self.segments.shape[0]


def crop_segment(chunk_features, seg_frames, rng):
    """Uniform random contiguous crop; short chunks are tiled cyclically first."""
    x = np.asarray(chunk_features)
    L = x.shape[0]
    if L >= seg_frames:
        off = int(rng.integers(0, L - seg_frames + 1))
        return x[off:off + seg_frames]
    off = int(rng.integers(0, L))
    return x[(off + np.arange(seg_frames)) % L]


def center_crop(x, max_frames):
    L = x.shape[0]
    if L <= max_frames:
        return x
    off = (L - max_frames) // 2
    return x[off:off + max_frames]


def plan_epoch(num_clusters: dict[int, int], budget, rng):
    """Shuffle recordings and pack them greedily into batches of at most ``budget`` segments.

    Recordings with more clusters than the whole budget are skipped.
    """
    ids = sorted(num_clusters)
    order = [ids[i] for i in rng.permutation(len(ids))]
    batches, current, used = [], [], 0
    for rid in order:
        c = num_clusters[rid]
        if c > budget:
            log.warning("recording %s has %d clusters > batch budget %d; skipped", rid, c, budget)
            continue
        if used + c > budget:
            batches.append(current)
            current, used = [], 0
        current.append(rid)
        used += c
    if current:
        batches.append(current)
    return batches


def build_minibatch(recording_ids, features, clusterings, labels, seg_frames, rng) -> Minibatch:
    """``features``/``clusterings``/``labels`` are dicts keyed by recording id."""
    segs, groups, targets = [], [], []
    for rid in recording_ids:
        start = len(segs)
        x = features[rid]
        clusters = clusterings[rid].clusters
        for c in sorted(clusters):
            chunks = clusters[c]
            ch = chunks[int(rng.integers(len(chunks)))]
            segs.append(crop_segment(x[ch.start:ch.end], seg_frames, rng))
        groups.append((start, len(segs)))
        targets.append(labels[rid])
    return Minibatch(
        list(recording_ids),
        np.asarray(targets, dtype=np.int64),
        instance_normalize(np.stack(segs)),
        groups,
    )


def sample_minibatch(features, clusterings, labels, seg_frames, budget, rng) -> Minibatch:
    """First minibatch of a freshly shuffled epoch."""
    counts = {rid: cl.num_clusters for rid, cl in clusterings.items()}
    plan = plan_epoch(counts, budget, rng)
    return build_minibatch(plan[0], features, clusterings, labels, seg_frames, rng)
