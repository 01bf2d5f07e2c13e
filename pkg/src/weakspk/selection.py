"""Self-labeling: keep a diarization chunk iff the stage-1 model assigns it to the recording's celebrity.

Chunks are classified one by one from their plain similarities; no
aggregation and no margin are involved, and the positive AAM scale cannot
change an argmax so it is not applied either.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diarization import Chunk
from .mil.inference import embed_features

log = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    min_select_frames: int = 100
    max_select_frames: int = 2000
    frame_shift: float = 0.01


@dataclass
class SelfLabeledSet:
    chunks: dict[int, list[tuple[int, Chunk]]] = field(default_factory=dict)
    frame_shift: float = 0.01

    def items(self):
        """``(celebrity, recording_id, chunk)`` in celebrity, then recording order."""
        for j in sorted(self.chunks):
            for rid, ch in self.chunks[j]:
                yield j, rid, ch

    def summary(self):
        entries = list(self.items())
        frames = sum(len(ch) for _, _, ch in entries)
        return {
            "speakers": len(self.chunks),
            "recordings": len({rid for _, rid, _ in entries}),
            "chunks": len(entries),
            "hours": frames * self.frame_shift / 3600.0,
        }

    def manifest_lines(self):
        return [
            f"{rid}\t{ch.start * self.frame_shift:.2f}\t{ch.end * self.frame_shift:.2f}\t{j}"
            for j, rid, ch in self.items()
        ]

    @classmethod
    def from_manifest(cls, lines, frame_shift=0.01):
        out = cls(frame_shift=frame_shift)
        for line in lines:
            if not line.strip():
                continue
            rid, start, end, j = line.split("\t")
            ch = Chunk(int(round(float(start) / frame_shift)), int(round(float(end) / frame_shift)), int(rid))
            out.chunks.setdefault(int(j), []).append((int(rid), ch))
        return out


def classify_chunk(net, head, chunk_features, max_frames=2000):
    z = embed_features(net, chunk_features, max_frames)
    o, _ = head.similarities(z[None])
    return int(np.argmax(o[0]))


def build_self_labeled(net, head, features: dict, chunkings: dict, labels: dict,
                       config: SelectionConfig | None = None) -> SelfLabeledSet:
    """``chunkings`` maps recording id to its refined chunk list (cluster identity ignored)."""
    cfg = config or SelectionConfig()
    out = SelfLabeledSet(frame_shift=cfg.frame_shift)
    for rid in sorted(chunkings):
        target = labels[rid]
        for ch in sorted(chunkings[rid]):
            if len(ch) < cfg.min_select_frames:
                continue
            if classify_chunk(net, head, features[rid][ch.start:ch.end], cfg.max_select_frames) == target:
                out.chunks.setdefault(target, []).append((rid, ch))
    return out


def selection_metrics(self_labeled: SelfLabeledSet, ground_truth: dict, labels: dict, recording_ids=None):
    """Frame-weighted precision / recall of kept chunks against true target-speaker frames.

    An empty selection has precision 1.0 by convention (and is flagged).
    ``recording_ids`` restricts the recall denominator; by default every
    recording in ``labels`` counts.
    """
    ids = sorted(labels) if recording_ids is None else sorted(recording_ids)
    kept = hit = 0
    for _, rid, ch in self_labeled.items():
        kept += len(ch)
        hit += int(np.sum(ground_truth[rid][ch.start:ch.end] == labels[rid]))
    total_target = sum(int(np.sum(ground_truth[r] == labels[r])) for r in ids)
    empty = kept == 0
    return {
        "precision": 1.0 if empty else hit / kept,
        "recall": hit / total_target if total_target else 0.0,
        "hours_kept": kept * self_labeled.frame_shift / 3600.0,
        "empty": empty,
    }
