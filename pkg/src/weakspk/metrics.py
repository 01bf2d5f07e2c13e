"""Verification scoring: cosine trials, EER and normalized minimum DCF.

Operating points are taken at every distinct score (accept when
``score >= threshold``) plus the reject-all point.  EER is where miss and
false-alarm rates cross, linearly interpolated between the two adjacent
operating points (no ROC convex hull).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreSet:
    scores: np.ndarray
    is_target: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_target = np.asarray(self.is_target, dtype=bool)
        if self.scores.shape != self.is_target.shape:
            raise ValueError("scores and labels differ in length")
        if self.is_target.all() or not self.is_target.any():
            raise ValueError("need at least one target and one non-target score")


def operating_points(scores: ScoreSet):
    """Miss and false-alarm rates for thresholds at each distinct score and +inf."""
    order = np.argsort(scores.scores, kind="mergesort")
    s = scores.scores[order]
    tgt = scores.is_target[order]
    n_tar = tgt.sum()
    n_non = len(tgt) - n_tar
    # counts of targets / non-targets strictly below each position
    below_tar = np.concatenate([[0], np.cumsum(tgt)])
    below_non = np.concatenate([[0], np.cumsum(~tgt)])
    first = np.concatenate([[True], s[1:] != s[:-1]])
    idx = np.concatenate([np.flatnonzero(first), [len(s)]])
    p_miss = below_tar[idx] / n_tar
    p_fa = 1.0 - below_non[idx] / n_non
    return p_miss, p_fa


def eer(scores: ScoreSet) -> float:
    p_miss, p_fa = operating_points(scores)
    diff = p_miss - p_fa  # non-decreasing along thresholds
    k = int(np.flatnonzero(diff >= 0)[0])
    if k == 0 or diff[k] == 0:
        return float(p_miss[k])
    d0, d1 = diff[k - 1], diff[k]
    alpha = d0 / (d0 - d1)
    return float(p_miss[k - 1] + alpha * (p_miss[k] - p_miss[k - 1]))


def min_dcf(scores: ScoreSet, p_tar=0.05, c_miss=1.0, c_fa=1.0) -> float:
    p_miss, p_fa = operating_points(scores)
    cost = c_miss * p_tar * p_miss + c_fa * (1.0 - p_tar) * p_fa
    return float(cost.min() / min(c_miss * p_tar, c_fa * (1.0 - p_tar)))


def cosine_scores(embeddings: dict, trials):
    """Score each ``(enroll, test, is_target)`` trial by the dot product of unit embeddings."""
    scores, labels = [], []
    for enroll, test, is_target in trials:
        for uid in (enroll, test):
            if uid not in embeddings:
                raise KeyError(f"trial ({enroll}, {test}): no embedding for utterance {uid}")
        scores.append(float(np.dot(embeddings[enroll], embeddings[test])))
        labels.append(bool(is_target))
    return ScoreSet(np.array(scores), np.array(labels))


def score_trials(net, trial_list, utterance_features: dict, max_frames=2000):
    from .mil.inference import embed_features

    needed = sorted({u for e, t, _ in trial_list for u in (e, t)})
    missing = [u for u in needed if u not in utterance_features]
    if missing:
        bad = next((e, t) for e, t, _ in trial_list if e in missing or t in missing)
        raise KeyError(f"trial {bad}: utterance {missing[0]} has no features")
    emb = {u: embed_features(net, utterance_features[u], max_frames) for u in needed}
    return cosine_scores(emb, trial_list)
