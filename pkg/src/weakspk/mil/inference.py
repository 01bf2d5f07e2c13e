from __future__ import annotations

import numpy as np

from ..features import instance_normalize
from .aggregation import aggregate_with_weights
from .network import ClassificationHead, EmbeddingNet
from .sampling import center_crop

MIN_EMBED_FRAMES = 2


def embed_features(net: EmbeddingNet, features, max_frames=2000):
    """Unit embedding of a variable-length excerpt (center-cropped to ``max_frames``)."""
    x = center_crop(np.asarray(features, dtype=np.float64), max_frames)
    if x.shape[0] < MIN_EMBED_FRAMES:
        raise ValueError("excerpt too short to embed")
    return net.embed(instance_normalize(x))


def cluster_similarities(net, head: ClassificationHead, features, clustering, max_frames=2000):
    """``(C, J)`` similarities using each cluster's longest chunk."""
    rows = []
    for c in sorted(clustering.clusters):
        ch = max(clustering.clusters[c], key=lambda k: (len(k), -k.start))
        z = embed_features(net, features[ch.start:ch.end], max_frames)
        o, _ = head.similarities(z[None])
        rows.append(o[0])
    return np.stack(rows)


def recording_logits(net, head, features, clustering, kind, tau, max_frames=2000):
    o = cluster_similarities(net, head, features, clustering, max_frames)
    l, _ = aggregate_with_weights(o, kind, tau)
    return l
