"""Annotation-free baseline diarization.

Three classical stages run on frame features: BIC speaker change detection
with two adjacent sliding windows, BIC-based agglomerative clustering of the
resulting chunks with one full-covariance Gaussian per cluster, and Viterbi
re-segmentation with per-cluster diagonal GMMs trained by EM on the cluster's
own frames.  Nothing is pretrained; the defaults favor over-segmentation so
that clusters stay pure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class Chunk:
    start: int
    end: int
    recording_id: int = 0

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid chunk [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start


@dataclass
class Clustering:
    recording_id: int
    clusters: dict[int, list[Chunk]] = field(default_factory=dict)

    @property
    def num_clusters(self):
        return len(self.clusters)

    def chunks(self):
        return sorted(ch for chunks in self.clusters.values() for ch in chunks)

    def frame_labels(self, num_frames):
        """Cluster index per frame, -1 where no chunk covers the frame."""
        labels = np.full(num_frames, -1, dtype=np.int64)
        for c, chunks in self.clusters.items():
            for ch in chunks:
                labels[ch.start:ch.end] = c
        return labels

    def to_json(self):
        return {
            "recording_id": self.recording_id,
            "clusters": {str(c): [[ch.start, ch.end] for ch in chunks] for c, chunks in sorted(self.clusters.items())},
        }

    @classmethod
    def from_json(cls, obj):
        rid = int(obj["recording_id"])
        return cls(rid, {
            int(c): [Chunk(int(s), int(e), rid) for s, e in chunks]
            for c, chunks in obj["clusters"].items()
        })


def clustering_from_labels(recording_id, labels):
    """Contiguous runs of equal labels become chunks; labels are re-indexed by first appearance."""
    labels = np.asarray(labels)
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(labels)]])
    remap: dict[int, int] = {}
    clusters: dict[int, list[Chunk]] = {}
    for s, e in zip(starts, ends):
        lab = int(labels[s])
        if lab < 0:
            continue
        idx = remap.setdefault(lab, len(remap))
        clusters.setdefault(idx, []).append(Chunk(int(s), int(e), recording_id))
    return Clustering(recording_id, clusters)


# -- Gaussian statistics ------------------------------------------------------

@dataclass
class SegmentGaussian:
    """Sufficient statistics of a full-covariance Gaussian (ML estimate)."""

    count: int
    first: np.ndarray
    second: np.ndarray

    @classmethod
    def from_frames(cls, x):
        return cls(len(x), x.sum(axis=0), x.T @ x)

    def merge(self, other):
        return SegmentGaussian(self.count + other.count, self.first + other.first, self.second + other.second)

    @property
    def mean(self):
        return self.first / self.count

    @property
    def covariance(self):
        mu = self.mean
        return self.second / self.count - np.outer(mu, mu)

    def logdet(self):
        return regularized_logdet(self.covariance)


def regularized_logdet(cov):
    """log|cov + eps I| with eps = 1e-6 trace/F; works on stacks of matrices."""
    F = cov.shape[-1]
    eps = 1e-6 * np.trace(cov, axis1=-2, axis2=-1) / F
    reg = cov + eps[..., None, None] * np.eye(F)
    return np.linalg.slogdet(reg)[1]


def bic_penalty(dim, n):
    return 0.5 * (dim + dim * (dim + 1) / 2.0) * np.log(n)


def delta_bic(a: SegmentGaussian, b: SegmentGaussian, lam):
    """Positive when two Gaussians explain the data better than one."""
    ab = a.merge(b)
    dim = a.first.shape[0]
    return (
        0.5 * ab.count * ab.logdet()
        - 0.5 * a.count * a.logdet()
        - 0.5 * b.count * b.logdet()
        - lam * bic_penalty(dim, ab.count)
    )


# -- change detection ---------------------------------------------------------

def delta_bic_curve(features, win_frames, lam):
    """ΔBIC between windows ``[t-W, t)`` and ``[t, t+W)`` for ``t = W .. T-W``.

    Returns ``(positions, values)``.
    """
    x = features - features.mean(axis=0)
    T, F = x.shape
    W = win_frames
    if T < 2 * W:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    s1 = np.concatenate([np.zeros((1, F)), np.cumsum(x, axis=0)])
    s2 = np.concatenate([np.zeros((1, F, F)), np.cumsum(x[:, :, None] * x[:, None, :], axis=0)])
    t = np.arange(W, T - W + 1)

    def cov(a, b, n):
        mu = (s1[b] - s1[a]) / n
        return (s2[b] - s2[a]) / n - mu[:, :, None] * mu[:, None, :]

    ld_left = regularized_logdet(cov(t - W, t, W))
    ld_right = regularized_logdet(cov(t, t + W, W))
    ld_both = regularized_logdet(cov(t - W, t + W, 2 * W))
    values = 0.5 * (2 * W) * ld_both - 0.5 * W * ld_left - 0.5 * W * ld_right - lam * bic_penalty(F, 2 * W)
    return t, values


def change_detect(features, win_frames=100, lam=1.0, min_chunk_frames=100, recording_id=0) -> list[Chunk]:
    """Chunks tiling ``[0, T)`` split at positive local maxima of the ΔBIC curve."""
    T = features.shape[0]
    if T < 2 * min_chunk_frames:
        return [Chunk(0, T, recording_id)]
    pos, val = delta_bic_curve(features, win_frames, lam)
    if len(val) < 3:
        return [Chunk(0, T, recording_id)]
    is_peak = np.zeros(len(val), dtype=bool)
    is_peak[1:-1] = (val[1:-1] >= val[:-2]) & (val[1:-1] >= val[2:])
    candidates = np.flatnonzero(is_peak & (val > 0))
    order = candidates[np.argsort(-val[candidates], kind="stable")]
    bounds: list[int] = []
    for i in order:
        b = int(pos[i])
        if b < min_chunk_frames or T - b < min_chunk_frames:
            continue
        if all(abs(b - other) >= min_chunk_frames for other in bounds):
            bounds.append(b)
    edges = [0, *sorted(bounds), T]
    return [Chunk(s, e, recording_id) for s, e in zip(edges[:-1], edges[1:])]


# -- agglomerative clustering -------------------------------------------------

def bic_ahc(chunks, features, lam=2.5) -> Clustering:
    """Greedy merging of the pair with the smallest ΔBIC while it is negative."""
    chunks = sorted(chunks)
    rid = chunks[0].recording_id
    x = features - features.mean(axis=0)
    members = [[ch] for ch in chunks]
    stats = [SegmentGaussian.from_frames(x[ch.start:ch.end]) for ch in chunks]
    n = len(stats)
    dist = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = delta_bic(stats[i], stats[j], lam)
    alive = list(range(n))
    while len(alive) > 1:
        flat = int(np.argmin(dist))
        i, j = divmod(flat, n)
        if not dist[i, j] < 0:
            break
        stats[i] = stats[i].merge(stats[j])
        members[i].extend(members[j])
        alive.remove(j)
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        for k in alive:
            if k == i:
                continue
            a, b = (k, i) if k < i else (i, k)
            dist[a, b] = delta_bic(stats[a], stats[b], lam)
    ordered = sorted(alive, key=lambda k: min(members[k]))
    return Clustering(rid, {c: sorted(members[k]) for c, k in enumerate(ordered)})


# -- GMM / Viterbi re-segmentation -------------------------------------------

@dataclass
class DiagonalGMM:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def component_loglik(self, x):
        inv = 1.0 / self.variances
        quad = (x * x) @ inv.T - 2.0 * x @ (self.means * inv).T + np.sum(self.means**2 * inv, axis=1)
        norm = np.sum(np.log(2.0 * np.pi * self.variances), axis=1)
        return np.log(self.weights) - 0.5 * (quad + norm)

    def loglik(self, x):
        return logsumexp(self.component_loglik(x), axis=1)


def fit_gmm(x, n_components=8, n_iter=10, seed=0) -> DiagonalGMM:
    """Maximum-likelihood diagonal GMM by EM; one Gaussian when data is scarce."""
    n, F = x.shape
    global_var = x.var(axis=0) + 1e-6
    floor = 1e-3 * global_var
    if n < 2 * n_components or n_components == 1:
        return DiagonalGMM(np.ones(1), x.mean(axis=0, keepdims=True), np.maximum(x.var(axis=0), floor)[None])
    rng = np.random.default_rng(seed)
    gmm = DiagonalGMM(
        np.full(n_components, 1.0 / n_components),
        x[rng.choice(n, size=n_components, replace=False)].copy(),
        np.tile(global_var, (n_components, 1)),
    )
    for _ in range(n_iter):
        comp = gmm.component_loglik(x)
        resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
        nk = resp.sum(axis=0) + 1e-10
        means = resp.T @ x / nk[:, None]
        variances = resp.T @ (x * x) / nk[:, None] - means**2
        gmm = DiagonalGMM(nk / n, means, np.maximum(variances, floor))
    return gmm


def viterbi_min_duration(loglik, min_duration=50, self_loop=100.0):
    """Best state path with every visit lasting at least ``min_duration`` frames.

    ``loglik`` is ``(T, C)``.  Each state is a chain of ``min_duration``
    sub-states ending in a looping one; leaving the loop goes to any other
    state with uniform probability, staying carries the bonus ``self_loop``.
    """
    T, C = loglik.shape
    D = max(1, int(min_duration))
    if C == 1:
        return np.zeros(T, dtype=np.int64)
    if T < D:
        return np.full(T, int(np.argmax(loglik.sum(axis=0))), dtype=np.int64)
    norm = np.log(self_loop + C - 1)
    stay = np.log(self_loop) - norm
    switch = -norm
    cum = np.concatenate([np.zeros((1, C)), np.cumsum(loglik, axis=0)])
    cols = np.arange(C)

    enter = np.full((T, C), -np.inf)
    loop = np.full((T, C), -np.inf)
    enter_from = np.zeros((T, C), dtype=np.int64)
    loop_stayed = np.zeros((T, C), dtype=bool)
    enter[0] = loglik[0] - np.log(C)
    for t in range(T):
        if t > 0:
            prev = loop[t - 1]
            best = int(np.argmax(prev))
            masked = prev.copy()
            masked[best] = -np.inf
            second = int(np.argmax(masked))
            src = np.where(cols == best, second, best)
            enter[t] = prev[src] + switch + loglik[t]
            enter_from[t] = src
        s = t - D + 1
        chain = enter[s] + (cum[t + 1] - cum[s + 1]) if s >= 0 else np.full(C, -np.inf)
        keep = loop[t - 1] + stay + loglik[t] if t > 0 else np.full(C, -np.inf)
        loop_stayed[t] = keep > chain
        loop[t] = np.where(loop_stayed[t], keep, chain)

    path = np.empty(T, dtype=np.int64)
    c = int(np.argmax(loop[T - 1]))
    t = T - 1
    in_loop = True
    while t >= 0:
        if in_loop:
            if loop_stayed[t, c]:
                path[t] = c
                t -= 1
                continue
            s = t - D + 1
            path[s:t + 1] = c
            t = s
            in_loop = False
        else:
            path[t] = c
            if t == 0:
                break
            c = int(enter_from[t, c])
            t -= 1
            in_loop = True
    return path


def viterbi_refine(clustering: Clustering, features, n_components=8, n_iters=2,
                   min_duration=50, self_loop=100.0) -> Clustering:
    """Re-decode frame assignments with per-cluster GMMs; the cluster count never changes.

    An iteration whose decode would leave a cluster without frames is rejected
    and refinement stops with the previous segmentation.
    """
    if clustering.num_clusters <= 1:
        return clustering
    T = features.shape[0]
    labels = clustering.frame_labels(T)
    C = clustering.num_clusters
    current = clustering
    for _ in range(n_iters):
        gmms = [fit_gmm(features[labels == c], n_components) for c in range(C)]
        ll = np.stack([g.loglik(features) for g in gmms], axis=1)
        new_labels = viterbi_min_duration(ll, min_duration, self_loop)
        if len(np.unique(new_labels)) < C:
            log.debug("recording %s: refinement would drop a cluster; keeping previous", clustering.recording_id)
            break
        # keep original cluster indices (no re-indexing by first appearance)
        clusters: dict[int, list[Chunk]] = {c: [] for c in range(C)}
        for ch in clustering_from_labels(clustering.recording_id, new_labels).chunks():
            clusters[int(new_labels[ch.start])].append(ch)
        current = Clustering(clustering.recording_id, clusters)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return current


# -- full pipeline ------------------------------------------------------------

@dataclass
class DiarizationConfig:
    win_frames: int = 100
    cd_lambda: float = 1.0
    ahc_lambda: float = 2.5
    min_chunk_frames: int = 100
    n_components: int = 8
    n_iters: int = 2
    min_duration: int = 50
    self_loop: float = 100.0


@dataclass
class DiarizationResult:
    change_chunks: list[Chunk]
    ahc: Clustering
    refined: Clustering

    def chunks(self):
        """Chunks used for self-labeling: the refined segmentation, cluster identity ignored."""
        return self.refined.chunks()


def diarize(features, config: DiarizationConfig | None = None, recording_id=0) -> DiarizationResult:
    cfg = config or DiarizationConfig()
    chunks = change_detect(features, cfg.win_frames, cfg.cd_lambda, cfg.min_chunk_frames, recording_id)
    ahc = bic_ahc(chunks, features, cfg.ahc_lambda)
    refined = viterbi_refine(ahc, features, cfg.n_components, cfg.n_iters, cfg.min_duration, cfg.self_loop)
    return DiarizationResult(chunks, ahc, refined)


# -- evaluation helpers -------------------------------------------------------

def purity_coverage(clustering: Clustering, ground_truth):
    """Frame-weighted cluster purity and mean per-speaker best-cluster coverage."""
    truth = np.asarray(ground_truth)
    labels = clustering.frame_labels(len(truth))
    mask = labels >= 0
    speakers, spk_idx = np.unique(truth[mask], return_inverse=True)
    table = np.zeros((clustering.num_clusters, len(speakers)))
    np.add.at(table, (labels[mask], spk_idx), 1)
    purity = table.max(axis=1).sum() / table.sum()
    coverage = np.mean(table.max(axis=0) / table.sum(axis=0))
    return float(purity), float(coverage)


def change_points(labels):
    labels = np.asarray(labels)
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1


def boundary_errors(estimated_labels, ground_truth):
    """For each true speaker change, frames to the nearest estimated change."""
    true_b = change_points(ground_truth)
    est_b = change_points(estimated_labels)
    if len(est_b) == 0:
        return np.full(len(true_b), len(ground_truth), dtype=np.int64)
    return np.array([int(np.min(np.abs(est_b - b))) for b in true_b], dtype=np.int64)
