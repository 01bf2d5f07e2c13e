import numpy as np
import pytest

from weakspk.diarization import Chunk, Clustering
from weakspk.mil.sampling import build_minibatch, center_crop, crop_segment, plan_epoch, sample_minibatch


def test_crop_is_contiguous_substring(rng):
    x = np.arange(50)[:, None] * np.ones((1, 3))
    for _ in range(20):
        seg = crop_segment(x, 20, rng)
        start = seg[0, 0]
        assert np.array_equal(seg[:, 0], np.arange(start, start + 20))


def test_short_chunk_tiled_cyclically(rng):
    x = np.arange(7)[:, None].astype(float)
    seg = crop_segment(x, 20, rng)
    assert seg.shape == (20, 1)
    assert np.all(np.diff(seg[:, 0]) % 7 == 1)


def test_exact_length_chunk_returned_whole(rng):
    x = rng.normal(size=(20, 2))
    assert np.array_equal(crop_segment(x, 20, rng), x)


def test_center_crop():
    x = np.arange(10)[:, None]
    assert np.array_equal(center_crop(x, 4)[:, 0], [3, 4, 5, 6])
    assert center_crop(x, 20) is x


def test_plan_respects_budget_and_covers_all(rng):
    counts = {i: int(c) for i, c in enumerate(rng.integers(1, 6, size=40))}
    plan = plan_epoch(counts, 12, rng)
    assert sorted(r for batch in plan for r in batch) == sorted(counts)
    assert all(sum(counts[r] for r in batch) <= 12 for batch in plan)


def test_oversized_recording_skipped(rng, caplog):
    plan = plan_epoch({0: 2, 1: 50, 2: 3}, 10, rng)
    assert sorted(r for b in plan for r in b) == [0, 2]
    assert "skipped" in caplog.text


def _toy(rng):
    feats = {0: rng.normal(size=(300, 3)), 1: rng.normal(size=(250, 3))}
    cl = {
        0: Clustering(0, {0: [Chunk(0, 100), Chunk(200, 300)], 1: [Chunk(100, 200)]}),
        1: Clustering(1, {0: [Chunk(0, 120)], 1: [Chunk(120, 180)], 2: [Chunk(180, 250)]}),
    }
    return feats, cl, {0: 3, 1: 1}


def test_one_segment_per_cluster_and_groups(rng):
    feats, cl, labels = _toy(rng)
    mb = build_minibatch([1, 0], feats, cl, labels, 50, rng)
    assert mb.segments.shape == (5, 50, 3)
    assert mb.groups == [(0, 3), (3, 5)]
    assert mb.targets.tolist() == [1, 3]
    # instance normalized
    assert np.allclose(mb.segments.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(mb.segments.std(axis=1), 1, atol=1e-9)


def test_segment_comes_from_its_cluster(rng):
    # cluster 0 alternates sign every frame, cluster 1 is a smooth ramp;
    # both patterns survive instance normalization
    t = np.arange(300)
    x = np.where(t < 100, (-1.0) ** t, t / 300.0)[:, None]
    cl = {0: Clustering(0, {0: [Chunk(0, 100)], 1: [Chunk(100, 300)]})}
    for _ in range(10):
        mb = build_minibatch([0], {0: x}, cl, {0: 0}, 40, rng)
        first, second = mb.segments[0, :, 0], mb.segments[1, :, 0]
        assert np.all(first[1:] * first[:-1] < 0)
        assert np.all(np.diff(second) > 0)


def test_sampling_is_seed_deterministic():
    feats, cl, labels = _toy(np.random.default_rng(0))
    a = sample_minibatch(feats, cl, labels, 40, 16, np.random.default_rng(5))
    b = sample_minibatch(feats, cl, labels, 40, 16, np.random.default_rng(5))
    assert np.array_equal(a.segments, b.segments) and a.recording_ids == b.recording_ids
