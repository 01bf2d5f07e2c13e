import numpy as np
import pytest

from oracles import cluster_posterior_oracle, recording_loss_oracle
from weakspk.mil.aam import AamConfig
from weakspk.mil.aggregation import AggregationConfig
from weakspk.mil.objective import error_signal, loss_gradients, supervised_objective, weak_objective


@pytest.mark.parametrize("kind", ["lse", "max"])
def test_loss_matches_oracle(rng, kind):
    for _ in range(30):
        C, J = int(rng.integers(1, 6)), int(rng.integers(2, 7))
        o = rng.uniform(-1, 1, size=(C, J))
        t = int(rng.integers(J))
        loss, _, _, _ = weak_objective(o, [(0, C)], [t], kind, 0.3, 30.0, 0.1)
        assert abs(loss - recording_loss_oracle(o.tolist(), t, kind, 0.3, 30.0, 0.1)) <= 1e-9


def test_gradient_matches_finite_difference_of_oracle(rng):
    o = rng.uniform(-0.9, 0.9, size=(4, 5))
    agg, aam = AggregationConfig("lse", 0.5), AamConfig(30.0, 0.1)
    g = loss_gradients(o, 2, agg, aam)
    h = 1e-6
    for idx in np.ndindex(*o.shape):
        a, b = o.copy(), o.copy()
        a[idx] += h
        b[idx] -= h
        num = (recording_loss_oracle(a.tolist(), 2, "lse", 0.5, 30, 0.1)
               - recording_loss_oracle(b.tolist(), 2, "lse", 0.5, 30, 0.1)) / (2 * h)
        assert abs(g[idx] - num) <= 1e-5 * max(1.0, abs(num))


def test_probability_normalizations(rng):
    for _ in range(200):
        C, J = int(rng.integers(1, 9)), int(rng.integers(2, 9))
        o = rng.uniform(-1, 1, size=(C, J))
        eps, w, post = error_signal(o, int(rng.integers(J)), AggregationConfig("lse", 0.2), AamConfig())
        assert abs(post.sum() - 1.0) <= 1e-12
        assert np.all(np.abs(w.sum(axis=0) - 1.0) <= 1e-12)
        assert abs(eps.sum()) <= 1e-12
        for j in range(J):
            assert np.allclose(w[:, j], cluster_posterior_oracle(list(o[:, j]), 0.2), atol=1e-12, rtol=0)


def test_error_signal_is_distributed_by_cluster_posterior(rng):
    o = rng.uniform(-1, 1, size=(3, 4))
    agg, aam = AggregationConfig("lse", 0.4), AamConfig(30.0, 0.0)
    eps, w, _ = error_signal(o, 1, agg, aam)
    g = loss_gradients(o, 1, agg, aam)
    assert np.allclose(g, 30.0 * w * eps[None, :], atol=1e-12)


def test_max_routes_gradient_to_argmax_cluster(rng):
    o = rng.uniform(-1, 1, size=(4, 3))
    g = loss_gradients(o, 0, AggregationConfig("max"), AamConfig(30.0, 0.1))
    winners = np.argmax(o, axis=0)
    for j in range(3):
        nz = np.flatnonzero(g[:, j])
        assert set(nz) <= {winners[j]}


def test_positive_signal_on_target_negative_elsewhere(rng):
    o = rng.uniform(-1, 1, size=(3, 5))
    g = loss_gradients(o, 2, AggregationConfig("lse", 0.5), AamConfig())
    assert np.all(g[:, 2] <= 0)
    assert np.all(np.delete(g, 2, axis=1) >= 0)


@pytest.mark.parametrize("kind", ["lse", "max"])
def test_single_cluster_equals_supervised(rng, kind):
    o = rng.uniform(-1, 1, size=(6, 4))
    t = rng.integers(4, size=6)
    groups = [(i, i + 1) for i in range(6)]
    lw, dw, _, pw = weak_objective(o, groups, t, kind, 0.37, 30.0, 0.2)
    ls, ds, ps = supervised_objective(o, t, 30.0, 0.2)
    assert lw == ls
    assert np.array_equal(dw, ds)
    assert np.array_equal(pw, ps)


def test_minibatch_loss_is_mean_over_recordings(rng):
    o = rng.uniform(-1, 1, size=(5, 3))
    groups = [(0, 2), (2, 5)]
    both, _, _, _ = weak_objective(o, groups, [0, 2], "lse", 0.5, 30.0, 0.1)
    a, _, _, _ = weak_objective(o[:2], [(0, 2)], [0], "lse", 0.5, 30.0, 0.1)
    b, _, _, _ = weak_objective(o[2:], [(0, 3)], [2], "lse", 0.5, 30.0, 0.1)
    assert abs(both - (a + b) / 2) <= 1e-12
