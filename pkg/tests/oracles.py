"""Independent reference implementations used to freeze expected values.

These deliberately avoid the package's vectorized code paths: plain Python
loops, ``math.fsum`` and brute-force enumeration wherever that is feasible.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# -- metrics ------------------------------------------------------------------

def rates_at(scores, labels, threshold):
    """Empirical miss / false-alarm rates when accepting ``score >= threshold``."""
    tar = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    p_miss = sum(1 for s in tar if s < threshold) / len(tar)
    p_fa = sum(1 for s in non if s >= threshold) / len(non)
    return p_miss, p_fa


def eer_oracle(scores, labels):
    thresholds = sorted(set(float(s) for s in scores)) + [math.inf]
    pts = [rates_at(scores, labels, t) for t in thresholds]
    for k, (pm, pf) in enumerate(pts):
        if pm >= pf:
            if k == 0 or pm == pf:
                return pm
            pm0, pf0 = pts[k - 1]
            d0, d1 = pm0 - pf0, pm - pf
            a = d0 / (d0 - d1)
            return pm0 + a * (pm - pm0)
    raise AssertionError("the reject-all point always has p_miss >= p_fa")


def min_dcf_oracle(scores, labels, p_tar=0.05, c_miss=1.0, c_fa=1.0):
    thresholds = sorted(set(float(s) for s in scores)) + [math.inf]
    best = math.inf
    for t in thresholds:
        pm, pf = rates_at(scores, labels, t)
        best = min(best, c_miss * p_tar * pm + c_fa * (1 - p_tar) * pf)
    return best / min(c_miss * p_tar, c_fa * (1 - p_tar))


# -- aggregation and AAM ------------------------------------------------------

def lse_oracle(column, tau):
    """tau * log( (1/C) sum exp(o_c / tau) ), computed with a max shift and fsum."""
    m = max(column)
    total = math.fsum(math.exp((o - m) / tau) for o in column)
    return m + tau * math.log(total / len(column))


def cluster_posterior_oracle(column, tau):
    m = max(column)
    e = [math.exp((o - m) / tau) for o in column]
    z = math.fsum(e)
    return [v / z for v in e]


def aam_loss_oracle(logits, target, scale, margin):
    x = logits[target]
    theta = math.acos(max(-1.0, min(1.0, x)))
    if theta + margin < math.pi:
        penalized = math.cos(theta + margin)
    else:
        penalized = x - margin * math.sin(margin)
    z = [scale * (penalized if j == target else v) for j, v in enumerate(logits)]
    m = max(z)
    lse = m + math.log(math.fsum(math.exp(v - m) for v in z))
    return lse - z[target], [math.exp(v - lse) for v in z]


def recording_loss_oracle(o, target, kind, tau, scale, margin):
    """Loss of one recording from its (C, J) similarity matrix."""
    C, J = len(o), len(o[0])
    if kind == "max":
        logits = [max(o[c][j] for c in range(C)) for j in range(J)]
    else:
        logits = [lse_oracle([o[c][j] for c in range(C)], tau) for j in range(J)]
    return aam_loss_oracle(logits, target, scale, margin)[0]


# -- finite differences ---------------------------------------------------------

def central_difference(f, arrays, step=1e-5):
    """Gradient of scalar ``f()`` w.r.t. every entry of each array (modified in place)."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    """Per-tensor ``max|a - n| / max|n|`` (absolute when the tensor is all zero)."""
    worst = 0.0
    for k in numeric:
        scale = np.max(np.abs(numeric[k]))
        err = np.max(np.abs(analytic[k] - numeric[k]))
        worst = max(worst, err / scale if scale > 0 else err)
    return worst


# -- network ------------------------------------------------------------------

def embed_oracle(params, num_hidden, segment):
    """Frame loop forward pass of the statistics-pooling extractor."""
    frames = []
    for x in segment:
        h = np.asarray(x, dtype=np.float64)
        for i in range(num_hidden):
            h = np.tanh(h @ params[f"W{i}"] + params[f"b{i}"])
        frames.append(h)
    H = np.array(frames)
    mu = H.mean(axis=0)
    sd = np.sqrt(((H - mu) ** 2).mean(axis=0))
    e = np.concatenate([mu, sd]) @ params["W_emb"] + params["b_emb"]
    return e / np.linalg.norm(e)


# -- diarization ---------------------------------------------------------------

def gaussian_logdet_oracle(x):
    cov = np.cov(x, rowvar=False, bias=True)
    F = cov.shape[0]
    cov = cov + 1e-6 * np.trace(cov) / F * np.eye(F)
    return np.linalg.slogdet(cov)[1]


def delta_bic_oracle(a, b, lam):
    ab = np.vstack([a, b])
    F = a.shape[1]
    penalty = 0.5 * (F + F * (F + 1) / 2) * math.log(len(ab))
    return (
        0.5 * len(ab) * gaussian_logdet_oracle(ab)
        - 0.5 * len(a) * gaussian_logdet_oracle(a)
        - 0.5 * len(b) * gaussian_logdet_oracle(b)
        - lam * penalty
    )


def path_score(loglik, path, min_duration, self_loop):
    """Log score of a state path under the minimum-duration HMM (−inf if a run is too short)."""
    T, C = loglik.shape
    runs = []
    start = 0
    for t in range(1, T + 1):
        if t == T or path[t] != path[start]:
            runs.append((path[start], t - start))
            start = t
    if any(n < min_duration for _, n in runs):
        return -math.inf
    norm = math.log(self_loop + C - 1)
    score = -math.log(C) + math.fsum(loglik[t, path[t]] for t in range(T))
    score += sum((n - min_duration) * (math.log(self_loop) - norm) for _, n in runs)
    score += (len(runs) - 1) * (-norm)
    return score


def best_path_score(loglik, min_duration, self_loop):
    T, C = loglik.shape
    best = -math.inf
    for path in itertools.product(range(C), repeat=T):
        best = max(best, path_score(loglik, path, min_duration, self_loop))
    return best


def purity_coverage_oracle(est, truth):
    est = list(est)
    truth = list(truth)
    clusters = sorted(set(c for c in est if c >= 0))
    covered = [(c, s) for c, s in zip(est, truth) if c >= 0]
    purity_num = 0
    for c in clusters:
        owners = [s for cc, s in covered if cc == c]
        purity_num += max(owners.count(s) for s in set(owners))
    speakers = sorted(set(s for _, s in covered))
    cov = []
    for s in speakers:
        mine = [c for c, ss in covered if ss == s]
        cov.append(max(mine.count(c) for c in set(mine)) / len(mine))
    return purity_num / len(covered), sum(cov) / len(cov)
