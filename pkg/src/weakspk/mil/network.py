"""Segment embedding network and classification head with explicit adjoints.

The extractor is a frame-wise tanh MLP, mean+std statistics pooling over
time, an affine embedding layer and length normalization.  All arrays are
float64; every forward returns a cache consumed by the matching backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-8
_NORM_EPS = 1e-12


@dataclass
class EmbeddingNet:
    params: dict[str, np.ndarray]
    num_hidden: int

    @classmethod
    def init(cls, input_dim, hidden=(128, 128), embedding_dim=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        params = {}
        fan_in = input_dim
        for i, width in enumerate(hidden):
            params[f"W{i}"] = rng.standard_normal((fan_in, width)) / np.sqrt(fan_in)
            params[f"b{i}"] = np.zeros(width)
            fan_in = width
        params["W_emb"] = rng.standard_normal((2 * fan_in, embedding_dim)) / np.sqrt(2 * fan_in)
        params["b_emb"] = np.zeros(embedding_dim)
        return cls(params, len(hidden))

    @property
    def input_dim(self):
        return self.params["W0"].shape[0] if self.num_hidden else self.params["W_emb"].shape[0] // 2

    @property
    def embedding_dim(self):
        return self.params["b_emb"].shape[0]

    def forward(self, x):
        """``x``: ``(N, T, F)`` -> unit embeddings ``(N, D)`` and a cache."""
        N, T, F = x.shape
        h = x.reshape(N * T, F)
        acts = [h]
        for i in range(self.num_hidden):
            h = np.tanh(h @ self.params[f"W{i}"] + self.params[f"b{i}"])
            acts.append(h)
        hs = h.reshape(N, T, -1)
        mu = hs.mean(axis=1)
        centered = hs - mu[:, None, :]
        var = np.mean(centered * centered, axis=1)
        floored = var <= STD_FLOOR**2
        sd = np.sqrt(np.where(floored, STD_FLOOR**2, var))
        pooled = np.concatenate([mu, sd], axis=1)
        e = pooled @ self.params["W_emb"] + self.params["b_emb"]
        norm = np.sqrt(np.sum(e * e, axis=1, keepdims=True)) + _NORM_EPS
        z = e / norm
        cache = (x.shape, acts, centered, sd, floored, pooled, norm, z)
        return z, cache

    def backward(self, dz, cache):
        (N, T, F), acts, centered, sd, floored, pooled, norm, z = cache
        grads = {}
        de = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm
        grads["W_emb"] = pooled.T @ de
        grads["b_emb"] = de.sum(axis=0)
        dpooled = de @ self.params["W_emb"].T
        H = sd.shape[1]
        dmu, dsd = dpooled[:, :H], dpooled[:, H:]
        dsd = np.where(floored, 0.0, dsd)
        dh = dmu[:, None, :] / T + centered * (dsd / (T * sd))[:, None, :]
        dh = dh.reshape(N * T, H)
        for i in reversed(range(self.num_hidden)):
            h = acts[i + 1]
            da = dh * (1.0 - h * h)
            grads[f"W{i}"] = acts[i].T @ da
            grads[f"b{i}"] = da.sum(axis=0)
            if i > 0:
                dh = da @ self.params[f"W{i}"].T
        return grads

    def embed(self, segment):
        """Unit embedding of one ``(T, F)`` segment of any length."""
        z, _ = self.forward(np.asarray(segment, dtype=np.float64)[None])
        return z[0]


@dataclass
class ClassificationHead:
    """``num_classes * sub_centers`` rows; row ``j*K + k`` is sub-center k of class j."""

    weight: np.ndarray
    num_classes: int
    sub_centers: int = 1

    @classmethod
    def init(cls, num_classes, embedding_dim, sub_centers=1, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.standard_normal((num_classes * sub_centers, embedding_dim))
        head = cls(w, num_classes, sub_centers)
        head.renormalize()
        return head

    def renormalize(self):
        self.weight /= np.linalg.norm(self.weight, axis=1, keepdims=True)

    @property
    def centers(self):
        return self.weight / np.linalg.norm(self.weight, axis=1, keepdims=True)

    def similarities(self, z):
        """``(N, D)`` unit embeddings -> ``(N, J)`` similarities and a cache.

        With sub-centers the class similarity is the max over its rows, ties
        going to the lower sub-center index.
        """
        row_norm = np.linalg.norm(self.weight, axis=1, keepdims=True)
        centers = self.weight / row_norm
        raw = z @ centers.T
        N = z.shape[0]
        grouped = raw.reshape(N, self.num_classes, self.sub_centers)
        pick = np.argmax(grouped, axis=2)
        o = np.take_along_axis(grouped, pick[:, :, None], axis=2)[:, :, 0]
        return o, (z, centers, row_norm, pick)

    def backward(self, do, cache):
        z, centers, row_norm, pick = cache
        N = z.shape[0]
        draw = np.zeros((N, self.num_classes, self.sub_centers))
        np.put_along_axis(draw, pick[:, :, None], do[:, :, None], axis=2)
        draw = draw.reshape(N, -1)
        dz = draw @ centers
        dcenters = draw.T @ z
        dweight = (dcenters - centers * np.sum(centers * dcenters, axis=1, keepdims=True)) / row_norm
        return dz, dweight


def model_params(net: EmbeddingNet, head: ClassificationHead):
    """Flat, ordered view of all trainable arrays (shared, not copied)."""
    params = {f"net.{k}": v for k, v in net.params.items()}
    params["head.weight"] = head.weight
    return params


def export_model(net: EmbeddingNet, head: ClassificationHead):
    params = model_params(net, head)
    meta = {
        "num_hidden": net.num_hidden,
        "num_classes": head.num_classes,
        "sub_centers": head.sub_centers,
    }
    return params, meta


def import_model(params, meta):
    net_params = {k[4:]: v.copy() for k, v in params.items() if k.startswith("net.")}
    net = EmbeddingNet(net_params, int(meta["num_hidden"]))
    head = ClassificationHead(params["head.weight"].copy(), int(meta["num_classes"]), int(meta["sub_centers"]))
    return net, head
