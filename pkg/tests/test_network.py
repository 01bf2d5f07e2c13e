import numpy as np
import pytest

from gradcheck import gradient_error, supervised_instance, weak_instance
from oracles import embed_oracle
from weakspk.mil.network import ClassificationHead, EmbeddingNet, export_model, import_model, model_params


def test_forward_matches_frame_loop_oracle(rng):
    net = EmbeddingNet.init(5, (9, 7), 6, rng)
    x = rng.normal(size=(3, 20, 5))
    z, _ = net.forward(x)
    for n in range(3):
        assert np.allclose(z[n], embed_oracle(net.params, 2, x[n]), atol=1e-12)


def test_embeddings_are_unit_norm(rng):
    net = EmbeddingNet.init(4, (8,), 5, rng)
    z, _ = net.forward(rng.normal(size=(10, 30, 4)))
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)


def test_embedding_is_length_agnostic(rng):
    net = EmbeddingNet.init(4, (8,), 5, rng)
    for T in (2, 17, 400):
        assert net.embed(rng.normal(size=(T, 4))).shape == (5,)


def test_constant_input_uses_std_floor_without_nan(rng):
    net = EmbeddingNet.init(3, (4,), 5, rng)
    z, cache = net.forward(np.ones((2, 10, 3)))
    assert np.isfinite(z).all()
    grads = net.backward(np.ones_like(z), cache)
    assert all(np.isfinite(g).all() for g in grads.values())


def test_no_hidden_layer_network(rng):
    net = EmbeddingNet.init(4, (), 3, rng)
    assert net.input_dim == 4
    x = rng.normal(size=(2, 15, 4))
    z, _ = net.forward(x)
    assert np.allclose(z[0], embed_oracle(net.params, 0, x[0]), atol=1e-12)


def test_head_rows_normalized_and_subcenter_layout(rng):
    head = ClassificationHead.init(3, 4, 2, rng)
    assert head.weight.shape == (6, 4)
    assert np.allclose(np.linalg.norm(head.weight, axis=1), 1.0, atol=1e-12)
    z = rng.normal(size=(5, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    o, _ = head.similarities(z)
    raw = z @ head.centers.T
    assert np.array_equal(o, np.maximum(raw[:, 0::2], raw[:, 1::2]))


def test_subcenter_logit_dominates_each_center(rng):
    head = ClassificationHead.init(4, 6, 2, rng)
    z = rng.normal(size=(20, 6))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    o, _ = head.similarities(z)
    for k in range(2):
        single = ClassificationHead(head.weight[k::2].copy(), 4, 1)
        o1, _ = single.similarities(z)
        assert np.all(o >= o1 - 1e-15)


def test_subcenter_tie_picks_lower_index():
    w = np.array([[1.0, 0.0], [1.0, 0.0]])
    head = ClassificationHead(w, 1, 2)
    z = np.array([[0.6, 0.8]])
    o, cache = head.similarities(z)
    assert o[0, 0] == pytest.approx(0.6)
    assert cache[3][0, 0] == 0
    _, dweight = head.backward(np.ones((1, 1)), cache)
    assert np.any(dweight[0] != 0) and np.all(dweight[1] == 0)


def test_equidistant_subcenters_give_common_similarity():
    w = np.array([[1.0, 1.0], [1.0, -1.0]])
    head = ClassificationHead(w, 1, 2)
    o, _ = head.similarities(np.array([[1.0, 0.0]]))
    assert o[0, 0] == pytest.approx(1 / np.sqrt(2), abs=1e-15)


def test_exact_center_is_maximal(rng):
    head = ClassificationHead.init(6, 5, 1, rng)
    o, _ = head.similarities(head.centers[3:4])
    assert int(np.argmax(o[0])) == 3 and o[0, 3] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["lse", "max"])
@pytest.mark.parametrize("margin", [0.0, 0.1])
@pytest.mark.parametrize("sub_centers", [1, 2])
def test_weak_gradients(kind, margin, sub_centers):
    assert gradient_error(*weak_instance(11, kind=kind, margin=margin, sub_centers=sub_centers, recordings=2)) <= 1e-5


@pytest.mark.parametrize("sub_centers", [1, 2])
def test_supervised_gradients(sub_centers):
    assert gradient_error(*supervised_instance(5, sub_centers=sub_centers)) <= 1e-5


def test_deep_network_gradients():
    assert gradient_error(*weak_instance(3, hidden=(6, 5, 4), kind="lse", margin=0.2)) <= 1e-5


def test_export_import_roundtrip(rng):
    net = EmbeddingNet.init(4, (8, 6), 5, rng)
    head = ClassificationHead.init(3, 5, 2, rng)
    params, meta = export_model(net, head)
    net2, head2 = import_model(params, meta)
    x = rng.normal(size=(2, 10, 4))
    assert np.array_equal(net.forward(x)[0], net2.forward(x)[0])
    assert np.array_equal(head.weight, head2.weight) and head2.sub_centers == 2


def test_model_params_share_memory(rng):
    net = EmbeddingNet.init(4, (8,), 5, rng)
    head = ClassificationHead.init(3, 5, 1, rng)
    p = model_params(net, head)
    p["net.W0"][0, 0] = 42.0
    assert net.params["W0"][0, 0] == 42.0
    assert p["head.weight"] is head.weight
