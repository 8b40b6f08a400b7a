import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import oracle_edges, random_alpha, random_graph
from oracles import dense_rgcn
from spage.graph import build_graph
from spage.numerics import grad_check, parameter
from spage.pag import PagLayerParams, PagParams, aggregate, fuse, pag_forward, relation_counts


def layer_with(w_rel, w_self):
    F = w_self.shape[0]
    return PagLayerParams(parameter(w_rel), parameter(w_self), [], parameter(np.zeros((4 * F, F))),
                          parameter(np.zeros(F)))


def test_self_loops_identity_returns_input():
    graph = build_graph(4, [0, 1, 0, 1], 0, 0)
    g = np.random.default_rng(0).normal(size=(4, 3))
    layer = layer_with(np.zeros((4, 3, 3)), np.eye(3))
    out = aggregate(g, graph, np.ones(4), layer, activation="identity").data
    np.testing.assert_array_equal(out, g)


def test_zero_weights_give_zero():
    graph = build_graph(5, [0, 1, 0, 1, 1], 2, 2)
    rng = np.random.default_rng(1)
    layer = layer_with(np.zeros((graph.num_relations - 1, 3, 3)), np.zeros((3, 3)))
    out = aggregate(rng.normal(size=(5, 3)), graph, random_alpha(rng, graph), layer).data
    assert (out == 0).all()


def test_three_node_fixture_matches_dense():
    graph = build_graph(3, [0, 1, 0], 1, 1)
    rng = np.random.default_rng(2)
    g = rng.normal(size=(3, 2))
    alpha = random_alpha(rng, graph)
    w_rel, w_self = rng.normal(size=(graph.num_relations - 1, 2, 2)), rng.normal(size=(2, 2))
    out = aggregate(g, graph, alpha, layer_with(w_rel, w_self), activation="identity").data
    ref = dense_rgcn(g, oracle_edges(graph), alpha, w_rel, w_self)
    np.testing.assert_allclose(out, ref, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_sparse_equals_dense(n, R, seed):
    rng = np.random.default_rng(seed)
    graph = random_graph(rng, n, R)
    g = rng.normal(size=(n, 3))
    alpha = random_alpha(rng, graph)
    w_rel, w_self = rng.normal(size=(R, 3, 3)), rng.normal(size=(3, 3))
    out = aggregate(g, graph, alpha, layer_with(w_rel, w_self)).data
    ref = dense_rgcn(g, oracle_edges(graph), alpha, w_rel, w_self, activation="relu")
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-10)


def test_relation_counts():
    graph = build_graph(5, [0, 0, 0, 1, 1], 2, 0)
    counts = relation_counts(graph)
    for e in range(graph.num_edges):
        same = (graph.dst == graph.dst[e]) & (graph.relation == graph.relation[e])
        assert counts[e] == same.sum()


def test_deterministic_under_edge_shuffle():
    rng = np.random.default_rng(3)
    graph = build_graph(8, rng.integers(0, 3, 8), 3, 3, num_speakers=3)
    g = rng.normal(size=(8, 4))
    alpha = random_alpha(rng, graph)
    layer = layer_with(rng.normal(size=(graph.num_relations - 1, 4, 4)), rng.normal(size=(4, 4)))
    base = aggregate(g, graph, alpha, layer).data
    for _ in range(5):
        perm = rng.permutation(graph.num_edges)
        shuffled = type(graph)(graph.num_nodes, graph.src[perm], graph.dst[perm],
                               graph.relation[perm], graph.offset[perm], graph.past,
                               graph.future, graph.num_speakers)
        np.testing.assert_array_equal(aggregate(g, shuffled, alpha[perm], layer).data, base)


def test_locality_with_fixed_alpha():
    rng = np.random.default_rng(4)
    graph = build_graph(7, rng.integers(0, 2, 7), 1, 1, num_speakers=2)
    g = rng.normal(size=(7, 3))
    alpha = random_alpha(rng, graph)
    layer = layer_with(rng.normal(size=(graph.num_relations - 1, 3, 3)), rng.normal(size=(3, 3)))
    base = aggregate(g, graph, alpha, layer).data
    g2 = g.copy()
    g2[6] += 10.0  # node 6 only reaches node 5 within a 1-window
    out = aggregate(g2, graph, alpha, layer).data
    np.testing.assert_array_equal(out[:5], base[:5])


def test_fuse_identical_inputs():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(4, 3))
    out = fuse(a, a, rng.normal(size=(12, 3)), rng.normal(size=3)).data
    np.testing.assert_array_equal(out, a)


def test_fuse_saturated_gate():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    out = fuse(a, b, np.zeros((12, 3)), np.full(3, 50.0)).data
    np.testing.assert_allclose(out, a, rtol=0, atol=1e-12)


def test_fuse_hand_computed():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 0.0])
    w = np.zeros((8, 2))
    w[0, 0] = 1.0  # z_0 = sigmoid(a_0) = sigmoid(1)
    w[7, 1] = 0.5  # z_1 = sigmoid(0.5 * (a_1 - b_1)) = sigmoid(1)
    z = 1.0 / (1.0 + np.exp(-1.0))
    out = fuse(a, b, w, np.zeros(2)).data
    np.testing.assert_allclose(out, [z * 1 + (1 - z) * 3, z * 2], atol=1e-14)


def test_fuse_width_mismatch():
    with pytest.raises(ValueError, match="equal widths"):
        fuse(np.zeros(2), np.zeros(3), np.zeros((8, 2)), np.zeros(2))


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-40, 40))
def test_fuse_betweenness_extremes(x, y, bias):
    a, b = np.array([x]), np.array([y])
    out = fuse(a, b, np.zeros((4, 1)), np.array([bias])).data
    assert min(x, y) <= out[0] <= max(x, y)
    assert fuse(a, a, np.ones((4, 1)), np.array([bias])).data[0] == x


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fuse_betweenness(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)) * 5, rng.normal(size=(3, 4)) * 5
    out = fuse(a, b, rng.normal(size=(16, 4)), rng.normal(size=4)).data
    assert (out >= np.minimum(a, b)).all() and (out <= np.maximum(a, b)).all()


def test_zero_layers_returns_input():
    rng = np.random.default_rng(7)
    h = rng.normal(size=(3, 4))
    params = PagParams.init(rng, 4, 4, 0, 2, 3, 1, 1)
    np.testing.assert_array_equal(pag_forward(h, build_graph(3, [0, 1, 0], 1, 1), params).data, h)


def test_pag_gradients():
    rng = np.random.default_rng(8)
    graph = build_graph(4, [0, 1, 0, 1], 1, 1, num_speakers=2)
    params = PagParams.init(rng, 3, graph.num_relations - 1, 2, 2, 2, 1, 1)
    h = parameter(rng.normal(size=(4, 3)))
    target = rng.normal(size=(4, 3))

    def loss():
        return (pag_forward(h, graph, params, activation="tanh") * target).sum()

    layer = params.layers[1]
    named = {"h": h, "pos": params.pos_table, "w_rel": params.layers[0].w_rel,
             "w_self": layer.w_self, "fuse_w": layer.fuse_w, "head_w": layer.heads[0].w}
    report = grad_check(loss, named)
    assert report.ok, report.errors
