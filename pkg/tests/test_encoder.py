import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from mgae.encoder import (Encoder, EncoderConfig, encode_full_graph, full_graph, gcn_forward,
                          gcn_operator, normalize_gcn, prepare_input, reserved_graph, sage_forward,
                          stack_values)
from mgae.errors import ConfigError, DimensionError
from mgae.evaluation import node_readout
from mgae.masking import MaskSplit, mask_directed, mask_undirected
from mgae.tensor import Parameter, Tensor, add, finite_diff_check, hadamard, sum_all


def dense_adjacency(n, arcs):
    """a[v, u] = 1 for every arc u -> v."""
    a = np.zeros((n, n))
    for u, v in arcs:
        a[v, u] = 1.0
    return a


def dense_gcn(n, arcs, x, weights):
    a = dense_adjacency(n, arcs) + np.eye(n)
    d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    a_hat = d @ a @ d
    out, h = [], x
    for k, w in enumerate(weights):
        h = a_hat @ h @ w
        if k < len(weights) - 1:
            h = np.maximum(h, 0.0)
        out.append(h)
    return out


def dense_sage(n, arcs, x, weights):
    a = dense_adjacency(n, arcs)
    deg = a.sum(axis=1, keepdims=True)
    m = np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)
    out, h = [], x
    for k, w in enumerate(weights):
        h = np.concatenate([h, m @ h], axis=1) @ w
        if k < len(weights) - 1:
            h = np.maximum(h, 0.0)
        out.append(h)
    return out


def both_directions(edges):
    return np.concatenate([edges, edges[:, ::-1]]) if len(edges) else edges


class TestConfig:
    def test_uniform(self):
        cfg = EncoderConfig.uniform("sage", 3, 16)
        assert cfg.dims == (16, 16, 16) and cfg.layers == 3 and cfg.dim == 16

    @pytest.mark.parametrize("kwargs", [dict(arch="gat", dims=(4,)), dict(arch="gcn", dims=())])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            EncoderConfig(**kwargs)


class TestNormalization:
    def test_isolated_node(self):
        coef = normalize_gcn(reserved_graph(1, np.zeros((0, 2))))
        np.testing.assert_array_equal(coef.self_loop, [1.0])

    def test_single_edge(self):
        op = gcn_operator(reserved_graph(2, [[0, 1], [1, 0]])).toarray()
        np.testing.assert_allclose(op, [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)

    def test_matches_dense_formula(self, rng):
        n = 30
        arcs = both_directions(random_graph(n, 0.15, rng))
        a = dense_adjacency(n, arcs) + np.eye(n)
        d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
        h = rng.standard_normal((n, 5))
        np.testing.assert_allclose(gcn_operator(reserved_graph(n, arcs)) @ h, d @ a @ d @ h,
                                   rtol=0, atol=1e-10)


class TestGcn:
    def test_isolated_node_identity(self, rng):
        enc = Encoder(EncoderConfig.uniform("gcn", 1, 3), 3, rng)
        enc.weights[0].value = np.eye(3)
        x = np.array([[0.5, -1.0, 2.0]])
        stack = gcn_forward(reserved_graph(1, np.zeros((0, 2))), x, enc)
        np.testing.assert_array_equal(stack[0].value, x)

    def test_zero_features(self, rng):
        enc = Encoder(EncoderConfig.uniform("gcn", 2, 4), 3, rng)
        stack = enc.forward(reserved_graph(5, [[0, 1], [2, 3]]), np.zeros((5, 3)))
        assert all(np.all(h.value == 0) for h in stack)

    def test_dense_oracle_n6(self, rng):
        n = 6
        arcs = both_directions(random_graph(n, 0.5, rng))
        x = rng.standard_normal((n, 3))
        enc = Encoder(EncoderConfig(arch="gcn", dims=(4, 2)), 3, rng)
        got = stack_values(enc.forward(reserved_graph(n, arcs), x))
        want = dense_gcn(n, arcs, x, [w.value for w in enc.weights])
        assert len(got) == 2
        for g, w in zip(got, want):
            np.testing.assert_allclose(g, w, rtol=0, atol=1e-10)

    def test_feature_width_mismatch(self, rng):
        enc = Encoder(EncoderConfig.uniform("gcn", 2, 4), 3, rng)
        with pytest.raises(DimensionError):
            enc.forward(reserved_graph(4, [[0, 1]]), np.ones((4, 5)))

    def test_directed_arcs_are_one_way(self, rng):
        enc = Encoder(EncoderConfig.uniform("gcn", 1, 2), 2, rng)
        x = np.zeros((2, 2))
        x[0] = [1.0, 1.0]
        # the only arc is 0 -> 1: node 1 hears node 0, node 0 hears nothing
        h = enc.forward(reserved_graph(2, [[0, 1]]), x)[0].value
        assert np.any(h[1] != 0)
        np.testing.assert_array_equal(h[0], x[0] @ enc.weights[0].value)


class TestSage:
    def test_isolated_node_neighbour_half_is_zero(self, rng):
        enc = Encoder(EncoderConfig.uniform("sage", 1, 2), 2, rng)
        w = enc.weights[0]
        w.value = np.vstack([np.zeros((2, 2)), np.eye(2)])
        h = sage_forward(reserved_graph(3, [[1, 2]]), rng.standard_normal((3, 2)), enc)[0].value
        np.testing.assert_array_equal(h[0], 0.0)

    def test_identical_neighbours(self, rng):
        enc = Encoder(EncoderConfig.uniform("sage", 1, 2), 2, rng)
        enc.weights[0].value = np.vstack([np.zeros((2, 2)), np.eye(2)])
        x = np.array([[9.0, 9.0], [0.25, -3.0], [0.25, -3.0], [0.25, -3.0]])
        h = enc.forward(reserved_graph(4, [[1, 0], [2, 0], [3, 0]]), x)[0].value
        np.testing.assert_allclose(h[0], [0.25, -3.0], rtol=0, atol=1e-15)

    def test_weight_shape(self, rng):
        enc = Encoder(EncoderConfig(arch="sage", dims=(5, 3)), 7, rng)
        assert [w.value.shape for w in enc.weights] == [(14, 5), (10, 3)]

    def test_dense_oracle_n6(self, rng):
        n = 6
        arcs = both_directions(random_graph(n, 0.5, rng))
        x = rng.standard_normal((n, 3))
        enc = Encoder(EncoderConfig(arch="sage", dims=(4, 2)), 3, rng)
        got = stack_values(enc.forward(reserved_graph(n, arcs), x))
        want = dense_sage(n, arcs, x, [w.value for w in enc.weights])
        for g, w in zip(got, want):
            np.testing.assert_allclose(g, w, rtol=0, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 50), arch=st.sampled_from(["gcn", "sage"]),
       directed=st.booleans())
def test_oracle_equivalence(seed, n, arch, directed):
    rng = np.random.default_rng(seed)
    edges = random_graph(n, min(1.0, 4.0 / max(n, 1)), rng)
    arcs = both_directions(edges)
    if directed and len(arcs):
        arcs = arcs[rng.random(len(arcs)) < 0.5]
    x = rng.standard_normal((n, 4))
    enc = Encoder(EncoderConfig(arch=arch, dims=(6, 3)), 4, rng)
    got = stack_values(enc.forward(reserved_graph(n, arcs), x))
    oracle = dense_gcn if arch == "gcn" else dense_sage
    for g, w in zip(got, oracle(n, arcs, x, [p.value for p in enc.weights])):
        np.testing.assert_allclose(g, w, rtol=0, atol=1e-10)


class TestLocality:
    @pytest.mark.parametrize("arch", ["gcn", "sage"])
    def test_far_node_does_not_reach(self, arch, rng):
        # path 0-1-2-3-4-5-6: node 6 is 6 hops from node 0
        edges = np.array([[i, i + 1] for i in range(6)])
        graph = full_graph(7, edges)
        enc = Encoder(EncoderConfig.uniform(arch, 2, 3), 2, rng)
        x = rng.standard_normal((7, 2))
        base = stack_values(enc.forward(graph, x))
        x2 = x.copy()
        x2[6] += 10.0
        moved = stack_values(enc.forward(graph, x2))
        for k in range(2):
            reach = k + 1
            np.testing.assert_array_equal(base[k][:6 - reach], moved[k][:6 - reach])
            assert np.any(base[k][6] != moved[k][6])

    def test_masked_arcs_are_invisible(self, rng):
        edges = random_graph(20, 0.3, rng)
        split = mask_undirected(edges, 0.5, rng)
        x = rng.standard_normal((20, 3))
        enc = Encoder(EncoderConfig.uniform("gcn", 2, 4), 3, rng)
        # same reserved arcs, entirely different masked arcs
        rewired = MaskSplit(both_directions(random_graph(20, 0.5, rng)), split.reserved,
                            "undirected", 0.5)
        a = stack_values(enc.forward(reserved_graph(20, split.reserved), x))
        b = stack_values(enc.forward(reserved_graph(20, rewired.reserved), x))
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)


class TestFullGraph:
    def test_equals_forward_on_unmasked_graph(self, rng):
        edges = random_graph(15, 0.3, rng)
        x = rng.standard_normal((15, 3))
        enc = Encoder(EncoderConfig.uniform("gcn", 2, 4), 3, rng)
        a = stack_values(encode_full_graph(edges, x, enc))
        b = stack_values(enc.forward(reserved_graph(15, both_directions(edges)), x))
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_mask_independent(self, rng):
        edges = random_graph(15, 0.3, rng)
        x = rng.standard_normal((15, 3))
        enc = Encoder(EncoderConfig.uniform("sage", 2, 4), 3, rng)
        mask_directed(edges, 0.7, 0)
        a = stack_values(encode_full_graph(edges, x, enc))
        mask_directed(edges, 0.2, 1)
        b = stack_values(encode_full_graph(edges, x, enc))
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)


class TestSparseInput:
    def test_sparse_features_become_csr(self, rng):
        x = np.zeros((10, 20))
        x[rng.integers(0, 10, 15), rng.integers(0, 20, 15)] = 1.0
        assert sp.issparse(prepare_input(x))
        assert not sp.issparse(prepare_input(rng.standard_normal((4, 4))))

    def test_sparse_and_dense_paths_agree(self, rng):
        x = np.zeros((12, 30))
        x[rng.integers(0, 12, 20), rng.integers(0, 30, 20)] = 1.0
        edges = random_graph(12, 0.3, rng)
        enc = Encoder(EncoderConfig.uniform("sage", 2, 4), 30, rng)
        graph = full_graph(12, edges)
        sparse = stack_values(enc.forward(graph, sp.csr_matrix(x)))
        dense = stack_values(enc.forward(graph, Tensor(x)))
        for a, b in zip(sparse, dense):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch", ["gcn", "sage"])
def test_encoder_gradients(arch, rng):
    edges = random_graph(8, 0.4, rng)
    graph = full_graph(8, edges)
    x = Parameter(rng.uniform(-1, 1, (8, 3)), "x")
    enc = Encoder(EncoderConfig.uniform(arch, 2, 4), 3, rng)
    c = [rng.uniform(-1, 1, (8, 4)) for _ in range(2)]

    def closure():
        stack = enc.forward(graph, x)
        return sum_all(add(hadamard(stack[0], c[0]), hadamard(stack[1], c[1])))

    report = finite_diff_check(closure, enc.parameters() + [x])
    assert report.passed, str(report)


@pytest.mark.cora
def test_cora_readout_shape(cora_paths):
    from mgae.graph import load_edge_list, load_features
    from mgae.model import MGAE
    el = load_edge_list(cora_paths["edges"])
    model = MGAE(el.num_nodes, load_features(cora_paths["features"], el.num_nodes), dim=128, layers=2)
    assert node_readout(model.embed(el.pairs)).shape == (2708, 256)
