import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_normalized_adjacency
from specrec.data import BipartiteAdjacency, build_normalized_adjacency
from specrec.encoders import (
    EncoderParams,
    backward,
    forward,
    lightgcn_forward,
    load_checkpoint,
    mf_forward,
    propagate,
    save_checkpoint,
    scores,
    xavier_bound,
    xavier_init,
)
from specrec.errors import ConfigError, InvalidInputError
from specrec.seeding import rng_stream
from specrec.spectrum import erank
from specrec.synthetic import random_bipartite


def test_xavier_bound_value():
    assert xavier_bound(64) == pytest.approx(0.21650635094610965, abs=1e-15)


def test_xavier_within_bound_and_deterministic():
    a = xavier_init(100, 64, rng_stream(1, "init"))
    b = xavier_init(100, 64, rng_stream(1, "init"))
    np.testing.assert_array_equal(a, b)
    assert np.abs(a).max() <= xavier_bound(64)


def test_xavier_near_uniform_spectrum():
    assert erank(xavier_init(10_000, 64, 0)) >= 60


def test_xavier_rejects_bad_shape():
    with pytest.raises(InvalidInputError):
        xavier_init(0, 4, 0)


def test_mf_identity():
    E = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(mf_forward(EncoderParams(E)), E)


def test_scores():
    assert scores(np.array([1.0, 0.0]), np.array([0.0, 1.0]))[0] == 0.0
    u = np.array([0.6, 0.8])
    assert scores(u, u)[0] == pytest.approx(1.0)


def _empty_adj(n, nu):
    return BipartiteAdjacency(sp.csr_matrix((n, n)), np.zeros(n), nu)


def test_lightgcn_empty_graph_mean():
    E = np.random.default_rng(0).standard_normal((4, 3))
    H = lightgcn_forward(EncoderParams(E, "lightgcn", 3, "mean"), _empty_adj(4, 2))
    np.testing.assert_allclose(H, E / 4)


def test_lightgcn_single_edge_sum():
    adj = build_normalized_adjacency([(0, 0)], 1, 1)
    E = np.array([[1.0, 2.0], [10.0, 20.0]])
    H = lightgcn_forward(EncoderParams(E, "lightgcn", 1, "sum"), adj)
    np.testing.assert_allclose(H[0], E[0] + E[1])


def test_mean_is_sum_over_layers_plus_one():
    adj = build_normalized_adjacency(random_bipartite(5, 6, 0.4, 0), 5, 6)
    E = np.random.default_rng(1).standard_normal((11, 4))
    s = lightgcn_forward(EncoderParams(E, "lightgcn", 3, "sum"), adj)
    m = lightgcn_forward(EncoderParams(E, "lightgcn", 3, "mean"), adj)
    np.testing.assert_allclose(m, s / 4, atol=1e-14)


def test_matches_dense_polynomial():
    pairs = random_bipartite(5, 4, 0.5, 2)
    adj = build_normalized_adjacency(pairs, 5, 4)
    A = dense_normalized_adjacency(pairs, 5, 4)
    E = np.random.default_rng(2).standard_normal((9, 3))
    P = sum(np.linalg.matrix_power(A, k) for k in range(3)) / 3
    np.testing.assert_allclose(lightgcn_forward(EncoderParams(E, "lightgcn", 2), adj), P @ E, atol=1e-12)


def test_backward_is_adjoint():
    adj = build_normalized_adjacency(random_bipartite(6, 7, 0.3, 3), 6, 7)
    rng = np.random.default_rng(3)
    params = EncoderParams(rng.standard_normal((13, 4)), "lightgcn", 2)
    G = rng.standard_normal((13, 4))
    X = rng.standard_normal((13, 4))
    lhs = np.sum(G * propagate(adj, X, 2))
    rhs = np.sum(backward(params, adj, G) * X)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
def test_lightgcn_linear(seed, a, b):
    adj = build_normalized_adjacency(random_bipartite(4, 5, 0.4, seed), 4, 5)
    rng = np.random.default_rng(seed)
    E1, E2 = rng.standard_normal((9, 3)), rng.standard_normal((9, 3))
    f = lambda E: lightgcn_forward(EncoderParams(E, "lightgcn", 2), adj)
    np.testing.assert_allclose(f(a * E1 + b * E2), a * f(E1) + b * f(E2), atol=1e-9)


def test_depth_aggravates_collapse():
    pairs = random_bipartite(15, 15, 0.3, 5)
    adj = build_normalized_adjacency(pairs, 15, 15)
    E = np.random.default_rng(5).standard_normal((30, 8))
    e1 = erank(lightgcn_forward(EncoderParams(E, "lightgcn", 1, "sum"), adj))
    e6 = erank(lightgcn_forward(EncoderParams(E, "lightgcn", 6, "sum"), adj))
    assert e6 <= e1


def test_shape_mismatch():
    adj = build_normalized_adjacency([(0, 0)], 1, 1)
    with pytest.raises(InvalidInputError):
        lightgcn_forward(EncoderParams(np.ones((3, 2)), "lightgcn", 1), adj)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderParams(np.ones((2, 2)), "mlp")
    with pytest.raises(ConfigError):
        EncoderParams(np.ones((2, 2)), "lightgcn", 0)
    with pytest.raises(ConfigError):
        forward(EncoderParams(np.ones((2, 2)), "lightgcn", 1))


def test_checkpoint_roundtrip(tmp_path):
    E = np.random.default_rng(0).standard_normal((5, 3))
    csv_path, json_path = save_checkpoint(tmp_path / "ck", EncoderParams(E, "lightgcn", 2, "sum"), seed=7)
    params, meta = load_checkpoint(csv_path)
    np.testing.assert_array_equal(params.base_embeddings, E)
    assert (params.encoder_kind, params.layers, params.layer_combination) == ("lightgcn", 2, "sum")
    assert meta["seed"] == 7 and json.loads(json_path.read_text())["dim"] == 3
