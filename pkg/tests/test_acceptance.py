"""End-to-end acceptance checks, one test per criterion.

A PASS/FAIL line per criterion is printed in the terminal summary (see
conftest.py). Run just these with ``pytest tests/test_acceptance.py -v``.
"""
import math
import os
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from oracles import assert_grad_close, brute_force_eval, central_diff
from specrec.balancer import (
    AttentionParams,
    BalancerConfig,
    SideUpdate,
    balance_backward,
    balance_batch,
    directspec_update,
    dynamic_temperature,
    dynamic_temperature_grad,
    dynamic_temperature_table,
    normalize_rows,
)
from specrec.data import InteractionDataset, build_normalized_adjacency, load_interactions, split
from specrec.dynamics import simulate_filter_dynamics, toy_trajectory
from specrec.encoders import forward
from specrec.evaluation import evaluate, ndcg_at_k
from specrec.objectives import alignment_log_loss, bce_loss, bpr_loss, euclidean_alignment, l2_regularization
from specrec.seeding import rng_stream
from specrec.spectrum import verify_ssl_equivalence
from specrec.synthetic import as_train_only, dense_core_pairs, random_bipartite, two_component_pairs
from specrec.trainer import TrainConfig, train

pytestmark = pytest.mark.acceptance

D = 64


@pytest.fixture(scope="module")
def dense_core():
    return as_train_only(dense_core_pairs(rng=0), 200, 200)


def test_criterion_1_ssl_equivalences():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 65))
        d = int(rng.integers(2, min(32, n) + 1))
        H = rng.standard_normal((n, d))
        cols = H / np.linalg.norm(H, axis=0)
        for method, M in (("barlow_twins", cols), ("logdet", cols), ("scl", normalize_rows(H))):
            r = verify_ssl_equivalence(M, method)
            rel = r.absolute_gap / max(1.0, abs(r.pairwise_value))
            worst = max(worst, rel)
            assert rel < 1e-8, (method, n, d, r)
    print(f"worst relative gap {worst:.2e}")


def test_criterion_2_rescale_law():
    rng = np.random.default_rng(7)
    for trial in range(50):
        K = 1 + trial % 2
        n, d = int(rng.integers(4, 40)), int(rng.integers(2, 16))
        H = normalize_rows(rng.standard_normal((n, d)))
        U, s, Vt = np.linalg.svd(H, full_matrices=False)
        alpha = rng.uniform(0.05, 0.95) / s[0] ** (2 * K)
        assert 1 - alpha * s[0] ** (2 * K) > 0
        out = directspec_update(H, alpha, K)
        U2, s2, Vt2 = np.linalg.svd(out, full_matrices=False)
        np.testing.assert_allclose(s2, np.sort(s * (1 - alpha * s ** (2 * K)))[::-1], atol=1e-8)
        r = int(np.sum(s > 1e-10 * s[0]))
        assert np.max(subspace_angles(U[:, :r], U2[:, :r])) < 1e-6
        assert np.max(subspace_angles(Vt[:r].T, Vt2[:r].T)) < 1e-6


def test_criterion_3_toy_balancing():
    e = toy_trajectory(seed=42, size=10, alpha=0.05, iterations=50)
    assert np.all(np.diff(e) >= -1e-9)
    assert e.max() >= 9.5
    print(f"erank {e[0]:.4f} -> {e[-1]:.4f}, first >= 9.5 at iteration {int(np.argmax(e >= 9.5))}")


def test_criterion_4_low_pass_collapse():
    from scipy.sparse.csgraph import connected_components

    for seed in range(100):
        pairs = random_bipartite(10, 10, 0.3, seed)
        adj = build_normalized_adjacency(pairs, 10, 10)
        if connected_components(adj.matrix, directed=False)[0] == 1:
            break
    H0 = rng_stream(0, "init").standard_normal((20, 8))
    res = simulate_filter_dynamics(adj, None, 0.5, 500, H0, "low_pass", eps=1e-8)
    assert res.numeric_ranks[-1] == 1
    assert res.eranks[-1] < 1.2

    adj2 = build_normalized_adjacency(two_component_pairs(5), 10, 10)
    res2 = simulate_filter_dynamics(adj2, None, 0.5, 500, H0, "low_pass", eps=1e-8)
    assert res2.numeric_ranks[-1] == 2


def _steps_below(history, threshold):
    below = np.flatnonzero(history.eranks < threshold)
    return int(history.steps[below[0]]) if below.size else math.inf


def test_criterion_5_training_collapse(dense_core):
    base = dict(dim=D, learning_rate=0.05, epochs=10**6, max_steps=5000, eval_every=0, erank_log_interval=50, seed=42)
    euc = train(TrainConfig(objective="align_euclidean", **base), dense_core).history
    log = train(TrainConfig(objective="align_log", **base), dense_core).history
    t_euc, t_log = _steps_below(euc, 0.2 * D), _steps_below(log, 0.2 * D)
    print(f"steps to erank < {0.2 * D}: euclidean {t_euc}, log {t_log}")
    assert t_euc <= 5000
    assert t_euc < t_log


def test_criterion_6_collapse_immunity(dense_core):
    base = dict(dim=D, epochs=10**6, max_steps=10_000, eval_every=0, erank_log_interval=100, seed=42)
    spec = train(TrainConfig(objective="align_log", learning_rate=0.05,
                             balancer=BalancerConfig(mode="directspec", alpha=0.05), **base), dense_core).history
    bce = train(TrainConfig(objective="bce", use_positives=False, learning_rate=0.2, **base), dense_core).history
    print(f"directspec min erank {spec.eranks.min():.2f}, bce-negatives min erank {bce.eranks.min():.2f}")
    assert bce.eranks.min() < 0.3 * D
    assert spec.eranks.min() >= 0.9 * D


def _random_eval_instance(seed):
    rng = np.random.default_rng(seed)
    nu, ni, d = 20, int(rng.integers(8, 40)), int(rng.integers(2, 8))
    R = rng.random((nu, ni))
    train_p = np.argwhere(R < 0.2)
    test_p = np.argwhere((R >= 0.2) & (R < 0.35))
    allp = np.argwhere(R < 0.35)
    ds = InteractionDataset(nu, ni, allp, train=train_p, val=np.zeros((0, 2), dtype=np.int64), test=test_p)
    H = np.round(rng.standard_normal((nu + ni, d)), 1)
    return ds, H


def test_criterion_7_metric_oracle():
    assert ndcg_at_k([5, 9, 4], {9}, 10) == pytest.approx(1 / math.log2(3), abs=1e-15)
    for seed in range(50):
        ds, H = _random_eval_instance(seed)
        nu = ds.num_users
        scores = (H[:nu] @ H[nu:].T).tolist()
        train_sets = [set() for _ in range(nu)]
        test_sets = [set() for _ in range(nu)]
        for u, i in ds.train:
            train_sets[u].add(int(i))
        for u, i in ds.test:
            test_sets[u].add(int(i))
        report = evaluate(H, ds, ks=(1, 5, 10, 20))
        for k in (1, 5, 10, 20):
            rec, nd = brute_force_eval(scores, train_sets, test_sets, k)
            assert abs(report.recall(k) - rec) < 1e-10
            assert abs(report.ndcg(k) - nd) < 1e-10


def _find_citeulike():
    root = os.environ.get("SPECREC_DATA_DIR")
    if not root:
        return None
    for name, fmt in (("citeulike.txt", "pair_list"), ("users.dat", "citeulike_users"),
                      ("citeulike-a/users.dat", "citeulike_users")):
        path = Path(root) / name
        if path.exists():
            return path, fmt
    return None


def _tuned_test_ndcg(config_kwargs, ds, rates):
    """Pick the learning rate on validation nDCG@10, report test nDCG@10."""
    adj = build_normalized_adjacency(ds)
    best_val, test_at_best = -1.0, 0.0
    for lr in rates:
        res = train(TrainConfig(learning_rate=lr, **config_kwargs), ds)
        H = forward(res.params, adj)
        val = evaluate(H, ds, ks=(10,), split="val").ndcg(10)
        if val > best_val:
            best_val, test_at_best = val, evaluate(H, ds, ks=(10,)).ndcg(10)
    return test_at_best


def test_criterion_8_citeulike_end_to_end():
    found = _find_citeulike()
    if found is None:
        pytest.fail("CiteULike data not found: set SPECREC_DATA_DIR to a directory holding "
                    "citeulike.txt (user item pairs) or users.dat (citeulike-a layout)")
    path, fmt = found
    ds = split(load_interactions(path, format=fmt), rng_stream(42, "split"))
    common = dict(dim=64, batch_size=256, regularization=0.01, epochs=100, eval_every=5, seed=42)
    rates = (0.05, 0.2)
    spec = _tuned_test_ndcg(dict(objective="align_log", encoder_kind="mf",
                           balancer=BalancerConfig(mode="directspec_plus", alpha=1.1, tau0=3.0, tau1=3.0),
                           **common), ds, rates)
    bpr = _tuned_test_ndcg(dict(objective="bpr", encoder_kind="mf", **common), ds, rates)
    print(f"nDCG@10 directspec+ {spec:.4f}, bpr {bpr:.4f}")
    assert spec >= 0.20
    assert spec >= 1.25 * bpr


def test_criterion_9_gradient_suite():
    rng = np.random.default_rng(99)
    objectives = {
        "bpr": (bpr_loss, 3),
        "bce_pos": (lambda u, i: bce_loss(u, i, 1.0), 2),
        "bce_neg": (lambda u, i: bce_loss(u, i, 0.0), 2),
        "align_log": (alignment_log_loss, 2),
        "align_euclidean": (euclidean_alignment, 2),
        "l2": (lambda x: l2_regularization(x, 0.01), 1),
    }
    for name, (fn, arity) in objectives.items():
        for _ in range(100):
            d = int(rng.integers(1, 9))
            args = list(rng.standard_normal((arity, d)))
            grads = fn(*args).grads
            for k in range(arity):
                def f(x, k=k):
                    a = list(args)
                    a[k] = x
                    return fn(*a).value
                assert_grad_close(grads[k], central_diff(f, args[k]), rtol=1e-5)

    cfg = BalancerConfig(mode="directspec_plus", alpha=0.5, tau0=1.0, tau1=3.0, temperature_source="dynamic_attention")
    for _ in range(100):
        d = int(rng.integers(2, 6))
        hu, hv = rng.standard_normal((2, d))
        w = rng.standard_normal(2 * d)
        num = central_diff(lambda x: dynamic_temperature(AttentionParams(x), hu, hv), w)
        assert_grad_close(dynamic_temperature_grad(AttentionParams(w), hu, hv), num, rtol=1e-5)

        # through the whole balancing layer
        H, W = rng.standard_normal((2, 4, d))

        def layer(wv):
            g = dynamic_temperature_table(AttentionParams(wv), normalize_rows(H))
            return np.sum(W * balance_batch(H, cfg, g)[1])

        attn = AttentionParams(w)
        gamma = dynamic_temperature_table(attn, normalize_rows(H))
        before, after = balance_batch(H, cfg, gamma)
        _, g_w = balance_backward(SideUpdate("user", np.arange(4), before, after, gamma, H), cfg, W, attn)
        assert_grad_close(g_w, central_diff(layer, w), rtol=1e-5)
