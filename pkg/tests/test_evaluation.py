import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_eval
from specrec.data import InteractionDataset
from specrec.errors import DataError
from specrec.evaluation import evaluate, ndcg_at_k, rank_items, recall_at_k, sim_metric


def make_dataset(nu, ni, train, test, val=()):
    arr = lambda p: np.asarray(sorted(p), dtype=np.int64).reshape(-1, 2)
    allp = arr(set(map(tuple, train)) | set(map(tuple, test)) | set(map(tuple, val)))
    return InteractionDataset(nu, ni, allp, train=arr(train), val=arr(val), test=arr(test))


def random_instance(seed, nu=20, ni=15, d=4):
    rng = np.random.default_rng(seed)
    R = rng.random((nu, ni))
    train = [tuple(x) for x in np.argwhere(R < 0.25)]
    test = [tuple(x) for x in np.argwhere((R >= 0.25) & (R < 0.4))]
    H = rng.standard_normal((nu + ni, d))
    # coarse rounding creates score ties, which exercises the tie rule
    H = np.round(H, 1)
    return make_dataset(nu, ni, train, test), H


class TestRankItems:
    def test_higher_first(self):
        items = np.array([[0.9], [0.1]])
        assert rank_items(np.array([1.0]), items).tolist() == [0, 1]

    def test_ties_lower_index(self):
        items = np.array([[1.0], [1.0], [1.0]])
        assert rank_items(np.array([1.0]), items).tolist() == [0, 1, 2]

    def test_observed_removed(self):
        items = np.array([[3.0], [2.0], [1.0]])
        assert rank_items(np.array([1.0]), items, observed=[0]).tolist() == [1, 2]


class TestMetrics:
    def test_ndcg_perfect(self):
        assert ndcg_at_k([3, 1, 2], {3, 1}, 10) == pytest.approx(1.0)

    def test_ndcg_no_hit(self):
        assert ndcg_at_k([3, 1, 2], {7}, 2) == 0.0

    def test_ndcg_single_hit_second(self):
        assert ndcg_at_k([5, 9, 4], {9}, 10) == pytest.approx(0.6309297535714575, abs=1e-15)

    def test_ndcg_no_relevant(self):
        assert ndcg_at_k([1, 2], set(), 5) == 0.0

    def test_recall(self):
        assert recall_at_k([1, 2, 3], {1, 2}, 3) == 1.0
        assert recall_at_k([1, 2, 3], {9}, 3) == 0.0
        assert recall_at_k([1, 2, 3, 4], {1, 3, 7, 8}, 3) == 0.5

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(list(range(12))), st.sets(st.integers(0, 11), min_size=1))
    def test_monotone_in_k(self, ranked, relevant):
        rec = [recall_at_k(ranked, relevant, k) for k in range(1, 13)]
        nd = [ndcg_at_k(ranked, relevant, k) for k in range(1, 13)]
        assert all(b >= a - 1e-15 for a, b in zip(rec, rec[1:]))
        assert all(0 <= x <= 1 + 1e-12 for x in nd)

    def test_ndcg_can_drop_with_k(self):
        # the ideal DCG grows with k as well, so nDCG is not monotone in k
        assert ndcg_at_k([0, 5, 1], {0, 1}, 1) == 1.0
        assert ndcg_at_k([0, 5, 1], {0, 1}, 2) < 1.0


class TestSim:
    def test_zero_scores(self):
        ds = make_dataset(1, 2, [], [(0, 0), (0, 1)])
        assert sim_metric(np.zeros((3, 2)), ds) == pytest.approx(0.5)

    def test_two_items(self):
        ds = make_dataset(1, 2, [], [(0, 0), (0, 1)])
        H = np.array([[1.0], [0.0], [2.0]])
        assert sim_metric(H, ds) == pytest.approx(0.6903985389889411, abs=1e-14)

    def test_large_scores(self):
        ds = make_dataset(1, 1, [], [(0, 0)])
        assert sim_metric(np.array([[30.0], [30.0]]), ds) == pytest.approx(1.0)

    def test_per_user_average(self):
        ds = make_dataset(2, 2, [], [(0, 0), (0, 1), (1, 0)])
        H = np.array([[1.0], [0.0], [0.0], [0.0]])  # all scores 0
        assert sim_metric(H, ds) == pytest.approx(0.5)

    def test_empty(self):
        with pytest.raises(DataError):
            sim_metric(np.zeros((2, 1)), make_dataset(1, 1, [(0, 0)], []))


class TestEvaluate:
    def test_single_user_perfect(self):
        ds = make_dataset(1, 4, [(0, 3)], [(0, 0), (0, 1)])
        H = np.array([[1.0], [3.0], [2.0], [-1.0], [5.0]])
        r = evaluate(H, ds, ks=(1, 2, 3))
        assert r.recall(2) == r.ndcg(2) == pytest.approx(1.0)
        assert r.ndcg(3) == pytest.approx(1.0)
        assert r.num_evaluated_users == 1

    def test_zero_embeddings_tie_order(self):
        ds, _ = random_instance(4)
        rec, nd = brute_force_eval(np.zeros((20, 15)), *self._sets(ds), 10)
        r = evaluate(np.zeros((35, 4)), ds, ks=(10,))
        assert r.recall(10) == pytest.approx(rec, abs=1e-12)
        assert r.ndcg(10) == pytest.approx(nd, abs=1e-12)

    @staticmethod
    def _sets(ds):
        train = [set() for _ in range(ds.num_users)]
        test = [set() for _ in range(ds.num_users)]
        for u, i in ds.train:
            train[u].add(int(i))
        for u, i in ds.test:
            test[u].add(int(i))
        return train, test

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        ds, H = random_instance(seed)
        scores = (H[:20] @ H[20:].T).tolist()
        train, test = self._sets(ds)
        r = evaluate(H, ds, ks=(1, 5, 10), chunk=7)
        for k in (1, 5, 10):
            rec, nd = brute_force_eval(scores, train, test, k)
            assert abs(r.recall(k) - rec) < 1e-10
            assert abs(r.ndcg(k) - nd) < 1e-10

    def test_users_without_test_skipped(self):
        ds = make_dataset(2, 3, [(1, 0)], [(0, 1)])
        assert evaluate(np.ones((5, 2)), ds).num_evaluated_users == 1

    def test_monotone_transform_invariance(self):
        ds, H = random_instance(11)
        H2 = H.copy()
        H2[:20] *= 3.5  # scales every score by the same positive factor
        a, b = evaluate(H, ds), evaluate(H2, ds)
        for k in (10, 20):
            assert a.ndcg(k) == b.ndcg(k) and a.recall(k) == b.recall(k)

    def test_random_scores_recall(self):
        rng = np.random.default_rng(0)
        nu, ni, k = 400, 50, 5
        test = [(u, int(rng.integers(ni))) for u in range(nu)]
        ds = make_dataset(nu, ni, [], test)
        H = rng.standard_normal((nu + ni, 16))
        r = evaluate(H, ds, ks=(k,))
        p = k / ni
        assert abs(r.recall(k) - p) < 3 * np.sqrt(p * (1 - p) / nu)

    def test_report_files(self, tmp_path):
        ds, H = random_instance(2)
        r = evaluate(H, ds, ks=(5, 10, 20))
        r.write_json(tmp_path / "m.json")
        r.write_csv(tmp_path / "m.csv")
        header = (tmp_path / "m.csv").read_text().splitlines()[0]
        assert header == "metric,@5,@10,@20"
        data = json.loads((tmp_path / "m.json").read_text())
        assert all(0 <= v <= 1 for m in data["metrics"].values() for v in m.values())
        assert 0 < data["sim"] < 1
