"""Full-catalog top-k evaluation and the test-pair similarity diagnostic."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import InteractionDataset
from .errors import DataError


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)  # k -> {"recall": r, "ndcg": n}
    sim: float = float("nan")
    num_evaluated_users: int = 0

    def recall(self, k):
        return self.metrics[k]["recall"]

    def ndcg(self, k):
        return self.metrics[k]["ndcg"]

    def to_dict(self):
        return {
            "metrics": {str(k): v for k, v in sorted(self.metrics.items())},
            "sim": self.sim,
            "num_evaluated_users": self.num_evaluated_users,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path):
        ks = sorted(self.metrics)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric"] + [f"@{k}" for k in ks])
            for name in ("recall", "ndcg"):
                w.writerow([name] + [repr(self.metrics[k][name]) for k in ks])


def rank_items(user_vec, item_matrix, observed=()) -> np.ndarray:
    """Items by descending score, ties to the lower index, observed items removed."""
    scores = np.asarray(item_matrix) @ np.asarray(user_vec)
    order = np.argsort(-scores, kind="stable")
    observed = np.asarray(list(observed), dtype=np.int64)
    if observed.size:
        order = order[~np.isin(order, observed)]
    return order


def _idcg(n):
    return sum(1.0 / math.log2(p + 1) for p in range(1, n + 1))


def ndcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(int(x) for x in relevant)
    if not relevant:
        return 0.0
    dcg = sum(1.0 / math.log2(p + 2) for p, item in enumerate(ranked[:k]) if int(item) in relevant)
    return dcg / _idcg(min(k, len(relevant)))


def recall_at_k(ranked, relevant, k: int) -> float:
    relevant = set(int(x) for x in relevant)
    if not relevant:
        return 0.0
    hits = sum(1 for item in ranked[:k] if int(item) in relevant)
    return hits / len(relevant)


def _split_users(H, dataset):
    nu = dataset.num_users
    return H[:nu], H[nu:]


def sim_metric(H, dataset: InteractionDataset, split="test") -> float:
    """Mean over users of the mean sigmoid score of their held-out items."""
    pairs = getattr(dataset, split)
    if pairs is None or len(pairs) == 0:
        raise DataError(f"{split} split is empty")
    Hu, Hi = _split_users(H, dataset)
    s = expit(np.einsum("ij,ij->i", Hu[pairs[:, 0]], Hi[pairs[:, 1]]))
    users, inverse, counts = np.unique(pairs[:, 0], return_inverse=True, return_counts=True)
    per_user = np.bincount(inverse, weights=s) / counts
    return float(per_user.mean())


def _csr(pairs, nu, ni):
    if pairs is None or len(pairs) == 0:
        return sp.csr_matrix((nu, ni), dtype=bool)
    return sp.csr_matrix((np.ones(len(pairs), dtype=bool), (pairs[:, 0], pairs[:, 1])), shape=(nu, ni))


def evaluate(H, dataset: InteractionDataset, ks=(10, 20), split="test", chunk=1024) -> EvalReport:
    """Recall@k / nDCG@k over users with a non-empty `split`, plus SIM.

    Candidates are all items the user has not interacted with in train.
    """
    dataset.require_split()
    ks = sorted(set(int(k) for k in ks))
    H = np.asarray(H, dtype=np.float64)
    Hu, Hi = _split_users(H, dataset)
    nu, ni = dataset.num_users, dataset.num_items
    train = _csr(dataset.train, nu, ni)
    target = _csr(getattr(dataset, split), nu, ni)
    n_rel = np.asarray(target.sum(axis=1)).ravel()
    users = np.flatnonzero(n_rel > 0)
    report = EvalReport(num_evaluated_users=len(users))
    if len(users) == 0:
        report.metrics = {k: {"recall": 0.0, "ndcg": 0.0} for k in ks}
        return report

    kmax = max(ks)
    discounts = 1.0 / np.log2(np.arange(2, kmax + 2))
    idcg_table = np.concatenate([[0.0], np.cumsum(discounts)])
    sums = {k: [0.0, 0.0] for k in ks}
    for start in range(0, len(users), chunk):
        batch = users[start:start + chunk]
        scores = Hu[batch] @ Hi.T
        scores[train[batch].toarray()] = -np.inf
        top = np.argsort(-scores, kind="stable", axis=1)[:, :kmax]
        valid = np.take_along_axis(scores, top, axis=1) > -np.inf
        hits = np.take_along_axis(target[batch].toarray(), top, axis=1) & valid
        if hits.shape[1] < kmax:  # k larger than the catalog
            hits = np.pad(hits, ((0, 0), (0, kmax - hits.shape[1])))
        rel = n_rel[batch]
        for k in ks:
            h = hits[:, :k]
            dcg = h @ discounts[:k]
            idcg = idcg_table[np.minimum(k, rel)]
            sums[k][0] += float(np.sum(h.sum(axis=1) / rel))
            sums[k][1] += float(np.sum(dcg / idcg))
    report.metrics = {k: {"recall": r / len(users), "ndcg": n / len(users)} for k, (r, n) in sums.items()}
    report.sim = sim_metric(H, dataset, split)
    return report
