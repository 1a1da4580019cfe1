"""Interaction data: ingestion, splitting, sampling and graph construction.

Pairs are stored as ``(m, 2)`` int64 arrays of ``(user_index, item_index)``.
Graph nodes are users followed by items, so item ``i`` is node
``num_users + i``.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp

from .errors import (
    DataError,
    EmptyDatasetError,
    ExhaustedNegativesError,
    InvalidInputError,
    MalformedLineError,
)
from .seeding import as_rng

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    num_users: int
    num_items: int
    interactions: np.ndarray
    user_labels: tuple = ()
    item_labels: tuple = ()
    train: np.ndarray | None = None
    val: np.ndarray | None = None
    test: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def is_split(self) -> bool:
        return self.train is not None

    def require_split(self):
        if not self.is_split:
            raise DataError("dataset has not been split; call split() first")

    def user_label(self, u):
        return self.user_labels[u] if self.user_labels else str(u)

    def item_label(self, i):
        return self.item_labels[i] if self.item_labels else str(i)


def _sorted_pairs(pairs) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def from_pairs(pairs, num_users=None, num_items=None) -> InteractionDataset:
    """Build an (unsplit) dataset from index pairs, dropping duplicates."""
    pairs = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    if len(pairs) == 0:
        raise EmptyDatasetError("no interactions")
    if np.any(pairs < 0):
        raise InvalidInputError("negative index in pairs")
    nu = int(pairs[:, 0].max()) + 1 if num_users is None else int(num_users)
    ni = int(pairs[:, 1].max()) + 1 if num_items is None else int(num_items)
    if pairs[:, 0].max() >= nu or pairs[:, 1].max() >= ni:
        raise InvalidInputError("pair index out of range")
    return InteractionDataset(nu, ni, _sorted_pairs(pairs))


def _read_lines(source):
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, encoding="utf-8") as fh:
                return fh.read().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read {source}: {exc}") from exc
    return [line.rstrip("\n") for line in source]


def load_interactions(
    source, format: Literal["pair_list", "citeulike_users"] = "pair_list"
) -> InteractionDataset:
    """Load implicit feedback.

    ``pair_list``: one ``user item [extra fields...]`` per line, whitespace
    separated; extra fields (rating, timestamp) are ignored.
    ``citeulike_users``: line k lists the items of user k, prefixed by their
    count (the ``users.dat`` layout of the citeulike-a dump).

    Ids are re-indexed densely from 0 in order of first appearance.
    """
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    seen = set()
    pairs = []

    def add(u, i):
        ui = user_ids.setdefault(u, len(user_ids))
        ii = item_ids.setdefault(i, len(item_ids))
        if (ui, ii) not in seen:
            seen.add((ui, ii))
            pairs.append((ui, ii))

    for lineno, line in enumerate(_read_lines(source), start=1):
        fields = line.split()
        if format == "pair_list":
            if not fields:
                continue
            if len(fields) < 2:
                raise MalformedLineError(lineno, line)
            add(fields[0], fields[1])
        elif format == "citeulike_users":
            if not fields:
                continue
            try:
                count = int(fields[0])
            except ValueError:
                raise MalformedLineError(lineno, line, "expected an item count") from None
            if count != len(fields) - 1:
                raise MalformedLineError(lineno, line, f"count {count} != {len(fields) - 1} items")
            for item in fields[1:]:
                add(str(lineno - 1), item)
        else:
            raise InvalidInputError(f"unknown format {format!r}")

    if not pairs:
        raise EmptyDatasetError("dataset contains no interactions")
    return InteractionDataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        interactions=_sorted_pairs(pairs),
        user_labels=tuple(user_ids),
        item_labels=tuple(item_ids),
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _split_indices(m, rng, train_fraction, val_fraction):
    perm = rng.permutation(m)
    n_test = _round_half_up((1.0 - train_fraction) * m)
    pool = perm[n_test:]
    n_val = _round_half_up(val_fraction * len(pool))
    return pool[n_val:], pool[:n_val], perm[:n_test]


def split(
    dataset: InteractionDataset,
    seed: int = 0,
    train_fraction: float = 0.8,
    val_fraction: float = 0.1,
    per_user: bool = False,
) -> InteractionDataset:
    """Random hold-out split.

    ``train_fraction`` of the interactions form the training pool, the rest
    is test; ``val_fraction`` of the pool is then moved to validation.
    With ``per_user`` the same ratios are applied inside every user's
    interaction list instead of globally.
    """
    if not (0 < train_fraction <= 1 and 0 <= val_fraction < 1):
        raise InvalidInputError("fractions out of range")
    m = len(dataset.interactions)
    if m == 0:
        raise EmptyDatasetError("dataset contains no interactions")
    rng = as_rng(seed)
    inter = dataset.interactions
    if not per_user:
        tr, va, te = _split_indices(m, rng, train_fraction, val_fraction)
    else:
        parts = ([], [], [])
        bounds = np.flatnonzero(np.diff(inter[:, 0])) + 1
        for rows in np.split(np.arange(m), bounds):
            for acc, idx in zip(parts, _split_indices(len(rows), rng, train_fraction, val_fraction)):
                acc.append(rows[idx])
        tr, va, te = (np.concatenate(p) for p in parts)
    return replace(
        dataset,
        train=_sorted_pairs(inter[tr]),
        val=_sorted_pairs(inter[va]),
        test=_sorted_pairs(inter[te]),
    )


def fingerprint(dataset: InteractionDataset) -> str:
    """Content hash over (user label, item label, split) triples.

    Independent of the internal index order, so a split re-read from its
    manifest hashes the same as the original.
    """
    if dataset.is_split:
        groups = [(name, getattr(dataset, name)) for name in SPLIT_NAMES]
    else:
        groups = [("all", dataset.interactions)]
    lines = sorted(
        f"{dataset.user_label(u)}\t{dataset.item_label(i)}\t{name}\n"
        for name, pairs in groups for u, i in pairs
    )
    h = hashlib.sha256()
    h.update(f"{dataset.num_users},{dataset.num_items}\n".encode())
    for line in lines:
        h.update(line.encode())
    return h.hexdigest()


def write_split_manifest(dataset: InteractionDataset, path) -> None:
    """CSV with header ``user,item,split`` using the original ids."""
    dataset.require_split()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "split"])
        for name in SPLIT_NAMES:
            for u, i in getattr(dataset, name):
                w.writerow([dataset.user_label(u), dataset.item_label(i), name])


def read_split_manifest(path) -> InteractionDataset:
    lines, names = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            lines.append(f"{row['user']} {row['item']}")
            names.append(row["split"])
    ds = load_interactions(lines)
    uid = {u: k for k, u in enumerate(ds.user_labels)}
    iid = {i: k for k, i in enumerate(ds.item_labels)}
    buckets = {name: [] for name in SPLIT_NAMES}
    for line, name in zip(lines, names):
        u, i = line.split()
        buckets[name].append((uid[u], iid[i]))
    return replace(ds, **{name: _sorted_pairs(buckets[name]) for name in SPLIT_NAMES})


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True, eq=False)
class BipartiteAdjacency:
    """Symmetric normalized adjacency D^-1/2 A D^-1/2 over users then items."""

    matrix: sp.csr_matrix
    degrees: np.ndarray
    num_users: int

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_items(self) -> int:
        return self.size - self.num_users


def _bipartite(pairs, num_users, num_items, weights=None):
    n = num_users + num_items
    rows = pairs[:, 0]
    cols = pairs[:, 1] + num_users
    w = np.ones(len(pairs)) if weights is None else weights
    A = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    return A.tocsr()


def _sym_normalize(A, num_users):
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    D = sp.diags(inv_sqrt)
    M = (D @ A @ D).tocsr()
    M.sort_indices()
    return BipartiteAdjacency(M, deg, num_users)


def build_normalized_adjacency(source, num_users=None, num_items=None) -> BipartiteAdjacency:
    """Normalized adjacency of the training graph.

    `source` is either a split dataset (its train pairs are used) or a pair
    array together with the counts. Nodes without training edges get zero
    rows.
    """
    if isinstance(source, InteractionDataset):
        source.require_split()
        pairs, num_users, num_items = source.train, source.num_users, source.num_items
    else:
        pairs = np.asarray(source, dtype=np.int64).reshape(-1, 2)
        if num_users is None or num_items is None:
            raise InvalidInputError("num_users and num_items are required with raw pairs")
    pairs = np.unique(pairs, axis=0)
    return _sym_normalize(_bipartite(pairs, num_users, num_items), num_users)


def complement_adjacency(pairs, num_users, num_items) -> BipartiteAdjacency:
    """Normalized adjacency of all *unobserved* user-item pairs (dense; small graphs)."""
    R = np.ones((num_users, num_items))
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    R[pairs[:, 0], pairs[:, 1]] = 0.0
    neg = np.argwhere(R > 0)
    return _sym_normalize(_bipartite(neg, num_users, num_items), num_users)


def spectral_radius(adj: BipartiteAdjacency, iters: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of |lambda_max|."""
    M = adj.matrix
    x = np.random.default_rng(seed).standard_normal(M.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        # M^2 is PSD, so this converges even when lambda_min = -lambda_max
        y = M @ (M @ x)
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        est = math.sqrt(norm)
        x = y / norm
    return est


def polynomial_filter_signature(adj: BipartiteAdjacency, L: int, node: int) -> sp.csr_matrix:
    """Row `node` of sum_{l=0..L} A^l as a 1 x n sparse vector."""
    return polynomial_filter_signatures(adj, L, [node]).T.tocsr()


def polynomial_filter_signatures(adj: BipartiteAdjacency, L: int, nodes) -> sp.csc_matrix:
    """Signatures of several nodes as columns of an n x len(nodes) matrix."""
    if L < 0:
        raise InvalidInputError("L must be >= 0")
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    n = adj.size
    if np.any((nodes < 0) | (nodes >= n)):
        raise InvalidInputError(f"node out of range [0, {n})")
    X = sp.csc_matrix((np.ones(len(nodes)), (nodes, np.arange(len(nodes)))), shape=(n, len(nodes)))
    total, cur = X, X
    for _ in range(L):
        cur = (adj.matrix @ cur).tocsc()
        total = total + cur
    return total.tocsc()


class SignatureCache:
    """LRU cache of per-node signature columns, bounded by node count."""

    def __init__(self, adj: BipartiteAdjacency, L: int, budget: int = 50_000):
        self.adj = adj
        self.L = L
        self.budget = budget
        self._store: OrderedDict[int, sp.csc_matrix] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def clear(self):
        self._store.clear()

    def get(self, nodes) -> sp.csc_matrix:
        nodes = [int(x) for x in np.asarray(nodes).ravel()]
        missing = [x for x in dict.fromkeys(nodes) if x not in self._store]
        self.misses += len(missing)
        self.hits += len(nodes) - len(missing)
        if missing:
            fresh = polynomial_filter_signatures(self.adj, self.L, missing)
            for k, node in enumerate(missing):
                self._store[node] = fresh[:, k]
        for x in nodes:
            self._store.move_to_end(x)
        cols = [self._store[x] for x in nodes]
        while len(self._store) > self.budget:
            self._store.popitem(last=False)
        return sp.hstack(cols, format="csc")


def signature_cosine(signatures: sp.spmatrix) -> np.ndarray:
    """Pairwise cosine similarity between signature columns (0 for empty ones)."""
    G = np.asarray((signatures.T @ signatures).todense(), dtype=np.float64)
    norms = np.sqrt(np.clip(np.diag(G), 0.0, None))
    denom = np.outer(norms, norms)
    out = np.zeros_like(G)
    np.divide(G, denom, out=out, where=denom > 0)
    return out


def similarity_to_temperature(sims, tau0, tau1, anchors=None) -> np.ndarray:
    """Linear map sending the highest similarity to tau0 and the lowest to tau1.

    `anchors` = (s_min, s_max); by default taken from `sims` itself. Values
    outside the anchors are clipped into [tau0, tau1]. Equal anchors give the
    midpoint everywhere.
    """
    if not (0 < tau0 <= tau1):
        raise InvalidInputError("need 0 < tau0 <= tau1")
    sims = np.asarray(sims, dtype=np.float64)
    s_min, s_max = (sims.min(), sims.max()) if anchors is None else anchors
    if s_max - s_min <= 0:
        return np.full(sims.shape, 0.5 * (tau0 + tau1))
    t = tau1 + (sims - s_min) * (tau0 - tau1) / (s_max - s_min)
    return np.clip(t, tau0, tau1)


def static_temperature(
    adj: BipartiteAdjacency, L: int, tau0: float, tau1: float, nodes, cache=None, anchors=None
) -> np.ndarray:
    """B x B temperature table for a batch of same-side nodes.

    Anchors default to the min/max over the off-diagonal pairs of this batch.
    The diagonal carries self-similarity 1 and is clipped to tau0.
    """
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    B = len(nodes)
    if not (0 < tau0 <= tau1):
        raise InvalidInputError("need 0 < tau0 <= tau1")
    if tau0 == tau1:
        return np.full((B, B), float(tau0))
    sig = cache.get(nodes) if cache is not None else polynomial_filter_signatures(adj, L, nodes)
    sims = signature_cosine(sig)
    if anchors is None and B > 1:
        off = sims[~np.eye(B, dtype=bool)]
        anchors = (off.min(), off.max())
    return similarity_to_temperature(sims, tau0, tau1, anchors)


def estimate_global_anchors(adj, L, side: Literal["user", "item"], rng, n_pairs=100_000):
    """Frozen (s_min, s_max) from random same-side pairs, an alternative to per-batch anchors."""
    rng = as_rng(rng)
    lo, hi = (0, adj.num_users) if side == "user" else (adj.num_users, adj.size)
    chunk = 256
    s_min, s_max = np.inf, -np.inf
    done = 0
    while done < n_pairs:
        k = min(chunk, n_pairs - done)
        a = rng.integers(lo, hi, k)
        b = rng.integers(lo, hi, k)
        keep = a != b
        a, b = a[keep], b[keep]
        sig_a = polynomial_filter_signatures(adj, L, a)
        sig_b = polynomial_filter_signatures(adj, L, b)
        dots = np.asarray(sig_a.multiply(sig_b).sum(axis=0)).ravel()
        na = np.sqrt(np.asarray(sig_a.multiply(sig_a).sum(axis=0)).ravel())
        nb = np.sqrt(np.asarray(sig_b.multiply(sig_b).sum(axis=0)).ravel())
        denom = na * nb
        cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        if len(cos):
            s_min, s_max = min(s_min, cos.min()), max(s_max, cos.max())
        done += k
    return float(s_min), float(s_max)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class BatchSample:
    users: np.ndarray
    items: np.ndarray

    def __len__(self):
        return len(self.users)


def sample_positive_batch(train, B: int, rng) -> BatchSample:
    """B observed pairs drawn uniformly with replacement."""
    train = np.asarray(train)
    if len(train) == 0:
        raise EmptyDatasetError("empty training split")
    idx = as_rng(rng).integers(0, len(train), B)
    return BatchSample(train[idx, 0].copy(), train[idx, 1].copy())


class NegativeSampler:
    """Uniform sampling from each user's unobserved items, by rejection."""

    def __init__(self, train, num_users: int, num_items: int):
        train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
        self.num_items = num_items
        self._keys = np.unique(train[:, 0] * num_items + train[:, 1])
        self._degree = np.bincount(train[:, 0], minlength=num_users)

    def is_observed(self, users, items) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys

    def sample(self, users, rng) -> np.ndarray:
        """One negative item per entry of `users`."""
        users = np.asarray(users, dtype=np.int64)
        if np.any(self._degree[users] >= self.num_items):
            bad = int(users[self._degree[users] >= self.num_items][0])
            raise ExhaustedNegativesError(f"user {bad} has interacted with every item")
        rng = as_rng(rng)
        items = rng.integers(0, self.num_items, len(users))
        todo = np.flatnonzero(self.is_observed(users, items))
        while len(todo):
            items[todo] = rng.integers(0, self.num_items, len(todo))
            todo = todo[self.is_observed(users[todo], items[todo])]
        return items


def sample_negatives(train, num_items: int, user: int, count: int, rng) -> np.ndarray:
    """`count` items the user did not interact with in `train`."""
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    num_users = max(int(train[:, 0].max()) + 1, user + 1)
    sampler = NegativeSampler(train, num_users, num_items)
    return sampler.sample(np.full(count, user), rng)
