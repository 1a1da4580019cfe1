"""Small synthetic interaction graphs for tests, demos and collapse studies."""
from __future__ import annotations

import numpy as np

from .data import InteractionDataset, from_pairs, split
from .seeding import as_rng


def _connect(R: np.ndarray, rng) -> np.ndarray:
    """Make sure every user and item has at least one interaction."""
    nu, ni = R.shape
    for u in np.flatnonzero(R.sum(axis=1) == 0):
        R[u, rng.integers(ni)] = True
    for i in np.flatnonzero(R.sum(axis=0) == 0):
        R[rng.integers(nu), i] = True
    return R


def random_bipartite(num_users, num_items, density, rng=0) -> np.ndarray:
    """Erdos-Renyi style bipartite pairs with no isolated node."""
    rng = as_rng(rng)
    R = rng.random((num_users, num_items)) < density
    return np.argwhere(_connect(R, rng))


def dense_core_pairs(
    num_users=200, num_items=200, core_users=40, core_items=40,
    core_density=0.5, tail_density=0.03, rng=0,
) -> np.ndarray:
    """A dense user/item core embedded in a sparse random background.

    The core is what makes collapse visible quickly: its strongly connected
    block dominates the leading eigenvector of the normalized adjacency.
    """
    rng = as_rng(rng)
    R = rng.random((num_users, num_items)) < tail_density
    R[:core_users, :core_items] |= rng.random((core_users, core_items)) < core_density
    return np.argwhere(_connect(R, rng))


def dense_core_dataset(seed=0, split_seed=None, **kwargs) -> InteractionDataset:
    nu = kwargs.get("num_users", 200)
    ni = kwargs.get("num_items", 200)
    ds = from_pairs(dense_core_pairs(rng=seed, **kwargs), nu, ni)
    return split(ds, seed if split_seed is None else split_seed)


def as_train_only(pairs, num_users, num_items) -> InteractionDataset:
    """A dataset whose whole content is the training split (collapse studies)."""
    ds = from_pairs(pairs, num_users, num_items)
    empty = np.zeros((0, 2), dtype=np.int64)
    return InteractionDataset(ds.num_users, ds.num_items, ds.interactions,
                              train=ds.interactions, val=empty, test=empty)


def two_component_pairs(block=5) -> np.ndarray:
    """Two disjoint complete bipartite blocks K_{b,b}: users/items [0,b) and [b,2b)."""
    pairs = []
    for offset in (0, block):
        for u in range(block):
            for i in range(block):
                pairs.append((offset + u, offset + i))
    return np.asarray(pairs, dtype=np.int64)


def latent_factor_pairs(num_users, num_items, rank, per_user, rng=0, temperature=0.3):
    """Interactions sampled from a low-rank preference model.

    Each user picks `per_user` distinct items with probability proportional
    to exp(u . v / temperature); useful when a test needs learnable signal.
    """
    rng = as_rng(rng)
    U = rng.standard_normal((num_users, rank))
    V = rng.standard_normal((num_items, rank))
    logits = U @ V.T / (temperature * np.sqrt(rank))
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    pairs = []
    for u in range(num_users):
        items = rng.choice(num_items, size=per_user, replace=False, p=P[u])
        pairs.extend((u, int(i)) for i in items)
    return np.asarray(pairs, dtype=np.int64)
