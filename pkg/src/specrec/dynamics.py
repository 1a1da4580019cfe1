"""Idealized gradient dynamics of alignment and negative sampling.

With constant pair weights, SGD on positive pairs iterates
``H <- (I + alpha A) H`` (a low pass filter) and negative sampling
iterates ``H <- (I - alpha A_neg) H`` (a high pass filter).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .balancer import directspec_update, normalize_rows
from .data import BipartiteAdjacency
from .errors import InvalidInputError
from .seeding import rng_stream
from .spectrum import DEFAULT_RANK_EPS, effective_rank, erank, numeric_rank, singular_values

FilterMode = Literal["low_pass", "high_pass", "band"]

# rescale when entries get this large; erank and numeric rank are scale free
_RESCALE_AT = 1e100


@dataclass
class DynamicsResult:
    eranks: np.ndarray
    numeric_ranks: np.ndarray
    final: np.ndarray


def simulate_filter_dynamics(
    adj_pos: BipartiteAdjacency | None,
    adj_neg: BipartiteAdjacency | None,
    alpha: float,
    steps: int,
    H0,
    mode: FilterMode = "low_pass",
    eps: float = DEFAULT_RANK_EPS,
) -> DynamicsResult:
    """Iterate the linear update and record erank/numeric rank after every step.

    The trajectory has ``steps + 1`` entries (the first is H0). The matrix is
    multiplied by a positive scalar whenever it nears overflow, which leaves
    the recorded quantities unchanged.
    """
    if not 0 <= alpha < 1:
        raise InvalidInputError("alpha must lie in [0, 1)")
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    if mode in ("low_pass", "band") and adj_pos is None:
        raise InvalidInputError(f"{mode} needs the positive adjacency")
    if mode in ("high_pass", "band") and adj_neg is None:
        raise InvalidInputError(f"{mode} needs the negative adjacency")
    if mode not in ("low_pass", "high_pass", "band"):
        raise InvalidInputError(f"unknown mode {mode!r}")

    H = np.array(H0, dtype=np.float64)
    eranks, ranks = [], []

    def record():
        sv = singular_values(H)
        eranks.append(effective_rank(sv))
        ranks.append(numeric_rank(sv, eps))

    record()
    for _ in range(steps):
        if mode == "low_pass":
            H = H + alpha * (adj_pos.matrix @ H)
        elif mode == "high_pass":
            H = H - alpha * (adj_neg.matrix @ H)
        else:
            H = H + alpha * (adj_pos.matrix @ H - adj_neg.matrix @ H)
        peak = np.max(np.abs(H))
        if peak > _RESCALE_AT:
            H /= peak
        record()
    return DynamicsResult(np.asarray(eranks), np.asarray(ranks), H)


def toy_trajectory(seed: int = 42, size: int = 10, alpha: float = 0.05,
                   iterations: int = 50, power: int = 1) -> np.ndarray:
    """erank of a seeded square standard-normal matrix under repeated
    normalize + DirectSpec updates; entry 0 is the raw matrix."""
    H = rng_stream(seed, "toy").standard_normal((size, size))
    eranks = [erank(H)]
    for _ in range(iterations):
        H = directspec_update(normalize_rows(H), alpha, power)
        eranks.append(erank(H))
    return np.asarray(eranks)
