"""Spectral diagnostics for embedding matrices.

Singular values are obtained from the eigendecomposition of the smaller
Gram matrix, which is cheap for the tall, thin matrices produced by
recommenders (n entities by d <= 256 dimensions).
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .errors import (
    DegenerateSpectrumError,
    InvalidInputError,
    PreconditionError,
    SingularMatrixError,
)

DEFAULT_RANK_EPS = 1e-10
NORMALIZATION_TOL = 1e-8

SslMethod = Literal["barlow_twins", "scl", "logdet"]


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray
    normalized_distribution: np.ndarray
    effective_rank: float
    numeric_rank: int

    def to_dict(self):
        d = asdict(self)
        d["singular_values"] = self.singular_values.tolist()
        d["normalized_distribution"] = self.normalized_distribution.tolist()
        return d


@dataclass(frozen=True)
class SslEquivalenceResult:
    method: str
    pairwise_value: float
    spectral_value: float

    @property
    def absolute_gap(self) -> float:
        return abs(self.pairwise_value - self.spectral_value)


def _as_matrix(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.size == 0:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidInputError("matrix contains non-finite entries")
    return H


def singular_values(H) -> np.ndarray:
    """Return the ``min(n, d)`` singular values of `H` in descending order.

    The singular vectors of the smaller side come from ``eigh`` on the Gram
    matrix; each singular value is then taken as the norm of ``H v`` rather
    than the square root of the eigenvalue, which keeps exact zeros at
    roundoff level (~1e-16 * sigma_1) instead of ~1e-8 * sigma_1.
    """
    H = _as_matrix(H)
    n, d = H.shape
    M = H if n >= d else H.T
    _, vecs = np.linalg.eigh(M.T @ M)
    sv = np.linalg.norm(M @ vecs, axis=0)
    return np.sort(sv)[::-1]


def effective_rank(sv) -> float:
    """exp of the Shannon entropy of the L1-normalized singular values.

    Zero singular values contribute nothing (0 ln 0 := 0).
    """
    sv = np.asarray(sv, dtype=np.float64)
    if np.any(sv < 0) or not np.all(np.isfinite(sv)):
        raise InvalidInputError("singular values must be finite and non-negative")
    total = sv.sum()
    if total <= 0:
        raise DegenerateSpectrumError("all singular values are zero")
    p = sv[sv > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def erank(H) -> float:
    """Shorthand for ``effective_rank(singular_values(H))``."""
    return effective_rank(singular_values(H))


def numeric_rank(sv, eps: float = DEFAULT_RANK_EPS) -> int:
    sv = np.asarray(sv, dtype=np.float64)
    if sv.size == 0 or sv[0] <= 0:
        return 0
    return int(np.count_nonzero(sv > eps * sv[0]))


def spectrum_report(H, eps: float = DEFAULT_RANK_EPS) -> SpectrumReport:
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    sv = singular_values(H)
    total = sv.sum()
    if total > 0:
        dist = sv / total
        er = effective_rank(sv)
    else:
        # zero matrix: report rather than raise, a dump may legitimately be empty
        dist = np.zeros_like(sv)
        er = 0.0
    return SpectrumReport(sv, dist, er, numeric_rank(sv, eps))


def _check_unit(norms, what):
    if not np.allclose(norms, 1.0, rtol=0, atol=NORMALIZATION_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise PreconditionError(f"{what} must have unit L2 norm (max deviation {worst:.3g})")


def barlow_twins_loss(H, lam: float = 1.0) -> float:
    """Barlow Twins objective on the cross-correlation ``C = H^T H``."""
    C = H.T @ H
    diag = np.diag(C)
    off = C - np.diag(diag)
    return float(np.sum((1.0 - diag) ** 2) + lam * np.sum(off**2))


def scl_loss(H) -> float:
    """Spectral contrastive penalty: sum over i != j of (h_i . h_j)^2."""
    G = H @ H.T
    np.fill_diagonal(G, 0.0)
    return float(np.sum(G**2))


def logdet_loss(H) -> float:
    Sigma = H.T @ H
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularMatrixError("H^T H is singular")
    return float(np.trace(Sigma) - logdet)


def verify_ssl_equivalence(H, method: SslMethod) -> SslEquivalenceResult:
    """Evaluate an SSL loss both from pairwise products and from the spectrum.

    ``barlow_twins`` and ``logdet`` expect unit-norm columns with n >= d;
    ``scl`` expects unit-norm rows. For ``scl`` the n x n comparison
    ``Tr((H H^T - I)^2)`` has ``n - d`` extra zero eigenvalues of ``H H^T``,
    each contributing 1, hence the ``max(0, n - d)`` constant.
    """
    H = _as_matrix(H)
    n, d = H.shape
    if method in ("barlow_twins", "logdet"):
        if n < d:
            raise PreconditionError(f"{method} requires n >= d, got {n} x {d}")
        _check_unit(np.linalg.norm(H, axis=0), "columns")
    elif method == "scl":
        _check_unit(np.linalg.norm(H, axis=1), "rows")
    else:
        raise InvalidInputError(f"unknown method {method!r}")

    sv = singular_values(H)
    if method == "barlow_twins":
        pairwise = barlow_twins_loss(H, lam=1.0)
        spectral = float(np.sum((sv**2 - 1.0) ** 2))
    elif method == "scl":
        pairwise = scl_loss(H)
        spectral = float(np.sum((sv**2 - 1.0) ** 2) + max(0, n - d))
    else:
        pairwise = logdet_loss(H)
        if sv[-1] <= 0:
            raise SingularMatrixError("H^T H is singular")
        spectral = float(np.sum(sv**2 - 2.0 * np.log(sv)))
    return SslEquivalenceResult(method, pairwise, spectral)


def load_matrix_csv(path) -> np.ndarray:
    """Read an embedding dump: one row per entity, comma-separated floats."""
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    if not rows:
        raise InvalidInputError(f"{path}: empty matrix file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InvalidInputError(f"{path}: ragged rows (widths {sorted(widths)})")
    return _as_matrix(rows)


def save_matrix_csv(path, H) -> None:
    # repr-precision so a reload is bit-identical
    np.savetxt(path, np.asarray(H, dtype=np.float64), delimiter=",", fmt="%.17g")
