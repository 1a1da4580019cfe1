"""Encoders mapping the trainable table E to output embeddings H.

Both encoders are linear in E, ``H = P E`` with P = I (MF) or a
polynomial in the symmetric normalized adjacency (LightGCN), so P is
self-adjoint and gradients on H route back to E by the same propagation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .data import BipartiteAdjacency
from .errors import ConfigError, InvalidInputError
from .seeding import as_rng
from .spectrum import load_matrix_csv, save_matrix_csv

EncoderKind = Literal["mf", "lightgcn"]


@dataclass
class EncoderParams:
    base_embeddings: np.ndarray
    encoder_kind: EncoderKind = "mf"
    layers: int = 3
    layer_combination: Literal["mean", "sum"] = "mean"

    def __post_init__(self):
        if self.encoder_kind not in ("mf", "lightgcn"):
            raise ConfigError(f"unknown encoder {self.encoder_kind!r}")
        if self.encoder_kind == "lightgcn" and self.layers < 1:
            raise ConfigError("LightGCN needs at least one layer")
        if self.layer_combination not in ("mean", "sum"):
            raise ConfigError(f"unknown layer combination {self.layer_combination!r}")

    @property
    def dim(self) -> int:
        return self.base_embeddings.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.base_embeddings.copy(), self.encoder_kind, self.layers, self.layer_combination
        )


def xavier_bound(d: int) -> float:
    return float(np.sqrt(6.0 / (d + d)))


def xavier_init(num_rows: int, d: int, rng) -> np.ndarray:
    """Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)), fan_in = fan_out = d."""
    if num_rows <= 0 or d <= 0:
        raise InvalidInputError("dimensions must be positive")
    b = xavier_bound(d)
    return as_rng(rng).uniform(-b, b, size=(num_rows, d))


def mf_forward(params: EncoderParams) -> np.ndarray:
    if params.encoder_kind != "mf":
        raise ConfigError("mf_forward called on a non-MF encoder")
    return params.base_embeddings


def propagate(adj: BipartiteAdjacency, X, layers: int, combination="mean") -> np.ndarray:
    """combine_{k=0..K} A^k X, mean- or sum-combined."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != adj.size:
        raise InvalidInputError(f"matrix has {X.shape[0]} rows, adjacency has {adj.size} nodes")
    out = X.copy()
    cur = X
    for _ in range(layers):
        cur = adj.matrix @ cur
        out += cur
    if combination == "mean":
        out /= layers + 1
    return out


def lightgcn_forward(params: EncoderParams, adj: BipartiteAdjacency) -> np.ndarray:
    if params.encoder_kind != "lightgcn":
        raise ConfigError("lightgcn_forward called on a non-LightGCN encoder")
    return propagate(adj, params.base_embeddings, params.layers, params.layer_combination)


def forward(params: EncoderParams, adj: BipartiteAdjacency | None = None) -> np.ndarray:
    if params.encoder_kind == "mf":
        return mf_forward(params)
    if adj is None:
        raise ConfigError("LightGCN forward needs the adjacency")
    return lightgcn_forward(params, adj)


def backward(params: EncoderParams, adj, grad_out) -> np.ndarray:
    """Pull a gradient (or correction) on H back to E: P^T G, with P^T = P."""
    if params.encoder_kind == "mf":
        return grad_out
    return propagate(adj, grad_out, params.layers, params.layer_combination)


def scores(H_users, H_items) -> np.ndarray:
    """Inner-product scores h_u . h_i, row-wise for aligned arrays."""
    return np.einsum("ij,ij->i", np.atleast_2d(H_users), np.atleast_2d(H_items))


def save_checkpoint(path, params: EncoderParams, **meta) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (the table E) and ``<path>.json`` (metadata)."""
    path = Path(path)
    if path.suffix in (".csv", ".json"):
        path = path.with_suffix("")
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    save_matrix_csv(csv_path, params.base_embeddings)
    info = {
        "encoder_kind": params.encoder_kind,
        "layers": params.layers,
        "layer_combination": params.layer_combination,
        "dim": params.dim,
        "rows": params.base_embeddings.shape[0],
        **meta,
    }
    json_path.write_text(json.dumps(info, indent=2, sort_keys=True))
    return csv_path, json_path


def load_checkpoint(path) -> tuple[EncoderParams, dict]:
    path = Path(path)
    if path.suffix in (".csv", ".json"):
        path = path.with_suffix("")
    meta = json.loads(path.with_suffix(".json").read_text())
    E = load_matrix_csv(path.with_suffix(".csv"))
    params = EncoderParams(E, meta["encoder_kind"], meta["layers"], meta["layer_combination"])
    return params, meta
