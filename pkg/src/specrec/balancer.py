"""Spectrum-balancing updates applied to batches of embeddings.

DirectSpec shrinks every singular value by ``1 - alpha * sigma^(2K)``,
so large directions shrink most and the spectrum flattens. DirectSpec+
replaces the plain Gram coefficients with a temperature-scaled row
softmax, making the repulsion between highly similar pairs stronger.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import expit

from .data import BatchSample, BipartiteAdjacency, SignatureCache, static_temperature
from .encoders import EncoderParams, backward, forward
from .errors import ConfigError, InvalidInputError, UnsupportedIntegrationError
from .seeding import as_rng

logger = logging.getLogger(__name__)

Mode = Literal["none", "directspec", "directspec_plus"]
TemperatureSource = Literal["static_graph", "dynamic_attention", "constant"]
Integration = Literal["inplace", "layer", "backprop"]

LINEAR_ENCODERS = ("mf", "lightgcn")


@dataclass
class BalancerConfig:
    mode: Mode = "none"
    alpha: float = 0.1
    power: int = 1
    temperature_source: TemperatureSource = "static_graph"
    tau0: float = 1.0
    tau1: float = 1.0
    hops: int = 3
    integration: Integration | None = None
    mask_diagonal: bool = True
    global_anchors: bool = False

    def __post_init__(self):
        if self.mode not in ("none", "directspec", "directspec_plus"):
            raise ConfigError(f"unknown balancer mode {self.mode!r}")
        if self.mode != "none" and not self.alpha > 0:
            raise ConfigError("alpha must be positive when balancing is active")
        if self.power < 1:
            raise ConfigError("power K must be >= 1")
        if not (0 < self.tau0 <= self.tau1):
            raise ConfigError("need 0 < tau0 <= tau1")
        if self.temperature_source not in ("static_graph", "dynamic_attention", "constant"):
            raise ConfigError(f"unknown temperature source {self.temperature_source!r}")
        if self.integration not in (None, "inplace", "layer", "backprop"):
            raise ConfigError(f"unknown integration {self.integration!r}")
        if self.hops < 0:
            raise ConfigError("hops L must be >= 0")

    @property
    def active(self) -> bool:
        return self.mode != "none"

    def resolved_integration(self, encoder_kind: str) -> Integration:
        # committing the balanced rows (inplace/layer) trains far worse than
        # differentiating through them, so backprop is the default for both
        if self.integration is not None:
            return self.integration
        return "backprop"


def normalize_rows(H) -> np.ndarray:
    """Scale each nonzero row to unit L2 norm; zero rows stay zero."""
    H = np.asarray(H, dtype=np.float64)
    norms = np.linalg.norm(H, axis=-1, keepdims=True)
    return np.divide(H, norms, out=np.zeros_like(H), where=norms > 0)


def directspec_update(H, alpha: float, power: int = 1) -> np.ndarray:
    """H - alpha (H H^T)^K H, evaluated as H (H^T H)^K to stay O(B d^2)."""
    H = np.asarray(H, dtype=np.float64)
    if power < 1:
        raise InvalidInputError("power K must be >= 1")
    gram = H.T @ H
    Y = H
    for _ in range(power):
        Y = Y @ gram
    return H - alpha * Y


def top_singular_value(H, iters: int = 8) -> float:
    """A few power iterations on H^T H (slight underestimate at most)."""
    H = np.asarray(H, dtype=np.float64)
    gram = H.T @ H
    x = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = gram @ x
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return float(np.sqrt(lam))


def step_size_ok(H, alpha: float, power: int = 1, log: bool = True) -> bool:
    """False (and a logged warning) when alpha * sigma_1^(2K) >= 1."""
    s1 = top_singular_value(H)
    ok = alpha * s1 ** (2 * power) < 1.0
    if not ok and log:
        logger.warning(
            "alpha * sigma_1^%d = %.3f >= 1 (sigma_1 ~ %.3f): the leading direction flips sign",
            2 * power, alpha * s1 ** (2 * power), s1,
        )
    return ok


def softmax_coefficients(H, gamma, mask_diagonal: bool = True) -> np.ndarray:
    """Row-wise softmax of (H H^T) * gamma, optionally excluding self-pairs.

    A row with nothing left to attend to (B = 1, masked) gets all-zero
    coefficients.
    """
    H = np.asarray(H, dtype=np.float64)
    B = H.shape[0]
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim == 0:
        gamma = np.full((B, B), float(gamma))
    if gamma.shape != (B, B):
        raise InvalidInputError(f"temperature table shape {gamma.shape} != ({B}, {B})")
    S = (H @ H.T) * gamma
    if mask_diagonal:
        np.fill_diagonal(S, -np.inf)
    row_max = S.max(axis=1, keepdims=True)
    row_max[~np.isfinite(row_max)] = 0.0
    P = np.exp(S - row_max)
    sums = P.sum(axis=1, keepdims=True)
    return np.divide(P, sums, out=np.zeros_like(P), where=sums > 0)


def directspec_plus_update(H, alpha: float, gamma, mask_diagonal: bool = True) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    return H - alpha * softmax_coefficients(H, gamma, mask_diagonal) @ H


def directspec_plus_gamma_grad(H, alpha, gamma, grad_out, mask_diagonal=True) -> np.ndarray:
    """dL/dGamma given dL/dH' for H' = directspec_plus_update(H, alpha, Gamma)."""
    return directspec_plus_backward(H, alpha, gamma, grad_out, mask_diagonal)[1]


def normalize_rows_backward(H, grad_out) -> np.ndarray:
    """Vector-Jacobian product of `normalize_rows` (zero rows pass no gradient)."""
    H = np.asarray(H, dtype=np.float64)
    norms = np.linalg.norm(H, axis=-1, keepdims=True)
    Y = np.divide(H, norms, out=np.zeros_like(H), where=norms > 0)
    proj = grad_out - Y * np.sum(Y * grad_out, axis=-1, keepdims=True)
    return np.divide(proj, norms, out=np.zeros_like(H), where=norms > 0)


def directspec_backward(H, alpha, power, grad_out) -> np.ndarray:
    """dL/dH for H' = H - alpha H (H^T H)^K, given G = dL/dH'.

    With M = H^T H and Q = sum_a M^a H^T G M^(K-1-a):
    dL/dH = G - alpha (G M^K + H (Q + Q^T)).
    """
    H = np.asarray(H, dtype=np.float64)
    G = np.asarray(grad_out, dtype=np.float64)
    M = H.T @ H
    pows = [np.eye(M.shape[0])]
    for _ in range(power):
        pows.append(pows[-1] @ M)
    HtG = H.T @ G
    Q = sum(pows[a] @ HtG @ pows[power - 1 - a] for a in range(power))
    return G - alpha * (G @ pows[power] + H @ (Q + Q.T))


def directspec_plus_backward(H, alpha, gamma, grad_out, mask_diagonal=True):
    """(dL/dH, dL/dGamma) for H' = H - alpha softmax((H H^T) * Gamma) H."""
    H = np.asarray(H, dtype=np.float64)
    G = np.asarray(grad_out, dtype=np.float64)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (H.shape[0], H.shape[0]))
    P = softmax_coefficients(H, gamma, mask_diagonal)
    dP = -alpha * (G @ H.T)
    dS = P * (dP - np.sum(P * dP, axis=1, keepdims=True))
    C = dS * gamma
    dH = G - alpha * (P.T @ G) + (C + C.T) @ H
    return dH, dS * (H @ H.T)


@dataclass
class AttentionParams:
    """Weights of the pairwise attention temperature sigma(w . [h_u || h_v])."""

    w: np.ndarray

    @classmethod
    def init(cls, d: int, rng=None, scale: float = 0.0) -> "AttentionParams":
        if scale == 0.0:
            return cls(np.zeros(2 * d))
        return cls(as_rng(rng).uniform(-scale, scale, 2 * d))

    @property
    def dim(self) -> int:
        return self.w.shape[0] // 2


def dynamic_temperature(attn: AttentionParams, h_u, h_v) -> float:
    return float(expit(attn.w @ np.concatenate([h_u, h_v])))


def dynamic_temperature_grad(attn: AttentionParams, h_u, h_v) -> np.ndarray:
    """d sigma(w . [h_u || h_v]) / dw."""
    x = np.concatenate([h_u, h_v])
    t = expit(attn.w @ x)
    return t * (1.0 - t) * x


def dynamic_temperature_table(attn: AttentionParams, H) -> np.ndarray:
    d = attn.dim
    left = H @ attn.w[:d]
    right = H @ attn.w[d:]
    return expit(left[:, None] + right[None, :])


def attention_weight_grad(attn: AttentionParams, H, gamma, dgamma) -> np.ndarray:
    """Chain dL/dGamma through Gamma_ab = sigma(w1 . h_a + w2 . h_b)."""
    c = dgamma * gamma * (1.0 - gamma)
    return np.concatenate([H.T @ c.sum(axis=1), H.T @ c.sum(axis=0)])


class TemperatureProvider:
    """Builds the B x B temperature table for one side of a batch."""

    def __init__(self, config: BalancerConfig, adj: BipartiteAdjacency | None = None,
                 attention: AttentionParams | None = None, cache_budget: int = 50_000,
                 anchors: dict | None = None):
        self.config = config
        self.adj = adj
        self.attention = attention
        self.anchors = anchors or {}
        self.cache = None
        if config.temperature_source == "static_graph" and config.tau0 < config.tau1:
            if adj is None:
                raise ConfigError("static graph temperatures need the adjacency")
            self.cache = SignatureCache(adj, config.hops, cache_budget)

    def __call__(self, nodes, H, side: str) -> np.ndarray:
        cfg = self.config
        B = len(nodes)
        if cfg.temperature_source == "constant":
            return np.full((B, B), float(cfg.tau1))
        if cfg.temperature_source == "dynamic_attention":
            if self.attention is None:
                raise ConfigError("dynamic temperatures need AttentionParams")
            return dynamic_temperature_table(self.attention, H)
        return static_temperature(self.adj, cfg.hops, cfg.tau0, cfg.tau1, nodes,
                                  cache=self.cache, anchors=self.anchors.get(side))


@dataclass
class SideUpdate:
    side: str
    nodes: np.ndarray
    before: np.ndarray
    after: np.ndarray
    gamma: np.ndarray | None = None
    raw: np.ndarray | None = None


@dataclass
class BalanceResult:
    updates: list = field(default_factory=list)
    forward: np.ndarray | None = None
    step_size_ok: bool = True


def balance_batch(H, config: BalancerConfig, gamma=None):
    """Normalize the rows of H and apply the configured update."""
    Hn = normalize_rows(H)
    if config.mode == "directspec":
        return Hn, directspec_update(Hn, config.alpha, config.power)
    if gamma is None:
        gamma = float(config.tau1)
    return Hn, directspec_plus_update(Hn, config.alpha, gamma, config.mask_diagonal)


def apply_balancer(
    params: EncoderParams,
    batch: BatchSample,
    config: BalancerConfig,
    adj: BipartiteAdjacency | None = None,
    num_users: int | None = None,
    temperature: Callable | None = None,
    H=None,
) -> BalanceResult:
    """Balance the batch's user rows and item rows separately and commit.

    ``inplace`` overwrites the batch rows of the base table with their
    balanced versions. ``layer`` treats balancing as an output-space
    correction dH = H_B' - H_B and routes it to the table through the
    encoder's adjoint, E += P^T dH. For MF, P = I and both coincide.
    ``backprop`` commits nothing: balancing is a differentiable layer
    between encoder and loss, and `balance_backward` carries the loss
    gradient back through it. The returned updates hold the balanced
    rows on which the alignment loss is evaluated.
    """
    result = BalanceResult()
    if not config.active:
        return result
    integration = config.resolved_integration(params.encoder_kind)
    if integration in ("layer", "backprop") and params.encoder_kind not in LINEAR_ENCODERS:
        raise UnsupportedIntegrationError(
            f"{integration} integration needs a linear encoder, got {params.encoder_kind}")
    if num_users is None:
        if adj is None:
            raise ConfigError("num_users or adj is required")
        num_users = adj.num_users
    if temperature is None:
        temperature = TemperatureProvider(config, adj)

    E = params.base_embeddings
    if integration in ("layer", "backprop"):
        result.forward = forward(params, adj) if H is None else H
        source = result.forward
    else:
        source = E

    sides = (("user", np.unique(batch.users)), ("item", np.unique(batch.items) + num_users))
    for side, nodes in sides:
        gamma = None
        if config.mode == "directspec_plus":
            gamma = temperature(nodes, normalize_rows(source[nodes]), side)
        before, after = balance_batch(source[nodes], config, gamma)
        if config.mode == "directspec":
            result.step_size_ok &= step_size_ok(before, config.alpha, config.power, log=False)
        result.updates.append(SideUpdate(side, nodes, before, after, gamma, source[nodes].copy()))

    if integration == "inplace":
        for up in result.updates:
            E[up.nodes] = up.after
    elif integration == "layer":
        delta = np.zeros_like(E)
        for up in result.updates:
            delta[up.nodes] += up.after - source[up.nodes]
        E += backward(params, adj, delta)
    return result


def balance_backward(update: SideUpdate, config: BalancerConfig, grad_after,
                     attention: AttentionParams | None = None):
    """Pull dL/d(balanced rows) back to the raw rows of one batch side.

    Returns ``(grad_raw, grad_w)``; ``grad_w`` is None unless the
    temperatures come from attention, whose dependence on the rows is
    differentiated as well.
    """
    Hn = update.before
    grad_w = None
    if config.mode == "directspec":
        dHn = directspec_backward(Hn, config.alpha, config.power, grad_after)
    else:
        gamma = float(config.tau1) if update.gamma is None else update.gamma
        dHn, dgamma = directspec_plus_backward(Hn, config.alpha, gamma, grad_after, config.mask_diagonal)
        if attention is not None and config.temperature_source == "dynamic_attention":
            d = attention.dim
            c = dgamma * update.gamma * (1.0 - update.gamma)
            rs, cs = c.sum(axis=1), c.sum(axis=0)
            dHn = dHn + np.outer(rs, attention.w[:d]) + np.outer(cs, attention.w[d:])
            grad_w = np.concatenate([Hn.T @ rs, Hn.T @ cs])
    raw = update.raw if update.raw is not None else Hn
    return normalize_rows_backward(raw, dHn), grad_w
