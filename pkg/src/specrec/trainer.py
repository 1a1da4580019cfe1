"""Mini-batch SGD training for MF / LightGCN with optional spectrum balancing.

One step:
  1. sample B observed pairs;
  2. if a balancer is active, normalize and balance the batch user rows
     and item rows (separately);
  3. take the objective (+ L2) gradient on the balanced batch rows;
  4. plain SGD on the touched parameters.

How step 2 reaches the parameters depends on the integration. With
``backprop`` (default) balancing is a differentiable layer and only the
loss gradient moves the table. ``inplace`` and ``layer`` commit the
balanced rows to the table before the loss step.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from . import objectives as obj
from .balancer import (
    AttentionParams,
    BalancerConfig,
    TemperatureProvider,
    apply_balancer,
    attention_weight_grad,
    balance_backward,
    directspec_plus_gamma_grad,
)
from .data import (
    InteractionDataset,
    NegativeSampler,
    build_normalized_adjacency,
    estimate_global_anchors,
    sample_positive_batch,
)
from .encoders import EncoderParams, backward, forward, xavier_init
from .errors import ConfigError, DataError, DivergenceError
from .evaluation import evaluate
from .seeding import rng_stream
from .spectrum import erank

logger = logging.getLogger(__name__)

Objective = Literal["bpr", "bce", "align_log", "align_euclidean"]
ALIGNMENT_OBJECTIVES = ("align_log", "align_euclidean")


@dataclass
class TrainConfig:
    encoder_kind: Literal["mf", "lightgcn"] = "mf"
    objective: Objective = "bpr"
    balancer: BalancerConfig = field(default_factory=BalancerConfig)
    dim: int = 64
    batch_size: int = 256
    learning_rate: float = 0.05
    regularization: float = 0.01
    epochs: int = 100
    max_steps: int | None = None
    negative_ratio: int = 1
    use_positives: bool = True
    gcn_layers: int = 3
    layer_combination: Literal["mean", "sum"] = "mean"
    attention_learning_rate: float | None = None
    seed: int = 42
    erank_log_interval: int = 100
    eval_every: int = 5
    keep_best: bool = True

    def __post_init__(self):
        if isinstance(self.balancer, dict):
            self.balancer = BalancerConfig(**self.balancer)
        if self.objective not in ("bpr", "bce", *ALIGNMENT_OBJECTIVES):
            raise ConfigError(f"unknown objective {self.objective!r}")
        for name in ("dim", "batch_size", "erank_log_interval", "negative_ratio"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0 or self.regularization < 0 or self.epochs < 0:
            raise ConfigError("learning_rate, regularization and epochs must be non-negative")
        if self.balancer.active and self.objective not in ALIGNMENT_OBJECTIVES:
            raise ConfigError(
                f"balancer {self.balancer.mode} replaces negative sampling; "
                f"use an alignment objective, not {self.objective!r}"
            )
        if not self.use_positives and self.objective not in ("bce", *ALIGNMENT_OBJECTIVES):
            raise ConfigError("use_positives=False is only meaningful for bce or balancer runs")

    def to_dict(self):
        return asdict(self)


@dataclass
class HistoryRecord:
    step: int
    epoch: int
    loss: float
    erank: float
    val_ndcg10: float | None = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def eranks(self) -> np.ndarray:
        return np.array([r.erank for r in self.records])

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "epoch", "loss", "erank", "val_ndcg10"])
            for r in self.records:
                w.writerow([r.step, r.epoch, repr(r.loss), repr(r.erank),
                            "" if r.val_ndcg10 is None else repr(r.val_ndcg10)])


@dataclass
class TrainResult:
    params: EncoderParams
    history: TrainHistory
    attention: AttentionParams | None = None
    best_epoch: int | None = None

    def __iter__(self):
        return iter((self.params, self.history))


@dataclass(frozen=True)
class CollapseSummary:
    initial_erank: float
    min_erank: float
    final_erank: float
    epoch_of_min: int
    step_of_min: int


def collapse_report(history: TrainHistory) -> CollapseSummary:
    if len(history) == 0:
        raise DataError("empty history")
    er = history.eranks
    k = int(np.argmin(er))  # first occurrence
    rec = history.records[k]
    return CollapseSummary(float(er[0]), float(er[k]), float(er[-1]), rec.epoch, rec.step)


def _scatter(n, d, idx_grad_pairs):
    G = np.zeros((n, d))
    for idx, g in idx_grad_pairs:
        np.add.at(G, idx, g)
    return G


class _Step:
    """Objective gradients for one batch, on output-space rows."""

    def __init__(self, config: TrainConfig, nu: int, sampler: NegativeSampler | None, rng):
        self.c = config
        self.nu = nu
        self.sampler = sampler
        self.rng = rng

    def __call__(self, H_rows, users, items):
        """Returns (loss, [(node_idx, grad)], [(node_idx, reg_grad_source_rows)])."""
        c, nu = self.c, self.nu
        hu = H_rows(users)
        hi = H_rows(items + nu)
        loss = 0.0
        grads = []
        touched = [users, items + nu]
        if c.use_positives:
            if c.objective == "bpr":
                pass  # handled with the negatives below
            elif c.objective in ("bce", "align_log"):
                r = obj.alignment_log_loss(hu, hi)
                loss += r.value
                grads += [(users, r.grads[0]), (items + nu, r.grads[1])]
            elif c.objective == "align_euclidean":
                r = obj.euclidean_alignment(hu, hi)
                loss += r.value
                grads += [(users, r.grads[0]), (items + nu, r.grads[1])]
        if c.objective in ("bpr", "bce"):
            for _ in range(c.negative_ratio):
                neg = self.sampler.sample(users, self.rng)
                hj = H_rows(neg + nu)
                touched.append(neg + nu)
                if c.objective == "bpr":
                    r = obj.bpr_loss(hu, hi, hj)
                    grads += [(users, r.grads[0]), (items + nu, r.grads[1]), (neg + nu, r.grads[2])]
                else:
                    r = obj.bce_loss(hu, hj, 0.0)
                    grads += [(users, r.grads[0]), (neg + nu, r.grads[1])]
                loss += r.value
        return loss, grads, touched


def _resolve_anchors(config: TrainConfig, adj, rng):
    b = config.balancer
    if not (b.mode == "directspec_plus" and b.temperature_source == "static_graph"
            and b.global_anchors and b.tau0 < b.tau1):
        return None
    return {side: estimate_global_anchors(adj, b.hops, side, rng) for side in ("user", "item")}


def train(config: TrainConfig, dataset: InteractionDataset, params: EncoderParams | None = None) -> TrainResult:
    """Run SGD; deterministic for a given config.seed."""
    dataset.require_split()
    train_pairs = dataset.train
    if len(train_pairs) == 0:
        raise DataError("training split is empty")
    c = config
    nu, n = dataset.num_users, dataset.num_nodes
    adj = build_normalized_adjacency(dataset)
    if params is None:
        E = xavier_init(n, c.dim, rng_stream(c.seed, "init"))
        params = EncoderParams(E, c.encoder_kind, c.gcn_layers, c.layer_combination)
    E = params.base_embeddings
    batch_rng = rng_stream(c.seed, "batch")
    neg_rng = rng_stream(c.seed, "negatives")
    sampler = NegativeSampler(train_pairs, nu, dataset.num_items) if c.objective in ("bpr", "bce") else None
    step_fn = _Step(c, nu, sampler, neg_rng)

    bal = c.balancer
    attention = None
    if bal.mode == "directspec_plus" and bal.temperature_source == "dynamic_attention":
        attention = AttentionParams.init(c.dim)
    temperature = None
    if bal.active:
        anchors = _resolve_anchors(c, adj, rng_stream(c.seed, "anchors"))
        temperature = TemperatureProvider(bal, adj, attention, anchors=anchors)
    lr_att = c.learning_rate if c.attention_learning_rate is None else c.attention_learning_rate
    lightgcn = c.encoder_kind == "lightgcn"
    integration = bal.resolved_integration(c.encoder_kind) if bal.active else None
    validate = c.eval_every > 0 and dataset.val is not None and len(dataset.val) > 0

    history = TrainHistory()
    history.records.append(HistoryRecord(0, 0, float("nan"), erank(forward(params, adj))))
    best = (-np.inf, None, None)
    warned = False

    steps_per_epoch = math.ceil(len(train_pairs) / c.batch_size)
    last_size = len(train_pairs) - (steps_per_epoch - 1) * c.batch_size
    step = 0
    loss_acc, pairs_acc = 0.0, 0
    done = False
    for epoch in range(1, c.epochs + 1):
        for k in range(steps_per_epoch):
            if c.max_steps is not None and step >= c.max_steps:
                done = True
                break
            B = last_size if k == steps_per_epoch - 1 else c.batch_size
            batch = sample_positive_batch(train_pairs, B, batch_rng)
            H = forward(params, adj) if lightgcn else E
            bres = None
            if bal.active:
                bres = apply_balancer(params, batch, bal, adj, nu, temperature, H=H if lightgcn else None)
                if not bres.step_size_ok and not warned:
                    logger.warning("alpha * sigma_1^%d >= 1 at step %d; balancing overshoots", 2 * bal.power, step)
                    warned = True
                if integration == "layer":
                    # the loss sees the balanced output rows
                    H = H.copy() if H is E else H
                    for up in bres.updates:
                        H[up.nodes] = up.after
                elif integration == "inplace" and lightgcn:
                    H = forward(params, adj)

            if integration == "backprop":
                nodes = np.concatenate([up.nodes for up in bres.updates])
                stacked = np.concatenate([up.after for up in bres.updates])

                def rows(idx, _nodes=nodes, _stacked=stacked):
                    return _stacked[np.searchsorted(_nodes, idx)]
            else:
                def rows(idx, _H=H):
                    return _H[idx]

            loss, grads, touched = step_fn(rows, batch.users, batch.items)
            touched = np.concatenate(touched)
            if integration == "backprop":
                # penalize the rows the loss saw; the gradient goes back through the layer
                reg = obj.l2_regularization(rows(touched), c.regularization)
                grads.append((touched, reg.grads[0]))
            else:
                reg = obj.l2_regularization(E[touched], c.regularization)
            loss += reg.value
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step} (epoch {epoch})")

            if integration == "backprop" and grads:
                G_after = np.zeros_like(stacked)
                for idx, g in grads:
                    np.add.at(G_after, np.searchsorted(nodes, idx), g)
                grads, dw, offset = [], None, 0
                for up in bres.updates:
                    span = slice(offset, offset + len(up.nodes))
                    offset += len(up.nodes)
                    g_raw, g_w = balance_backward(up, bal, G_after[span], attention)
                    grads.append((up.nodes, g_raw))
                    if g_w is not None:
                        dw = g_w if dw is None else dw + g_w
                if dw is not None:
                    attention.w -= lr_att * dw
            elif attention is not None and bres is not None and grads:
                G_out = _scatter(n, c.dim, grads)
                dw = np.zeros_like(attention.w)
                for up in bres.updates:
                    dgamma = directspec_plus_gamma_grad(up.before, bal.alpha, up.gamma, G_out[up.nodes], bal.mask_diagonal)
                    dw += attention_weight_grad(attention, up.before, up.gamma, dgamma)
                attention.w -= lr_att * dw

            # outside backprop mode L2 acts on the base-table rows directly
            reg_direct = [] if integration == "backprop" else [(touched, reg.grads[0])]
            if lightgcn:
                G = backward(params, adj, _scatter(n, c.dim, grads)) if grads else 0.0
                if reg_direct:
                    G = G + _scatter(n, c.dim, reg_direct)
                E -= c.learning_rate * G
            else:
                for idx, g in grads + reg_direct:
                    np.add.at(E, idx, -c.learning_rate * g)

            step += 1
            loss_acc += loss
            pairs_acc += B
            if step % c.erank_log_interval == 0:
                history.records.append(HistoryRecord(step, epoch, loss_acc / pairs_acc, erank(forward(params, adj))))
                loss_acc, pairs_acc = 0.0, 0
        if done:
            break

        if validate and epoch % c.eval_every == 0:
            Hf = forward(params, adj)
            ndcg = evaluate(Hf, dataset, ks=(10,), split="val").ndcg(10)
            mean_loss = loss_acc / pairs_acc if pairs_acc else float("nan")
            history.records.append(HistoryRecord(step, epoch, mean_loss, erank(Hf), ndcg))
            logger.info("epoch %d step %d val nDCG@10 %.4f", epoch, step, ndcg)
            if c.keep_best and ndcg > best[0]:
                best = (ndcg, params.copy(), epoch)

    result = TrainResult(params, history, attention)
    if c.keep_best and best[1] is not None:
        result.params = best[1]
        result.best_epoch = best[2]
    return result
