"""Alignment-only training collapses; the same run with a balancer does not; then a small accuracy comparison.

Takes a few minutes on a laptop CPU.
"""
from specrec import BalancerConfig, TrainConfig, collapse_report, train
from specrec.data import build_normalized_adjacency, from_pairs, split
from specrec.encoders import forward
from specrec.evaluation import evaluate
from specrec.seeding import rng_stream
from specrec.synthetic import as_train_only, dense_core_pairs, latent_factor_pairs

core = as_train_only(dense_core_pairs(rng=0), 200, 200)
steps = dict(epochs=10**6, max_steps=3000, eval_every=0, erank_log_interval=100, learning_rate=0.05)
runs = {
    "euclidean alignment": TrainConfig(objective="align_euclidean", **steps),
    "log alignment": TrainConfig(objective="align_log", **steps),
    "log alignment + directspec": TrainConfig(objective="align_log", balancer=BalancerConfig(mode="directspec", alpha=0.05), **steps),
}
for name, cfg in runs.items():
    r = collapse_report(train(cfg, core).history)
    print(f"{name:28s} erank {r.initial_erank:6.2f} -> min {r.min_erank:6.2f} (step {r.step_of_min}) -> {r.final_erank:6.2f}")

# a learnable synthetic catalog
ds = split(from_pairs(latent_factor_pairs(1000, 3000, 16, 40, rng=1, temperature=0.25), 1000, 3000),
           rng_stream(42, "split"))
adj = build_normalized_adjacency(ds)
common = dict(epochs=60, eval_every=5, learning_rate=0.2)
models = {
    "bpr": TrainConfig(objective="bpr", **common),
    "directspec+ (alpha 0.3)": TrainConfig(objective="align_log", balancer=BalancerConfig(
        mode="directspec_plus", alpha=0.3, tau0=3.0, tau1=3.0), **common),
    "directspec+ (alpha 1.1)": TrainConfig(objective="align_log", balancer=BalancerConfig(
        mode="directspec_plus", alpha=1.1, tau0=3.0, tau1=3.0), **common),
}
for name, cfg in models.items():
    res = train(cfg, ds)
    rep = evaluate(forward(res.params, adj), ds, ks=(10, 20))
    print(f"{name:24s} recall@20 {rep.recall(20):.4f}  ndcg@10 {rep.ndcg(10):.4f}")
