"""Low-pass propagation collapses node embeddings; one direction per connected component survives."""
import numpy as np

from specrec.data import build_normalized_adjacency, complement_adjacency
from specrec.dynamics import simulate_filter_dynamics
from specrec.synthetic import random_bipartite, two_component_pairs

rng = np.random.default_rng(0)
H0 = rng.standard_normal((20, 8))

pairs = random_bipartite(10, 10, 0.4, rng=1)
adj = build_normalized_adjacency(pairs, 10, 10)
neg = complement_adjacency(pairs, 10, 10)
for mode in ("low_pass", "high_pass", "band"):
    res = simulate_filter_dynamics(adj, neg, 0.5, 500, H0, mode)
    print(f"{mode:9s} erank {res.eranks[0]:.3f} -> {res.eranks[-1]:.3f}  numeric rank {res.numeric_ranks[-1]}")

two = build_normalized_adjacency(two_component_pairs(5), 10, 10)
res = simulate_filter_dynamics(two, None, 0.5, 500, H0)
print(f"two components: numeric rank {res.numeric_ranks[-1]}")
