"""Repeatedly balance a random 10x10 matrix and watch its effective rank climb."""
from specrec import toy_trajectory

eranks = toy_trajectory(seed=42, size=10, alpha=0.05, iterations=50)
for it in (0, 1, 2, 5, 10, 20, 50):
    print(f"iteration {it:3d}  erank {eranks[it]:.4f}")
