"""Barlow Twins, spectral contrastive loss and LogDet computed two ways: pairwise and from singular values."""
import numpy as np

from specrec.balancer import normalize_rows
from specrec.spectrum import verify_ssl_equivalence

rng = np.random.default_rng(3)
H = rng.standard_normal((32, 8))
cols = H / np.linalg.norm(H, axis=0)
for method, M in (("barlow_twins", cols), ("scl", normalize_rows(H)), ("logdet", cols)):
    r = verify_ssl_equivalence(M, method)
    print(f"{method:13s} pairwise {r.pairwise_value:12.6f}  spectral {r.spectral_value:12.6f}  gap {r.absolute_gap:.1e}")
