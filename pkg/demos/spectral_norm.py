"""
Spectral normalization
======================

Power iteration estimates each layer's top singular value; dividing the
weight by it bounds the layer's Lipschitz constant by one.
"""
import numpy as np

from relgan.nn import default_critic

critic = default_critic(spectral_norm=True, seed=3)
rng = np.random.default_rng(1)
for layer in critic.layers:
    layer.weight *= 7.0   # the normalization should not care
    # forget the warm start so the convergence is visible
    layer.u = rng.standard_normal(len(layer.weight))
    layer.u /= np.linalg.norm(layer.u)
    layer.v = None

for iters in (1, 5, 50):
    critic.power_iteration(iters)
    est = [float(l.u @ l.weight @ l.v) for l in critic.layers]
    exact = [np.linalg.svd(l.weight, compute_uv=False)[0] for l in critic.layers]
    print(f"after +{iters:>2} iterations:", ", ".join(f"{e:.4f}/{x:.4f}" for e, x in zip(est, exact)))

x, y = rng.uniform(-3, 3, (10_000, 2)), rng.uniform(-3, 3, (10_000, 2))
ratio = np.abs(critic(x).data - critic(y).data).ravel() / np.linalg.norm(x - y, axis=1)
print(f"largest |C(x) - C(y)| / |x - y| over 10^4 pairs: {ratio.max():.4f}")
