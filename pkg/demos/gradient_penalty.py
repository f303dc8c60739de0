"""
Gradient penalty by double backpropagation
==========================================

The penalty lam * mean(||grad_x C(x_hat)|| - 1)^2 is built from a first
gradient that is itself on the tape, so its derivative with respect to the
critic weights is available by a second backward pass.
"""
import numpy as np

from relgan.autodiff import Tape, backward
from relgan.losses import GpConfig, gradient_penalty
from relgan.nn import DenseLayer, Network

rng = np.random.default_rng(0)
x_real = rng.standard_normal((16, 2))
x_fake = rng.standard_normal((16, 2))

for w in ([0.6, 0.8], [2.0, 0.0]):
    critic = Network([DenseLayer(np.array([w]), np.zeros(1))])
    tape = Tape()
    params = critic.bind(tape)
    penalty = gradient_penalty(lambda x: critic(x, params), x_real, x_fake, GpConfig(10.0),
                               rng=rng, tape=tape)
    grad_w = backward(penalty, [params["0.weight"]])[params["0.weight"]]
    print(f"w = {w}: penalty {penalty.item():.6f}, d penalty / dw = {grad_w.data.ravel()}")

# a linear critic has the same input gradient everywhere, so for w = (2, 0)
# the penalty is 10 * (2 - 1)^2 = 10 and its weight gradient is (20, 0)
