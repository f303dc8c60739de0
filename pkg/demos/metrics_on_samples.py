"""
What the metrics see
====================

Three synthetic "generators" on the ring: a perfect one, one that has
collapsed onto two modes, and one that covers every mode but too loosely.
"""
import numpy as np

from relgan.data import make_rng, ring8, sample_real
from relgan.metrics import evaluate

spec = ring8()
reference = sample_real(spec, 10_000, make_rng(0))
rng = make_rng(1)

perfect = sample_real(spec, 10_000, rng)
collapsed = spec.centers[rng.integers(2, size=10_000)] + spec.std * rng.standard_normal((10_000, 2))
blurry = sample_real(spec, 10_000, rng) + 0.2 * rng.standard_normal((10_000, 2))

for name, samples in (("perfect", perfect), ("collapsed", collapsed), ("blurry", blurry)):
    r = evaluate(samples, reference, spec)
    print(f"{name:>9}: jsd {r.jsd:.3f}  modes {r.modes}  hq_frac {r.hq_frac:.3f}  frechet {r.frechet:.3f}")
