"""
RaSGAN and SGAN on the eight-Gaussian ring
==========================================

A short run of each loss at the same settings, printing the metric trace.
Pass a larger iteration count on the command line for the full 20k run.
"""
import sys
from pathlib import Path

from relgan.cli import scatter_svg
from relgan.data import LatentPrior, make_rng, mixture, sample_latent, sample_real
from relgan.trainer import TrainConfig, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
out = Path("demo_runs")
out.mkdir(exist_ok=True)

for loss, lr in (("RaSGAN", 2e-4), ("SGAN", 1e-3)):
    cfg = TrainConfig(loss=loss, seed=1, lr=lr, iterations=iterations, metric_interval=500)
    result = train(cfg)
    print(f"\n{loss} (lr={lr})")
    print("  iter    jsd  modes  hq_frac  frechet")
    for rec in result.log.records:
        m = rec.metrics
        print(f"  {rec.iter:>5}  {m.jsd:.3f}  {m.modes:>5}  {m.hq_frac:7.3f}  {m.frechet:7.3f}")

    gen = result.generator
    gen.eval()
    fake = gen(sample_latent(LatentPrior(), 2000, make_rng(0))).data
    real = sample_real(mixture("ring8"), 2000, make_rng(1))
    (out / f"{loss}.svg").write_text(scatter_svg(real, fake))
    print(f"  scatter written to {out / (loss + '.svg')}")
