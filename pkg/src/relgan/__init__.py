"""Relativistic GAN losses, a tape-based autodiff and toy 2-D training, in numpy."""
from .autodiff import Tape, Tensor, backward, grad_of_grad
from .data import LatentPrior, make_rng, mixture, sample_latent, sample_real
from .losses import LOSS_NAMES, CriticBatch, LossSpec, gradient_penalty, named_loss
from .metrics import evaluate, frechet_distance, jsd, mode_stats
from .nn import Network, build_mlp, default_critic, default_generator
from .optim import AdamState, adam_step
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "grad_of_grad",
    "LatentPrior", "make_rng", "mixture", "sample_latent", "sample_real",
    "LOSS_NAMES", "CriticBatch", "LossSpec", "gradient_penalty", "named_loss",
    "evaluate", "frechet_distance", "jsd", "mode_stats",
    "Network", "build_mlp", "default_critic", "default_generator",
    "AdamState", "adam_step",
    "TrainConfig", "train",
]
