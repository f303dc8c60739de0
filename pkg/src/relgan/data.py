"""Toy 2-D data sources and the latent prior.

All randomness goes through ``numpy.random.Generator`` backed by PCG64, which
produces the same stream on every platform for a given seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASETS = ("ring8", "grid25", "two_moons")


@dataclass(frozen=True)
class MixtureSpec:
    name: str
    centers: np.ndarray  # [K, 2]
    std: float

    def __post_init__(self):
        if len(self.centers) < 1:
            raise ValueError("mixture needs at least one mode")
        if self.std < 0:
            raise ValueError("mode std must be non-negative")

    @property
    def n_modes(self) -> int:
        return len(self.centers)


def ring8(radius: float = 2.0, std: float = 0.02, n: int = 8) -> MixtureSpec:
    angles = 2 * np.pi * np.arange(n) / n
    return MixtureSpec("ring8", np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1), std)


def grid25(spacing: float = 1.0, std: float = 0.05) -> MixtureSpec:
    ticks = spacing * np.arange(-2, 3)
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    return MixtureSpec("grid25", np.stack([xx.ravel(), yy.ravel()], axis=1), std)


def two_moons(std: float = 0.05, points_per_moon: int = 50) -> MixtureSpec:
    """Two interleaved half circles, discretized into mixture centers."""
    t = np.linspace(0, np.pi, points_per_moon)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    centers = 1.5 * (np.concatenate([upper, lower]) - [0.5, 0.25])
    return MixtureSpec("two_moons", centers, std)


def mixture(name: str, **kwargs) -> MixtureSpec:
    builders = {"ring8": ring8, "grid25": grid25, "two_moons": two_moons}
    if name not in builders:
        raise KeyError(f"unknown dataset {name!r}; valid: {', '.join(DATASETS)}")
    return builders[name](**kwargs)


@dataclass(frozen=True)
class LatentPrior:
    dim: int = 8


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent PCG64 stream ``stream`` derived from ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def sample_real(spec: MixtureSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = rng.integers(spec.n_modes, size=m)
    return spec.centers[idx] + spec.std * rng.standard_normal((m, 2))


def sample_latent(prior: LatentPrior, m: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    return rng.standard_normal((m, prior.dim))


def write_samples_csv(path, samples: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in samples:
            w.writerow([f"{x:.9g}", f"{y:.9g}"])


def read_samples_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y"]:
        raise ValueError(f"{path}: expected header 'x,y'")
    return np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
