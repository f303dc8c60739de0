"""Sample-quality metrics for 2-D toy data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MixtureSpec

GRID_BOUNDS = (-3.0, 3.0)
GRID_RESOLUTION = 60
SMOOTHING = 1e-9


@dataclass(frozen=True)
class GridHistogram:
    probs: np.ndarray  # flattened, sums to 1
    bounds: tuple[float, float] = GRID_BOUNDS
    resolution: int = GRID_RESOLUTION

    @classmethod
    def from_samples(cls, samples, bounds=GRID_BOUNDS, resolution=GRID_RESOLUTION,
                     alpha=SMOOTHING) -> "GridHistogram":
        """Normalized 2-D histogram; samples outside the box land in the edge cells."""
        pts = np.clip(np.asarray(samples, dtype=np.float64), bounds[0], bounds[1])
        counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=resolution, range=[bounds, bounds])
        return cls(_normalize(counts.ravel() + alpha), tuple(bounds), resolution)


def _normalize(x):
    p = np.asarray(x, dtype=np.float64)
    return p / p.sum()


def _kl_to_mid(p, q):
    """KL(p || (p+q)/2), written so tiny q cannot underflow the midpoint."""
    mask = p > 0
    return float(np.sum(p[mask] * np.log(2 * p[mask] / (p[mask] + q[mask]))))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats; bounded by log 2."""
    if isinstance(p, GridHistogram) or isinstance(q, GridHistogram):
        if not (isinstance(p, GridHistogram) and isinstance(q, GridHistogram)):
            raise ValueError("cannot compare a grid histogram with a raw vector")
        if (p.bounds, p.resolution) != (q.bounds, q.resolution):
            raise ValueError("histograms are on different grids")
        p, q = p.probs, q.probs
    p, q = _normalize(p), _normalize(q)
    if p.shape != q.shape:
        raise ValueError("distributions have different supports")
    return 0.5 * _kl_to_mid(p, q) + 0.5 * _kl_to_mid(q, p)


@dataclass(frozen=True)
class ModeStats:
    counts: np.ndarray       # samples assigned to each mode (nearest center)
    hq_counts: np.ndarray    # of those, samples within 3 std of the center
    hq_fraction: float
    covered: int


def mode_stats(samples, spec: MixtureSpec, *, n_std: float = 3.0) -> ModeStats:
    """Nearest-center assignment; a mode is covered when it holds at least
    m / (10 K) high-quality samples."""
    pts = np.asarray(samples, dtype=np.float64)
    if len(pts) < 1:
        raise ValueError("need at least one sample")
    d2 = ((pts[:, None, :] - spec.centers[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    dist = np.sqrt(d2[np.arange(len(pts)), nearest])
    hq = dist <= n_std * spec.std
    k = spec.n_modes
    counts = np.bincount(nearest, minlength=k)
    hq_counts = np.bincount(nearest[hq], minlength=k)
    covered = int(np.sum(hq_counts >= len(pts) / (10 * k)))
    return ModeStats(counts, hq_counts, float(hq.mean()), covered)


@dataclass(frozen=True)
class FrechetStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "FrechetStats":
        pts = np.asarray(samples, dtype=np.float64)
        return cls(pts.mean(axis=0), np.atleast_2d(np.cov(pts, rowvar=False)))


def _jittered(cov, jitter):
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    return 0.5 * (cov + cov.T) + jitter * np.eye(len(cov))


def _psd_eig(mat, what):
    w, v = np.linalg.eigh(mat)
    if w.min() < -1e-9:
        raise ValueError(f"{what} is not positive semi-definite")
    return np.clip(w, 0, None), v


def _trace_sqrt_product(cov_a, cov_b) -> float:
    """tr (S_a S_b)^(1/2) for PSD S_a, S_b."""
    w, v = _psd_eig(cov_a, "covariance")
    _psd_eig(cov_b, "covariance")
    if len(cov_a) == 2:
        # eigenvalues l1, l2 of S_a S_b are real and >= 0, and
        # (sqrt l1 + sqrt l2)^2 = tr + 2 sqrt(det); exact even for singular inputs
        det = max(np.linalg.det(cov_a), 0.0) * max(np.linalg.det(cov_b), 0.0)
        return float(np.sqrt(max(np.trace(cov_a @ cov_b), 0.0) + 2 * np.sqrt(det)))
    # same trace as the symmetric (S_a^(1/2) S_b S_a^(1/2))^(1/2)
    root_a = (v * np.sqrt(w)) @ v.T
    middle = root_a @ cov_b @ root_a
    cross, _ = _psd_eig(0.5 * (middle + middle.T), "covariance product")
    return float(np.sqrt(cross).sum())


def frechet_distance(a: FrechetStats, b: FrechetStats, jitter: float = 1e-9) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))."""
    cov_a, cov_b = _jittered(a.cov, jitter), _jittered(b.cov, jitter)
    diff = np.asarray(a.mean) - np.asarray(b.mean)
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * _trace_sqrt_product(cov_a, cov_b))


@dataclass(frozen=True)
class MetricsReport:
    jsd: float
    modes: int
    hq_frac: float
    frechet: float


def evaluate(samples, reference, spec: MixtureSpec) -> MetricsReport:
    stats = mode_stats(samples, spec)
    return MetricsReport(
        jsd=jsd(GridHistogram.from_samples(samples), GridHistogram.from_samples(reference)),
        modes=stats.covered,
        hq_frac=stats.hq_fraction,
        frechet=frechet_distance(FrechetStats.from_samples(samples), FrechetStats.from_samples(reference)),
    )
