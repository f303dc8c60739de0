"""Alternating critic/generator training on toy 2-D data.

Each outer iteration runs ``n_d`` critic steps and one generator step.  Real
and latent batches are drawn fresh for every step, including between the
critic phase and the generator phase.  Both networks descend on their losses
as defined in the loss registry.
"""
from __future__ import annotations

import io
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import data as data_mod
from .autodiff import DomainError, NonFiniteError, Tape, backward
from .data import LatentPrior, make_rng, mixture, sample_latent, sample_real
from .losses import (AVERAGE, NON_SATURATING, RELATIVISTIC, STANDARD, CriticBatch, GpConfig,
                     NamedLoss, gradient_penalty, loss_relativistic_average,
                     loss_relativistic_simplified, named_loss)
from .metrics import MetricsReport, evaluate
from .nn import Network, default_critic, default_generator, pack, save_checkpoint
from .optim import AdamState, NonFiniteGradientError, adam_step

RUNLOG_HEADER = "iter,loss_d,loss_g,mean_c_real,mean_c_fake,jsd,modes,hq_frac,frechet,wall_ms"

# RNG stream ids under the run seed
STREAM_INIT_G, STREAM_INIT_D, STREAM_REAL, STREAM_LATENT, STREAM_GP, STREAM_METRIC, STREAM_REF = range(7)


@dataclass
class TrainConfig:
    loss: str
    seed: int
    dataset: str = "ring8"
    m: int = 64
    n_d: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gp_lambda: float = 10.0
    iterations: int = 20000
    metric_interval: int = 500
    latent_dim: int = 8
    g_hidden: tuple[int, ...] = (64, 64)
    d_hidden: tuple[int, ...] = (64, 64)
    spectral_norm: bool = False
    batch_norm: bool = False
    pack: int = 1
    metric_samples: int = 10000
    wall_time: bool = False

    def __post_init__(self):
        if self.n_d < 1:
            raise ValueError("n_d must be >= 1")
        if self.m < 2:
            raise ValueError("batch size m must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.metric_interval < 1:
            raise ValueError("metric_interval must be >= 1")
        if self.pack < 1 or self.m % self.pack:
            raise ValueError(f"pack {self.pack} must divide batch size {self.m}")
        if self.gp_lambda < 0:
            raise ValueError("gp_lambda must be >= 0")
        self.g_hidden = tuple(self.g_hidden)
        self.d_hidden = tuple(self.d_hidden)


@dataclass
class RunRecord:
    iter: int
    loss_d: float
    loss_g: float
    mean_c_real: float
    mean_c_fake: float
    metrics: MetricsReport
    wall_ms: float = 0.0

    def csv_row(self) -> str:
        m = self.metrics
        vals = [str(self.iter), _fmt(self.loss_d), _fmt(self.loss_g), _fmt(self.mean_c_real),
                _fmt(self.mean_c_fake), _fmt(m.jsd), str(m.modes), _fmt(m.hq_frac), _fmt(m.frechet),
                f"{self.wall_ms:.0f}"]
        return ",".join(vals)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass
class RunLog:
    records: list[RunRecord] = field(default_factory=list)

    def append(self, rec: RunRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("run log iterations must be strictly increasing")
        self.records.append(rec)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(RUNLOG_HEADER + "\n")
        for rec in self.records:
            buf.write(rec.csv_row() + "\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def best(self) -> RunRecord | None:
        """Record with the lowest JSD."""
        return min(self.records, key=lambda r: r.metrics.jsd, default=None)


def read_runlog(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != RUNLOG_HEADER:
        raise ValueError(f"{path}: unexpected run log header")
    keys = RUNLOG_HEADER.split(",")
    rows = []
    for line in lines[1:]:
        vals = line.split(",")
        row = {k: float(v) for k, v in zip(keys, vals)}
        row["iter"] = int(row["iter"])
        row["modes"] = int(row["modes"])
        rows.append(row)
    return rows


@dataclass
class TrainResult:
    config: TrainConfig
    log: RunLog
    generator: Network
    critic: Network
    d_steps: int = 0
    g_steps: int = 0

    def checkpoint(self) -> dict:
        return {"generator": self.generator.state(), "critic": self.critic.state()}


class TrainingAborted(RuntimeError):
    """Non-finite value during training; carries the last good state."""

    def __init__(self, message, log: RunLog, last_good: dict, iteration: int):
        super().__init__(message)
        self.log = log
        self.last_good = last_good
        self.iteration = iteration


def _derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(stream,)).generate_state(1)[0])


def build_networks(config: TrainConfig) -> tuple[Network, Network]:
    gen = default_generator(config.latent_dim, config.g_hidden, batch_norm=config.batch_norm,
                            seed=_derived_seed(config.seed, STREAM_INIT_G))
    critic = default_critic(2, config.d_hidden, spectral_norm=config.spectral_norm, pack=config.pack,
                            seed=_derived_seed(config.seed, STREAM_INIT_D))
    return gen, critic


LossFn = Callable[[NamedLoss, CriticBatch], "tuple"]


def _rgan_losses(named: NamedLoss, cb: CriticBatch):
    return (loss_relativistic_simplified(named.spec, cb, "D"),
            loss_relativistic_simplified(named.spec, cb, "G"))


def _ragan_losses(named: NamedLoss, cb: CriticBatch):
    return loss_relativistic_average(named.spec, cb)


def _standard_losses(named: NamedLoss, cb: CriticBatch):
    return named.losses(cb)


def _run(config: TrainConfig, loss_fn: LossFn, out_dir=None) -> TrainResult:
    named = named_loss(config.loss)
    spec = mixture(config.dataset)
    prior = LatentPrior(config.latent_dim)
    gen, critic = build_networks(config)
    opt_g = AdamState(config.lr, config.beta1, config.beta2)
    opt_d = AdamState(config.lr, config.beta1, config.beta2)
    gp = GpConfig(config.gp_lambda)
    k = config.pack

    rng_real = make_rng(config.seed, STREAM_REAL)
    rng_latent = make_rng(config.seed, STREAM_LATENT)
    rng_gp = make_rng(config.seed, STREAM_GP)
    rng_metric = make_rng(config.seed, STREAM_METRIC)
    reference = sample_real(spec, config.metric_samples, make_rng(config.seed, STREAM_REF))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    log = RunLog()
    result = TrainResult(config, log, gen, critic)
    last_good = result.checkpoint()
    start = time.perf_counter()
    it = 0
    try:
        for it in range(1, config.iterations + 1):
            for _ in range(config.n_d):
                x_real = data_mod.sample_real(spec, config.m, rng_real)
                z = data_mod.sample_latent(prior, config.m, rng_latent)
                x_fake = gen(z).data
                critic.power_iteration()
                tape = Tape()
                params_d = critic.bind(tape)
                xr, xf = pack(x_real, k), pack(x_fake, k)
                cb = CriticBatch(critic(xr, params_d), critic(xf, params_d))
                loss_d, _ = loss_fn(named, cb)
                if named.gp:
                    loss_d = loss_d + gradient_penalty(lambda x: critic(x, params_d), xr, xf, gp,
                                                       rng=rng_gp, tape=tape)
                grads = backward(loss_d, params_d.values())
                adam_step(opt_d, critic.parameters(), {n: grads[t].data for n, t in params_d.items()})
                result.d_steps += 1

            x_real = data_mod.sample_real(spec, config.m, rng_real)
            z = data_mod.sample_latent(prior, config.m, rng_latent)
            tape = Tape()
            params_g = gen.bind(tape)
            x_fake = gen(tape.const(z), params_g)
            cb_g = CriticBatch(critic(pack(x_real, k)), critic(pack(x_fake, k)))
            _, loss_g = loss_fn(named, cb_g)
            grads = backward(loss_g, params_g.values())
            adam_step(opt_g, gen.parameters(), {n: grads[t].data for n, t in params_g.items()})
            result.g_steps += 1

            if it % config.metric_interval == 0 or it == config.iterations:
                gen.eval()
                samples = gen(sample_latent(prior, config.metric_samples, rng_metric)).data
                gen.train()
                wall = (time.perf_counter() - start) * 1000 if config.wall_time else 0.0
                log.append(RunRecord(it, loss_d.item(), loss_g.item(), float(cb.c_real.data.mean()),
                                     float(cb.c_fake.data.mean()), evaluate(samples, reference, spec), wall))
                last_good = result.checkpoint()
                if out_dir is not None:
                    data_mod.write_samples_csv(out_dir / f"samples_{it}.csv", samples)
                    save_checkpoint(out_dir / f"checkpoint_{it}.csv", {"generator": gen, "critic": critic})
    except (NonFiniteError, NonFiniteGradientError, DomainError) as exc:
        if out_dir is not None:
            log.write(out_dir / "runlog.csv")
        raise TrainingAborted(f"iteration {it}: {exc}", log, last_good, it) from exc

    if out_dir is not None:
        log.write(out_dir / "runlog.csv")
        save_checkpoint(out_dir / "checkpoint_final.csv", {"generator": gen, "critic": critic})
    return result


def train_rgan(config: TrainConfig, out_dir=None) -> TrainResult:
    """Relativistic training with the symmetric, non-saturating simplified loss."""
    spec = named_loss(config.loss).spec
    if not spec.symmetric or spec.saturating_mode != NON_SATURATING:
        raise ValueError(f"{config.loss} is not a symmetric non-saturating loss")
    return _run(config, _rgan_losses, out_dir)


def train_ragan(config: TrainConfig, out_dir=None) -> TrainResult:
    """Relativistic-average training; the generator loss keeps both terms."""
    return _run(config, _ragan_losses, out_dir)


def train_standard(config: TrainConfig, out_dir=None) -> TrainResult:
    return _run(config, _standard_losses, out_dir)


def train(config: TrainConfig, out_dir=None) -> TrainResult:
    """Dispatch on the assembly kind of the named loss."""
    kind = named_loss(config.loss).kind
    if kind == RELATIVISTIC:
        return train_rgan(config, out_dir)
    if kind == AVERAGE:
        return train_ragan(config, out_dir)
    return train_standard(config, out_dir)


def config_fields() -> dict[str, type]:
    return {f.name: f.type for f in fields(TrainConfig)}
