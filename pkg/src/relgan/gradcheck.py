"""Gradient verification: closed-form oracles and finite differences.

Two suites run on small random networks:

* the closed-form SGAN / IPM gradients, assembled from per-sample critic
  gradients, against autodiff (relative error < 1e-8);
* every named loss, critic side and generator side, against central
  finite differences on every parameter (relative error < 1e-4).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, backward
from .losses import (IPM_SPEC, LOSS_NAMES, ORACLE_KINDS, SGAN_SPEC, CriticBatch, GpConfig,
                     closed_form_gradients_oracle, gradient_penalty, loss_standard_D, named_loss)
from .nn import Network, build_mlp

ORACLE_TOL = 1e-8
FD_TOL = 1e-4
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str       # loss or oracle kind
    check: str      # "oracle", "fd_D" or "fd_G"
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def relative_error(got: dict, want: dict) -> float:
    """max |got - want| / max |want| over all parameters."""
    num = max(float(np.max(np.abs(got[k] - want[k]))) for k in want)
    den = max(float(np.max(np.abs(want[k]))) for k in want)
    return num / den if den > 0 else num


def _autodiff(net: Network, loss_of_params) -> dict:
    tape = Tape()
    params = net.bind(tape)
    grads = backward(loss_of_params(params), params.values())
    return {name: grads[t].data for name, t in params.items()}


def _finite_differences(net: Network, loss_value, h: float = FD_STEP) -> dict:
    out = {}
    for name, arr in net.parameters().items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


@dataclass
class _Problem:
    critic: Network
    generator: Network
    x_real: np.ndarray
    z: np.ndarray
    eps: np.ndarray


def _problem(seed: int, m: int = 6) -> _Problem:
    rng = np.random.default_rng(seed)
    return _Problem(
        critic=build_mlp([2, 8, 1], "tanh", seed=seed + 1),
        generator=build_mlp([3, 8, 2], "tanh", seed=seed + 2),
        x_real=rng.standard_normal((m, 2)),
        z=rng.standard_normal((m, 3)),
        eps=rng.uniform(size=m),
    )


def _loss_d(name, p: _Problem, params=None):
    named = named_loss(name)
    x_fake = p.generator(p.z).data
    critic = (lambda x: p.critic(x, params)) if params is not None else p.critic
    loss = named.losses(CriticBatch(critic(p.x_real), critic(x_fake)))[0]
    if named.gp:
        tape = next(iter(params.values())).tape if params else None
        loss = loss + gradient_penalty(critic, p.x_real, x_fake, GpConfig(10.0), eps=p.eps, tape=tape)
    return loss


def _loss_g(name, p: _Problem, params=None):
    named = named_loss(name)
    if params is not None:
        tape = next(iter(params.values())).tape
        x_fake = p.generator(tape.const(p.z), params)
    else:
        x_fake = p.generator(p.z)
    return named.losses(CriticBatch(p.critic(p.x_real), p.critic(x_fake)))[1]


def check_oracles(seed: int = 0) -> list[CheckResult]:
    p = _problem(seed)
    x_fake = p.generator(p.z).data
    results = []
    for kind in ORACLE_KINDS:
        spec = SGAN_SPEC if kind.startswith("SGAN") else IPM_SPEC
        if kind.endswith("_D"):
            oracle = closed_form_gradients_oracle(kind, p.critic, (p.x_real, x_fake))
            auto = _autodiff(p.critic, lambda prm: loss_standard_D(
                spec, CriticBatch(p.critic(p.x_real, prm), p.critic(x_fake, prm))))
        else:
            oracle = closed_form_gradients_oracle(kind, p.critic, p.z, generator=p.generator)

            def loss(prm):
                x = p.generator(next(iter(prm.values())).tape.const(p.z), prm)
                return spec.g2(p.critic(x).reshape(-1)).mean()
            auto = _autodiff(p.generator, loss)
        results.append(CheckResult(kind, "oracle", relative_error(auto, oracle), ORACLE_TOL))
    return results


def check_finite_differences(seed: int = 0, names=LOSS_NAMES) -> list[CheckResult]:
    p = _problem(seed)
    results = []
    for name in names:
        auto = _autodiff(p.critic, lambda prm: _loss_d(name, p, prm))
        fd = _finite_differences(p.critic, lambda: _loss_d(name, p).item())
        results.append(CheckResult(name, "fd_D", relative_error(auto, fd), FD_TOL))
        auto = _autodiff(p.generator, lambda prm: _loss_g(name, p, prm))
        fd = _finite_differences(p.generator, lambda: _loss_g(name, p).item())
        results.append(CheckResult(name, "fd_G", relative_error(auto, fd), FD_TOL))
    return results


def run_all(seed: int = 0) -> list[CheckResult]:
    return check_oracles(seed) + check_finite_differences(seed)


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'name':<12} {'check':<7} {'max_rel_err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<12} {r.check:<7} {r.max_rel_err:12.3e} {r.tol:8.0e}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
