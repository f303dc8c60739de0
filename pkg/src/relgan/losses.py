"""GAN objectives in terms of the critic C(x).

A :class:`LossSpec` holds four scalar maps (f1, f2, g1, g2).  The same spec
can be assembled three ways:

* standard:     L_D = E f1(C_r) + E f2(C_f)
* relativistic: L_D = E f1(C_r - C_f) + E f2(C_f - C_r)      (index-wise pairs)
* average:      L_D = E f1(C_r - mean C_f) + E f2(C_f - mean C_r)

and the generator loss uses (g1, g2) in the same positions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import (Tape, Tensor, as_tensor, backward, l2_norm_rows, stable_log_sigmoid,
                       stable_sigmoid)

PAIRWISE_MAX_BATCH = 64


# -- scalar maps --------------------------------------------------------------

@dataclass(frozen=True)
class ScalarMap:
    """Elementwise y -> f(y), usable on tensors (taped) and on plain arrays."""

    name: str

    def __call__(self, y: Tensor) -> Tensor:
        raise NotImplementedError

    def numpy(self, y) -> np.ndarray:
        return self(Tensor(np.asarray(y, dtype=np.float64))).data

    def __neg__(self) -> "ScalarMap":
        return Negated(f"-({self.name})", self)


@dataclass(frozen=True)
class NegLogSigmoid(ScalarMap):
    """-log sigmoid(sign * y); sign=-1 gives -log(1 - sigmoid(y))."""

    sign: float = 1.0

    def __call__(self, y):
        return -(as_tensor(y) * self.sign).log_sigmoid()

    def numpy(self, y):
        return -stable_log_sigmoid(self.sign * np.asarray(y, dtype=np.float64))


@dataclass(frozen=True)
class Squared(ScalarMap):
    """(y - target)^2."""

    target: float = 0.0

    def __call__(self, y):
        return (as_tensor(y) - self.target).square()

    def numpy(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target) ** 2


@dataclass(frozen=True)
class Hinge(ScalarMap):
    """max(0, 1 - sign * y)."""

    sign: float = 1.0

    def __call__(self, y):
        return (1.0 - as_tensor(y) * self.sign).max0()

    def numpy(self, y):
        return np.maximum(0.0, 1.0 - self.sign * np.asarray(y, dtype=np.float64))


@dataclass(frozen=True)
class Linear(ScalarMap):
    """sign * y."""

    sign: float = 1.0

    def __call__(self, y):
        return as_tensor(y) * self.sign

    def numpy(self, y):
        return self.sign * np.asarray(y, dtype=np.float64)


@dataclass(frozen=True)
class Negated(ScalarMap):
    inner: ScalarMap = None

    def __call__(self, y):
        return -self.inner(y)

    def numpy(self, y):
        return -self.inner.numpy(y)


def neg_log_sigmoid(sign=1.0):
    return NegLogSigmoid("-log sigmoid(y)" if sign > 0 else "-log(1 - sigmoid(y))", sign)


def squared(target):
    return Squared(f"(y - {target:g})^2", float(target))


def hinge(sign=1.0):
    return Hinge("max(0, 1 - y)" if sign > 0 else "max(0, 1 + y)", sign)


def linear(sign=1.0):
    return Linear("y" if sign > 0 else "-y", sign)


def maps_equal(a: ScalarMap, b: ScalarMap, *, tol=1e-12, points=None) -> bool:
    ys = np.linspace(-10, 10, 401) if points is None else np.asarray(points)
    return bool(np.all(np.abs(a.numpy(ys) - b.numpy(ys)) <= tol))


# -- loss specs ---------------------------------------------------------------

SATURATING = "saturating"
NON_SATURATING = "non_saturating"
CUSTOM = "custom"


@dataclass(frozen=True)
class LossSpec:
    name: str
    f1: ScalarMap
    f2: ScalarMap
    g1: ScalarMap
    g2: ScalarMap
    symmetric: bool = False
    saturating_mode: str = NON_SATURATING

    def __post_init__(self):
        ys = np.linspace(-10, 10, 401)
        if self.symmetric and not np.all(np.abs(self.f2.numpy(-ys) - self.f1.numpy(ys)) <= 1e-12):
            raise ValueError(f"{self.name}: symmetric flag set but f2(-y) != f1(y)")
        if self.saturating_mode == NON_SATURATING:
            ok = maps_equal(self.g1, self.f2) and maps_equal(self.g2, self.f1)
        elif self.saturating_mode == SATURATING:
            ok = maps_equal(self.g1, -self.f1) and maps_equal(self.g2, -self.f2)
        elif self.saturating_mode == CUSTOM:
            ok = True
        else:
            raise ValueError(f"unknown saturating_mode {self.saturating_mode!r}")
        if not ok:
            raise ValueError(f"{self.name}: generator maps inconsistent with {self.saturating_mode}")

    @classmethod
    def non_saturating(cls, name, f1, f2, symmetric=False) -> "LossSpec":
        return cls(name, f1, f2, f2, f1, symmetric, NON_SATURATING)

    @classmethod
    def saturating(cls, name, f1, f2, symmetric=False) -> "LossSpec":
        return cls(name, f1, f2, -f1, -f2, symmetric, SATURATING)


SGAN_SPEC = LossSpec.non_saturating("SGAN", neg_log_sigmoid(1), neg_log_sigmoid(-1), symmetric=True)
IPM_SPEC = LossSpec.non_saturating("IPM", linear(-1), linear(1), symmetric=True)
# Least-squares critic targets: real -> 0, fake -> 1 (reversed from the common convention).
LSGAN_SPEC = LossSpec.non_saturating("LSGAN", squared(0), squared(1))
RALSGAN_SPEC = LossSpec.non_saturating("RaLSGAN", squared(1), squared(-1), symmetric=True)
HINGE_SPEC = LossSpec("HingeGAN", hinge(1), hinge(-1), linear(1), linear(-1), False, CUSTOM)
RAHINGE_SPEC = LossSpec.non_saturating("RaHingeGAN", hinge(1), hinge(-1), symmetric=True)


# -- critic batches -----------------------------------------------------------

@dataclass
class CriticBatch:
    c_real: Tensor
    c_fake: Tensor

    def __post_init__(self):
        self.c_real = _flat(as_tensor(self.c_real))
        self.c_fake = _flat(as_tensor(self.c_fake))
        if self.c_real.shape != self.c_fake.shape:
            raise ValueError(f"real/fake critic lengths differ: {self.c_real.shape} vs {self.c_fake.shape}")

    @property
    def m(self) -> int:
        return self.c_real.shape[0]


def _flat(t: Tensor) -> Tensor:
    if t.ndim == 1:
        return t
    if t.ndim == 0:
        return t.reshape(1)
    if t.ndim == 2 and t.shape[1] == 1:
        return t.reshape(t.shape[0])
    raise ValueError(f"critic outputs must be [m] or [m, 1], got {t.shape}")


def loss_standard_D(spec: LossSpec, cb: CriticBatch) -> Tensor:
    return spec.f1(cb.c_real).mean() + spec.f2(cb.c_fake).mean()


def loss_standard_G(spec: LossSpec, cb: CriticBatch) -> Tensor:
    return spec.g1(cb.c_real).mean() + spec.g2(cb.c_fake).mean()


def loss_relativistic(spec: LossSpec, cb: CriticBatch) -> tuple[Tensor, Tensor]:
    diff = cb.c_real - cb.c_fake  # real i paired with fake i
    rev = -diff
    loss_d = spec.f1(diff).mean() + spec.f2(rev).mean()
    loss_g = spec.g1(diff).mean() + spec.g2(rev).mean()
    return loss_d, loss_g


def loss_relativistic_simplified(spec: LossSpec, cb: CriticBatch, side: str = "D") -> Tensor:
    """E f1(C_r - C_f) for the critic, E f1(C_f - C_r) for the generator.

    Equals half of :func:`loss_relativistic` when f2(-y) = f1(y) and the
    generator is non-saturating.
    """
    if not spec.symmetric:
        raise ValueError(f"{spec.name} is not symmetric; the simplified form does not apply")
    if side == "D":
        return spec.f1(cb.c_real - cb.c_fake).mean()
    if side == "G":
        return spec.f1(cb.c_fake - cb.c_real).mean()
    raise ValueError("side must be 'D' or 'G'")


def loss_relativistic_average(spec: LossSpec, cb: CriticBatch) -> tuple[Tensor, Tensor]:
    if cb.m < 1:
        raise ValueError("empty batch")
    real_rel = cb.c_real - cb.c_fake.mean()
    fake_rel = cb.c_fake - cb.c_real.mean()
    loss_d = spec.f1(real_rel).mean() + spec.f2(fake_rel).mean()
    loss_g = spec.g1(real_rel).mean() + spec.g2(fake_rel).mean()
    return loss_d, loss_g


def loss_rad_pairwise_oracle(cb: CriticBatch) -> float:
    """Mean-of-sigmoids discriminator loss over all m^2 real/fake pairs.

    Quadratic in the batch size, so it refuses batches over 64.
    """
    if cb.m > PAIRWISE_MAX_BATCH:
        raise ValueError(f"pairwise oracle is O(m^2); batch {cb.m} > {PAIRWISE_MAX_BATCH}")
    cr = cb.c_real.data
    cf = cb.c_fake.data
    diff = cr[:, None] - cf[None, :]          # [real i, fake j]
    real_term = np.mean(np.log(np.mean(stable_sigmoid(diff), axis=1)))
    # 1 - mean_i sigmoid(C_f - C_r) = mean_i sigmoid(C_r - C_f)
    fake_term = np.mean(np.log(np.mean(stable_sigmoid(diff), axis=0)))
    return float(-real_term - fake_term)


# -- gradient penalty ---------------------------------------------------------

@dataclass
class GpConfig:
    lam: float = 10.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("penalty weight must be >= 0")


def interpolate(x_real: np.ndarray, x_fake: np.ndarray, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    if np.any((eps < 0) | (eps > 1)):
        raise ValueError("interpolation weights must lie in [0, 1]")
    return eps * x_real + (1.0 - eps) * x_fake


def gradient_penalty(critic: Callable[[Tensor], Tensor], x_real, x_fake, gp: GpConfig,
                     *, rng: np.random.Generator | None = None, eps=None, tape=None) -> Tensor:
    """lam * mean_i (||grad_x C(x_hat_i)||_2 - 1)^2 on random interpolates.

    ``critic`` must record onto ``tape`` (the caller's tape, on which the
    critic weights are leaves) so the result is differentiable w.r.t. them.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ValueError(f"real/fake shapes differ: {x_real.shape} vs {x_fake.shape}")
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = rng.uniform(0.0, 1.0, size=x_real.shape[0])
    if tape is None:
        tape = Tape()
    x_hat = tape.leaf(interpolate(x_real, x_fake, eps), name="x_hat")
    scores = critic(x_hat).sum()
    grad = backward(scores, [x_hat], create_graph=True)[x_hat]
    norms = l2_norm_rows(grad.reshape(grad.shape[0], -1))
    return (norms - 1.0).square().mean() * gp.lam


# -- named losses -------------------------------------------------------------

STANDARD = "standard"
RELATIVISTIC = "relativistic"
AVERAGE = "average"


@dataclass(frozen=True)
class NamedLoss:
    """A LossSpec plus the rule for assembling it into (L_D, L_G)."""

    name: str
    spec: LossSpec
    kind: str                          # standard | relativistic | average
    gp: bool = False
    # The standard generator losses leave out the real-data term, which
    # does not depend on the generator.
    g_real_term: bool = True

    def losses(self, cb: CriticBatch) -> tuple[Tensor, Tensor]:
        if self.kind == STANDARD:
            loss_d = loss_standard_D(self.spec, cb)
            loss_g = self.spec.g2(cb.c_fake).mean()
            if self.g_real_term:
                loss_g = loss_g + self.spec.g1(cb.c_real).mean()
            return loss_d, loss_g
        if self.kind == RELATIVISTIC:
            return (loss_relativistic_simplified(self.spec, cb, "D"),
                    loss_relativistic_simplified(self.spec, cb, "G"))
        if self.kind == AVERAGE:
            return loss_relativistic_average(self.spec, cb)
        raise ValueError(f"unknown assembly kind {self.kind!r}")

    def loss_d(self, cb):
        return self.losses(cb)[0]

    def loss_g(self, cb):
        return self.losses(cb)[1]


LOSS_NAMES = ("SGAN", "RSGAN", "RaSGAN", "LSGAN", "RaLSGAN", "HingeGAN", "RaHingeGAN",
              "WGAN-GP", "RSGAN-GP", "RaSGAN-GP")

_REGISTRY = {
    "SGAN": NamedLoss("SGAN", SGAN_SPEC, STANDARD, g_real_term=False),
    "RSGAN": NamedLoss("RSGAN", SGAN_SPEC, RELATIVISTIC),
    "RaSGAN": NamedLoss("RaSGAN", SGAN_SPEC, AVERAGE),
    "LSGAN": NamedLoss("LSGAN", LSGAN_SPEC, STANDARD, g_real_term=False),
    "RaLSGAN": NamedLoss("RaLSGAN", RALSGAN_SPEC, AVERAGE),
    "HingeGAN": NamedLoss("HingeGAN", HINGE_SPEC, STANDARD, g_real_term=False),
    "RaHingeGAN": NamedLoss("RaHingeGAN", RAHINGE_SPEC, AVERAGE),
    "WGAN-GP": NamedLoss("WGAN-GP", IPM_SPEC, STANDARD, gp=True, g_real_term=False),
    "RSGAN-GP": NamedLoss("RSGAN-GP", SGAN_SPEC, RELATIVISTIC, gp=True),
    "RaSGAN-GP": NamedLoss("RaSGAN-GP", SGAN_SPEC, AVERAGE, gp=True),
}


def named_loss(name: str) -> NamedLoss:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown loss {name!r}; valid names: {', '.join(LOSS_NAMES)}") from None


# -- closed-form gradient oracle ----------------------------------------------

ORACLE_KINDS = ("SGAN_D", "SGAN_G", "IPM_D", "IPM_G")


def _per_sample_critic_grads(critic, x: np.ndarray):
    """Row i: gradient of C(x_i) w.r.t. every critic parameter."""
    out = []
    for row in x:
        tape = Tape()
        params = critic.bind(tape)
        c = critic(row.reshape(1, -1), params).sum()
        g = backward(c, params.values())
        out.append({name: g[t].data for name, t in params.items()})
    return out


def _critic_value(critic, x):
    return critic(np.asarray(x, dtype=np.float64)).data.reshape(-1)


def closed_form_gradients_oracle(kind: str, critic, batch, generator=None) -> dict[str, np.ndarray]:
    """Assemble SGAN / IPM gradients from per-sample critic gradients.

    D kinds: ``batch = (x_real, x_fake)``, gradients w.r.t. critic parameters.
    G kinds: ``batch = z``, gradients w.r.t. generator parameters, via the
    chain rule grad_x C(G(z)) J_theta G(z).
    """
    if kind not in ORACLE_KINDS:
        raise ValueError(f"kind must be one of {ORACLE_KINDS}")
    if kind.endswith("_D"):
        x_real, x_fake = (np.asarray(b, dtype=np.float64) for b in batch)
        gr = _per_sample_critic_grads(critic, x_real)
        gf = _per_sample_critic_grads(critic, x_fake)
        if kind == "SGAN_D":
            wr = -(1.0 - stable_sigmoid(_critic_value(critic, x_real)))
            wf = stable_sigmoid(_critic_value(critic, x_fake))
        else:
            wr = -np.ones(len(gr))
            wf = np.ones(len(gf))
        return {name: (sum(w * g[name] for w, g in zip(wr, gr)) / len(gr)
                       + sum(w * g[name] for w, g in zip(wf, gf)) / len(gf))
                for name in gr[0]}

    if generator is None:
        raise ValueError("generator kinds need a generator network")
    z = np.asarray(batch, dtype=np.float64)
    x_fake = generator(z).data
    m = len(z)
    # grad_x C at each generated point
    tape = Tape()
    x_leaf = tape.leaf(x_fake)
    dx = backward(critic(x_leaf).sum(), [x_leaf])[x_leaf].data
    if kind == "SGAN_G":
        dx = dx * (1.0 - stable_sigmoid(_critic_value(critic, x_fake))).reshape(-1, 1)
    # vector-Jacobian product: (-1/m) sum_i dx_i^T J_theta G(z_i)
    tape = Tape()
    params = generator.bind(tape)
    out = (generator(z, params) * Tensor(-dx / m)).sum()
    g = backward(out, params.values())
    return {name: g[t].data for name, t in params.items()}
