"""Diffusion numerics: preconditioning, score-matching losses, PF-ODE sampling.

The denoiser wraps a raw network ``F`` as

    D(y; sigma) = c_skip(sigma) * y + c_out(sigma) * F(c_in(sigma) * y; c_noise(sigma))

with ``c_skip = 1/(sigma^2+1)``, ``c_out = -sigma/sqrt(sigma^2+1)``,
``c_in = 1/sqrt(sigma^2+1)`` and ``c_noise = 0.25 ln sigma``. Note the negative
``c_out``: it is kept as given, and only flips the sign ``F`` has to learn.

Arrays are batch-first, ``(B, ...)``; ``sigma`` is a scalar or a length-B
vector broadcast over the trailing axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "EdmPreconditioner",
    "NonFiniteSample",
    "PreconditionCoeffs",
    "SigmaSchedule",
    "VpSchedule",
    "coeffs",
    "denoise",
    "dsm_loss",
    "eps_loss",
    "lambda_sigma",
    "lognormal_sigma",
    "sample",
]


@dataclass(frozen=True)
class PreconditionCoeffs:
    c_skip: np.ndarray | float
    c_out: np.ndarray | float
    c_in: np.ndarray | float
    c_noise: np.ndarray | float


@dataclass(frozen=True)
class EdmPreconditioner:
    """Coefficient formulas; ``noise_scale`` exists for fault-injection checks."""

    noise_scale: float = 0.25

    def __call__(self, sigma) -> PreconditionCoeffs:
        s = np.asarray(sigma, dtype=float)
        if np.any(~(s > 0)):
            raise ValueError("sigma must be > 0")
        s2 = s * s
        c = PreconditionCoeffs(1.0 / (s2 + 1.0), -s / np.sqrt(s2 + 1.0),
                               1.0 / np.sqrt(s2 + 1.0), self.noise_scale * np.log(s))
        if s.ndim == 0:
            return PreconditionCoeffs(*(float(v) for v in (c.c_skip, c.c_out, c.c_in, c.c_noise)))
        return c


_DEFAULT = EdmPreconditioner()


def coeffs(sigma) -> PreconditionCoeffs:
    return _DEFAULT(sigma)


def lambda_sigma(sigma):
    """Loss weight (1 + sigma^2) / sigma^2."""
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise ValueError("sigma must be > 0")
    out = (1.0 + s * s) / (s * s)
    return float(out) if out.ndim == 0 else out


def _expand(v, like: np.ndarray):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def denoise(F: Callable, y: np.ndarray, sigma, pre: EdmPreconditioner = _DEFAULT) -> np.ndarray:
    """D(y; sigma) for raw network ``F(x_in, c_noise)``."""
    y = np.asarray(y, dtype=float)
    c = pre(sigma)
    out = np.asarray(F(_expand(c.c_in, y) * y, c.c_noise), dtype=float)
    if out.shape != y.shape:
        raise ValueError(f"network output shape {out.shape} != input shape {y.shape}")
    return _expand(c.c_skip, y) * y + _expand(c.c_out, y) * out


def lognormal_sigma(rng: np.random.Generator, n: int, p_mean: float = -1.2,
                    p_std: float = 1.2) -> np.ndarray:
    """Training noise levels, ln sigma ~ N(p_mean, p_std^2)."""
    return np.exp(p_mean + p_std * rng.standard_normal(n))


def dsm_loss(D: Callable, y: np.ndarray, rng: np.random.Generator, cond=None,
             sigma_sampler: Callable = lognormal_sigma):
    """Weighted denoising score matching, one noise draw per sample.

    ``D(y_noisy, sigma)`` (or ``D(y_noisy, sigma, cond)`` when ``cond`` is
    given). Returns ``(mean, per_sample)``.
    """
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty batch")
    sigma = np.asarray(sigma_sampler(rng, len(y)), dtype=float)
    n = rng.standard_normal(y.shape) * _expand(sigma, y)
    den = D(y + n, sigma) if cond is None else D(y + n, sigma, cond)
    err = (np.asarray(den) - y).reshape(len(y), -1)
    per = lambda_sigma(sigma) * np.sum(err * err, axis=1)
    return float(per.mean()), per


@dataclass(frozen=True)
class VpSchedule:
    """Variance-preserving forward process with a linear beta ramp, t in 1..T_b."""

    T_b: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.T_b < 1:
            raise ValueError("T_b must be >= 1")

    @property
    def alpha_bar(self) -> np.ndarray:
        betas = np.linspace(self.beta_start, self.beta_end, self.T_b)
        return np.cumprod(1.0 - betas)

    def noised(self, z0: np.ndarray, t: np.ndarray, eps: np.ndarray) -> np.ndarray:
        ab = self.alpha_bar[np.asarray(t) - 1]
        return _expand(np.sqrt(ab), z0) * z0 + _expand(np.sqrt(1.0 - ab), z0) * eps


def eps_loss(eps_model: Callable, z0: np.ndarray, rng: np.random.Generator, cond=None,
             schedule: VpSchedule = VpSchedule(), return_terms: bool = False):
    """Noise-prediction objective E ||eps - eps_model(z_t, t, cond)||^2.

    t is uniform on {1, ..., T_b}; the squared norm is summed over the sample
    dimensions and averaged over the batch.
    """
    z0 = np.asarray(z0, dtype=float)
    t = rng.integers(1, schedule.T_b + 1, size=len(z0))
    eps = rng.standard_normal(z0.shape)
    zt = schedule.noised(z0, t, eps)
    pred = np.asarray(eps_model(zt, t, cond), dtype=float)
    per = np.sum((eps - pred).reshape(len(z0), -1) ** 2, axis=1)
    loss = float(per.mean())
    if return_terms:
        return loss, {"t": t, "eps": eps, "z_t": zt, "per_sample": per}
    return loss


@dataclass(frozen=True)
class SigmaSchedule:
    """Karras spacing from sigma_max down to sigma_min over ``steps`` levels, then 0."""

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    steps: int = 40
    rho: float = 7.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max or self.steps < 1 or self.rho <= 0:
            raise ValueError("need 0 < sigma_min < sigma_max, steps >= 1, rho > 0")

    def sigmas(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.sigma_max, 0.0])
        i = np.arange(self.steps)
        a, b = self.sigma_max ** (1 / self.rho), self.sigma_min ** (1 / self.rho)
        s = (a + i / (self.steps - 1) * (b - a)) ** self.rho
        return np.append(s, 0.0)


class NonFiniteSample(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite sample at step {step}")
        self.step = step


def sample(D: Callable, schedule: SigmaSchedule | np.ndarray, shape, rng: np.random.Generator) -> np.ndarray:
    """Euler integration of the probability-flow ODE from sigma_0 to 0."""
    sig = schedule.sigmas() if isinstance(schedule, SigmaSchedule) else np.asarray(schedule, float)
    if len(sig) < 2 or np.any(np.diff(sig) >= 0) or sig[-1] != 0:
        raise ValueError("schedule must decrease strictly to 0")
    y = rng.standard_normal(shape) * sig[0]
    for i in range(len(sig) - 1):
        d = (y - np.asarray(D(y, sig[i]))) / sig[i]
        y = y + (sig[i + 1] - sig[i]) * d
        if not np.all(np.isfinite(y)):
            raise NonFiniteSample(i)
    return y

