"""Numeric self-checks for the diffusion kernel and the toy denoiser."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .edm import EdmPreconditioner, SigmaSchedule, denoise, eps_loss, lambda_sigma, sample
from .toy import DenoiserParams, forward_backward, optimal_gaussian_denoiser

__all__ = ["Check", "euler_gaussian_factor", "gradient_check", "run_edm_checks"]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    gating: bool = True
    note: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def euler_gaussian_factor(sigmas: np.ndarray, s: float) -> float:
    """Contraction of (y - mu) under Euler steps with the exact Gaussian denoiser."""
    f = 1.0
    for a, b in zip(sigmas[:-1], sigmas[1:]):
        f *= 1.0 + (b - a) * a / (s * s + a * a)
    return f


def gradient_check(configs: int = 20, h: float = 1e-5, seed: int = 0,
                   pre: EdmPreconditioner = EdmPreconditioner()) -> float:
    """Worst normwise relative error, max|g - g_fd| / max|g_fd|, over random configs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(configs):
        p = DenoiserParams.init(rng, 2, 32)
        p = p.with_theta(p.theta + 0.3 * rng.standard_normal(p.size))
        B = int(rng.integers(1, 9))
        y = rng.normal(0.0, 2.0, (B, 2))
        sig = np.exp(rng.normal(-1.2, 1.2, B))
        n = rng.standard_normal((B, 2)) * sig[:, None]
        _, _, g = forward_backward(p, y, n, sig, pre)
        fd = np.empty_like(g)
        for k in range(p.size):
            e = np.zeros(p.size)
            e[k] = h
            lp = forward_backward(p.with_theta(p.theta + e), y, n, sig, pre)[1]
            lm = forward_backward(p.with_theta(p.theta - e), y, n, sig, pre)[1]
            fd[k] = (lp - lm) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-300)))
    return worst


def run_edm_checks(noise_scale: float = 0.25, draws: int = 10_000, seed: int = 0) -> list[Check]:
    """Coefficient identities, gradient check and Gaussian PF-ODE moments.

    ``noise_scale`` other than 0.25 injects a wrong c_noise for testing the
    checks themselves.
    """
    pre = EdmPreconditioner(noise_scale)
    rng = np.random.default_rng(seed)
    out: list[Check] = []
    sig = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), 1000))
    c = pre(sig)
    e1 = float(np.max(np.abs(c.c_in ** 2 - c.c_skip)))
    e2 = float(np.max(np.abs(c.c_out ** 2 - sig ** 2 * c.c_skip)))
    e3 = float(np.max(np.abs(np.exp(4.0 * c.c_noise) / sig - 1.0)))
    out.append(Check("c_in^2 = c_skip", e1 <= 1e-12, e1, 1e-12))
    out.append(Check("c_out^2 = sigma^2 c_skip", e2 <= 1e-12, e2, 1e-12))
    out.append(Check("exp(4 c_noise) = sigma", e3 <= 1e-12, e3, 1e-12))
    c1 = pre(1.0)
    exact = (c1.c_skip == 0.5 and c1.c_noise == 0.0 and abs(c1.c_out + 1 / math.sqrt(2)) <= 1e-15
             and abs(c1.c_in - 1 / math.sqrt(2)) <= 1e-15)
    out.append(Check("coefficients at sigma=1", exact, 0.0 if exact else 1.0, 0.0))
    out.append(Check("lambda(1) = 2", lambda_sigma(1.0) == 2.0, lambda_sigma(1.0) - 2.0, 0.0))
    y = rng.standard_normal((4, 3))
    d0 = denoise(lambda x, cn: np.zeros_like(x), y, 1.0, pre)
    out.append(Check("F=0 gives D = y/2 at sigma=1", bool(np.array_equal(d0, y / 2)),
                     float(np.max(np.abs(d0 - y / 2))), 0.0))
    z0 = rng.standard_normal((10_000, 4))
    el = eps_loss(lambda z, t, cond: np.zeros_like(z), z0, rng)
    # per-sample ||eps||^2 has variance 2*dim
    bound = 3.0 * math.sqrt(2 * 4) / math.sqrt(len(z0))
    out.append(Check("eps loss of zero predictor = dim", abs(el - 4) <= bound, abs(el - 4), bound))

    g = gradient_check(pre=pre, seed=seed)
    out.append(Check("toy gradient vs central differences", g <= 1e-4, g, 1e-4))

    mu, s = np.array([3.0, -1.0]), 0.5
    sched = SigmaSchedule()
    x = sample(lambda yy, sg: optimal_gaussian_denoiser(mu, s, yy, sg), sched, (draws, 2),
               np.random.default_rng(seed + 1))
    m_err = float(np.max(np.abs(x.mean(axis=0) - mu) / np.abs(mu)))
    out.append(Check("PF-ODE sample mean vs data mean", m_err <= 0.05, m_err, 0.05))
    cov = np.cov(x.T)
    f = euler_gaussian_factor(sched.sigmas(), s)
    pred = (f * sched.sigma_max) ** 2 * np.eye(2)
    p_err = float(np.max(np.abs(cov - pred)) / pred[0, 0])
    out.append(Check("PF-ODE sample cov vs exact Euler map", p_err <= 0.05, p_err, 0.05))
    d_err = float(np.max(np.abs(cov - s * s * np.eye(2))) / (s * s))
    out.append(Check("PF-ODE sample cov vs data cov", d_err <= 0.05, d_err, 0.05, gating=False,
                     note=f"40 Euler steps shrink the std by {1 - f * math.hypot(s, sched.sigma_max) / s:.3f}"))
    return out
