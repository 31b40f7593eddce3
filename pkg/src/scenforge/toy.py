"""Desk-scale denoiser training on Gaussian data.

The raw network is ``F(x, c) = W2 tanh(W1 [x; c] + b1) + b2`` with input
``x = c_in * (y + n)`` and noise channel ``c = c_noise(sigma)``; it is wrapped
by the EDM preconditioning and trained by plain gradient descent on the
weighted denoising loss. Gradients are derived by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .edm import EdmPreconditioner, SigmaSchedule, lambda_sigma, lognormal_sigma, sample

__all__ = [
    "DenoiserParams",
    "GaussianData",
    "GaussianMixture",
    "TrainResult",
    "TrainingDiverged",
    "forward_backward",
    "make_denoiser",
    "optimal_gaussian_denoiser",
    "sample_model",
    "train",
]


def optimal_gaussian_denoiser(mu, s: float, y, sigma):
    """Posterior mean E[y0 | y] for y0 ~ N(mu, s^2 I) and y = y0 + N(0, sigma^2 I)."""
    y = np.asarray(y, dtype=float)
    sig = np.asarray(sigma, dtype=float)
    if sig.ndim:
        sig = sig.reshape(sig.shape + (1,) * (y.ndim - sig.ndim))
    if np.all(np.isinf(sig)):
        return np.broadcast_to(np.asarray(mu, dtype=float), y.shape).copy()
    s2, v = s * s, sig * sig
    return (s2 * y + v * np.asarray(mu, dtype=float)) / (s2 + v)


@dataclass(frozen=True)
class GaussianData:
    mu: tuple = (3.0, -1.0)
    s: float = 0.5

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("s must be > 0")

    @property
    def dim(self) -> int:
        return len(self.mu)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.mu) + self.s * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class GaussianMixture:
    """Two isotropic components sharing the spread ``s``."""

    means: tuple = ((2.0, 0.0), (-2.0, 0.0))
    s: float = 0.5
    weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("s must be > 0")
        if len(self.means) != 2 or len(self.weights) != 2:
            raise ValueError("need exactly two components")
        if min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if len(set(len(m) for m in self.means)) != 1:
            raise ValueError("component means differ in dimension")

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = rng.choice(2, size=n, p=self.weights)
        return np.asarray(self.means, dtype=float)[k] + self.s * rng.standard_normal((n, self.dim))


@dataclass(frozen=True, eq=False)
class DenoiserParams:
    dim: int
    hidden: int
    theta: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int = 2, hidden: int = 32) -> "DenoiserParams":
        w1 = rng.standard_normal((hidden, dim + 1)) / math.sqrt(dim + 1)
        w2 = rng.standard_normal((dim, hidden)) / math.sqrt(hidden)
        theta = np.concatenate([w1.ravel(), np.zeros(hidden), w2.ravel(), np.zeros(dim)])
        return cls(dim, hidden, theta)

    @property
    def size(self) -> int:
        return self.hidden * (self.dim + 1) + self.hidden + self.dim * self.hidden + self.dim

    def unpack(self, theta: np.ndarray | None = None):
        th = self.theta if theta is None else theta
        d, h = self.dim, self.hidden
        i = 0
        W1 = th[i:i + h * (d + 1)].reshape(h, d + 1)
        i += h * (d + 1)
        b1 = th[i:i + h]
        i += h
        W2 = th[i:i + d * h].reshape(d, h)
        i += d * h
        b2 = th[i:i + d]
        return W1, b1, W2, b2

    def with_theta(self, theta: np.ndarray) -> "DenoiserParams":
        return DenoiserParams(self.dim, self.hidden, np.asarray(theta, dtype=float))

    def to_json(self) -> dict:
        return {"dim": self.dim, "hidden": self.hidden, "theta": self.theta.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "DenoiserParams":
        p = cls(int(d["dim"]), int(d["hidden"]), np.asarray(d["theta"], dtype=float))
        if len(p.theta) != p.size or not np.all(np.isfinite(p.theta)):
            raise ValueError("parameter vector does not match the declared shapes")
        return p


def _raw(params: DenoiserParams, x: np.ndarray, c: np.ndarray):
    W1, b1, W2, b2 = params.unpack()
    inp = np.concatenate([x, np.broadcast_to(np.reshape(c, (-1, 1)), (len(x), 1))], axis=1)
    hid = np.tanh(inp @ W1.T + b1)
    return hid @ W2.T + b2, inp, hid


def make_denoiser(params: DenoiserParams, pre: EdmPreconditioner = EdmPreconditioner()):
    """D(y, sigma) callable for :func:`edm.sample` and :func:`edm.dsm_loss`."""
    def D(y, sigma):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), (len(y),))
        c = pre(sig)
        out, _, _ = _raw(params, c.c_in[:, None] * y, c.c_noise)
        return c.c_skip[:, None] * y + c.c_out[:, None] * out
    return D


def forward_backward(params: DenoiserParams, y: np.ndarray, n: np.ndarray, sigma,
                     pre: EdmPreconditioner = EdmPreconditioner()):
    """Denoiser output, mean weighted loss and its gradient w.r.t. theta.

    ``y`` clean samples (B, d), ``n`` the added noise (B, d), ``sigma`` (B,).
    Loss per sample: lambda(sigma) * ||D(y + n; sigma) - y||^2.
    """
    y = np.asarray(y, dtype=float)
    B = len(y)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (B,))
    c = pre(sig)
    x = y + n
    raw, inp, hid = _raw(params, c.c_in[:, None] * x, c.c_noise)
    out = c.c_skip[:, None] * x + c.c_out[:, None] * raw
    lam = lambda_sigma(sig)
    err = out - y
    per = lam * np.sum(err * err, axis=1)
    loss = float(per.mean())
    # backward
    g_out = (2.0 / B) * lam[:, None] * err
    g_raw = c.c_out[:, None] * g_out
    W1, b1, W2, b2 = params.unpack()
    gW2 = g_raw.T @ hid
    gb2 = g_raw.sum(axis=0)
    g_pre = (g_raw @ W2) * (1.0 - hid * hid)
    gW1 = g_pre.T @ inp
    gb1 = g_pre.sum(axis=0)
    grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
    return out, loss, grad


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass(eq=False)
class TrainResult:
    params: DenoiserParams
    train_loss: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)


def _eval_set(data: GaussianData, rng: np.random.Generator, n: int):
    y = data.draw(rng, n)
    sig = lognormal_sigma(rng, n)
    return y, rng.standard_normal(y.shape) * sig[:, None], sig


def train(data: GaussianData | GaussianMixture = GaussianData(), steps: int = 2000, lr: float = 0.02,
          seed: int = 0, batch: int = 1024, hidden: int = 32, eval_size: int = 4096) -> TrainResult:
    """Plain gradient descent on fresh minibatches.

    ``eval_loss[k]`` is the loss on a fixed seeded evaluation set after ``k``
    updates, so ``eval_loss[0]`` is the untrained model.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    params = DenoiserParams.init(rng, data.dim, hidden)
    ev = _eval_set(data, np.random.default_rng([seed, 1]), eval_size)
    res = TrainResult(params)
    res.eval_loss.append(forward_backward(params, *ev)[1])
    for step in range(steps):
        y, n, sig = _eval_set(data, rng, batch)
        # overflow is reported as TrainingDiverged rather than warned about
        with np.errstate(over="ignore", invalid="ignore"):
            _, loss, grad = forward_backward(params, y, n, sig)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(step)
            res.train_loss.append(loss)
            params = params.with_theta(params.theta - lr * grad)
            res.eval_loss.append(forward_backward(params, *ev)[1])
    res.params = params
    return res


def sample_model(params: DenoiserParams, n: int, seed: int = 0,
                 schedule: SigmaSchedule = SigmaSchedule()) -> np.ndarray:
    return sample(make_denoiser(params), schedule, (n, params.dim), np.random.default_rng(seed))
