"""Denoising-diffusion pretraining of a DiffusionPrior from offline parameter samples."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import DdpmEpsLink, DiffusionPrior, MlpNet, NoiseSchedule, prior_sample, step_feature

log = logging.getLogger(__name__)

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class TrainConfig:
    L: int = 40
    hidden: int = 64
    lr: float = 1e-3
    epochs: int = 20000
    batch: int = 2048
    beta_min: float = 1e-4
    beta_max: float = 0.2
    seed: int = 0
    posterior_variance: str = "tilde"

    def validate(self) -> None:
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0 < self.beta_min <= self.beta_max < 1:
            raise ValueError("need 0 < beta_min <= beta_max < 1")


def make_schedule(L: int, beta_min: float, beta_max: float, posterior_variance: str = "tilde") -> NoiseSchedule:
    """Linearly spaced variance increments over L steps."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"invalid beta bounds ({beta_min}, {beta_max})")
    if L == 1:
        betas = np.array([beta_min])
    else:
        betas = beta_min + np.arange(L) / (L - 1) * (beta_max - beta_min)
    return NoiseSchedule(betas, posterior_variance)


def forward_noise(x0: np.ndarray, level, schedule: NoiseSchedule, rng):
    """Jump straight to step ``level``: x = sqrt(abar) x0 + sqrt(1 - abar) eps."""
    level = np.asarray(level)
    if np.any(level < 1) or np.any(level > schedule.L):
        raise ValueError(f"level outside 1..{schedule.L}")
    x0 = np.asarray(x0, dtype=float)
    abar = schedule.alpha_bars[level - 1]
    if np.ndim(abar):
        abar = abar[:, None]
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps, eps


def adam_init(params: dict) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params: dict, grads: dict, moments: dict, lr: float, t: int) -> dict:
    """One bias-corrected Adam update; ``t`` counts from 1. Moments update in place."""
    out = {}
    c1 = 1.0 - ADAM_B1**t
    c2 = 1.0 - ADAM_B2**t
    for k, p in params.items():
        g = grads[k]
        m = moments["m"][k] = ADAM_B1 * moments["m"][k] + (1.0 - ADAM_B1) * g
        v = moments["v"][k] = ADAM_B2 * moments["v"][k] + (1.0 - ADAM_B2) * g * g
        out[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return out


def denoising_loss(net: MlpNet, x0: np.ndarray, levels: np.ndarray, schedule: NoiseSchedule, rng):
    """Mean squared noise-prediction error and its parameter gradients."""
    xt, eps = forward_noise(x0, levels, schedule, rng)
    inp = np.hstack([xt, step_feature(levels, schedule.L)[:, None]])
    pred, cache = net.forward_cached(inp)
    resid = pred - eps
    loss = float(np.mean(resid**2))
    grads = net.backward(cache, 2.0 * resid / resid.size)
    return loss, grads


def train(samples: np.ndarray, cfg: TrainConfig, progress=None) -> DiffusionPrior:
    """Fit a noise-predicting MLP and wrap it as a diffusion prior.

    The returned prior has one reverse-mean link per step, covariances
    ``Sigma_l = beta_tilde_l I`` and top covariance I. The per-epoch loss
    curve is stored in ``prior.meta["loss_curve"]``.
    """
    cfg.validate()
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("need a non-empty (N, d) sample matrix")
    N, d = X.shape
    rng = np.random.default_rng(cfg.seed)
    schedule = make_schedule(cfg.L, cfg.beta_min, cfg.beta_max, cfg.posterior_variance)
    net = MlpNet.uniform(d + 1, cfg.hidden, d, rng)
    params = net.params()
    moments = adam_init(params)
    batch = min(cfg.batch, N)
    losses = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, batch):
            idx = order[start:start + batch]
            levels = rng.integers(1, cfg.L + 1, size=idx.size)
            loss, grads = denoising_loss(net, X[idx], levels, schedule, rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            params = adam_step(params, grads, moments, cfg.lr, step)
            net = MlpNet(**params)
            total += loss * idx.size
        losses.append(total / N)
        if progress is not None:
            progress(epoch, losses[-1])
    links = [DdpmEpsLink(net, schedule, level) for level in range(1, cfg.L + 1)]
    variances = schedule.level_variances()
    prior = DiffusionPrior(links, [float(v) for v in variances], 1.0)
    prior.meta["loss_curve"] = np.array(losses)
    return prior


def write_loss_curve(losses, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{v:.17g}\n")


# --------------------------------------------------------------------------
# sample-quality diagnostics
# --------------------------------------------------------------------------

def _mean_pairwise_distance(A: np.ndarray, B: np.ndarray, chunk: int = 2048) -> float:
    total = 0.0
    for i in range(0, A.shape[0], chunk):
        a = A[i:i + chunk]
        sq = (a * a).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * a @ B.T
        total += np.sqrt(np.maximum(sq, 0.0)).sum()
    return total / (A.shape[0] * B.shape[0])


def energy_distance(X: np.ndarray, Y: np.ndarray) -> float:
    """Two-sample energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic)."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    return (2.0 * _mean_pairwise_distance(X, Y) - _mean_pairwise_distance(X, X)
            - _mean_pairwise_distance(Y, Y))


def generate(prior: DiffusionPrior, count: int, rng) -> np.ndarray:
    """Draw ``count`` parameter vectors from the prior (one action per draw)."""
    _, thetas = prior_sample(prior, 1, rng, size=count)
    return thetas[:, 0, :]
