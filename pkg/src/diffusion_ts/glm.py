"""Per-action GLM likelihood summaries (MLE and negative log-likelihood Hessian)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LinearGaussian, LogisticBernoulli, symmetrize

DEFAULT_LOGISTIC_RIDGE = 1e-6


@dataclass
class ActionStats:
    """Gaussian summary N(theta; B_hat, G_hat^-1) of one action's likelihood.

    ``info`` is the information vector used by the posterior (G_hat @ B_hat).
    For linear-Gaussian rewards it is the exact sufficient statistic
    X^T y / sigma^2, which stays correct when G_hat is singular.
    """

    B_hat: np.ndarray
    G_hat: np.ndarray
    info: np.ndarray
    count: int = 0
    converged: bool = True
    ridge: float = 0.0

    @classmethod
    def empty(cls, d: int) -> "ActionStats":
        return cls(np.zeros(d), np.zeros((d, d)), np.zeros(d))


@dataclass
class ObservationLog:
    """Observations of one action (or of the shared parameter via feature vectors)."""

    d: int
    xs: list = field(default_factory=list)
    ys: list = field(default_factory=list)

    def append(self, x, y) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"observation has shape {x.shape}, expected ({self.d},)")
        if not (np.all(np.isfinite(x)) and np.isfinite(y)):
            raise ValueError("observation contains NaN or inf")
        self.xs.append(x)
        self.ys.append(float(y))

    def __len__(self) -> int:
        return len(self.ys)

    def arrays(self):
        if not self.ys:
            return np.zeros((0, self.d)), np.zeros(0)
        return np.array(self.xs), np.array(self.ys)


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float


def newton_solve(oracle, init, tol: float = 1e-8, max_iter: int = 100,
                 max_halvings: int = 30) -> NewtonResult:
    """Minimize a smooth convex loss with damped Newton steps.

    ``oracle(x)`` returns ``(loss, grad, hess)``. Steps are halved until the
    loss decreases. A singular Hessian gets a 1e-8 ridge.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.array(init, dtype=float)
    loss, grad, hess = oracle(x)
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return NewtonResult(x, True, it, gnorm)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(hess + 1e-8 * np.eye(x.size), grad)
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = x - t * step
            c_loss, c_grad, c_hess = oracle(cand)
            if c_loss <= loss:
                break
            t *= 0.5
        else:
            # no decrease possible at machine precision
            return NewtonResult(x, gnorm <= tol, it, gnorm)
        x, loss, grad, hess = cand, c_loss, c_grad, c_hess
    gnorm = float(np.linalg.norm(grad))
    return NewtonResult(x, gnorm <= tol, max_iter, gnorm)


def logistic_oracle(X: np.ndarray, y: np.ndarray, ridge: float):
    """Penalized negative log-likelihood of a logistic model."""

    def oracle(theta):
        u = X @ theta
        p = 0.5 * (1.0 + np.tanh(0.5 * u))
        loss = np.sum(np.logaddexp(0.0, u) - y * u) + 0.5 * ridge * theta @ theta
        grad = X.T @ (p - y) + ridge * theta
        hess = (X * (p * (1.0 - p))[:, None]).T @ X + ridge * np.eye(theta.size)
        return loss, grad, hess

    return oracle


def _fit_linear(X, y, sigma, ridge):
    if not sigma > 0:
        raise ValueError("linear-Gaussian likelihood needs sigma > 0")
    d = X.shape[1]
    G = symmetrize(X.T @ X) / sigma**2
    info = X.T @ y / sigma**2
    if ridge > 0:
        B = np.linalg.solve(G + ridge * np.eye(d), info)
    else:
        B = np.linalg.lstsq(G, info, rcond=None)[0]
    return ActionStats(B, G, info, count=len(y), ridge=ridge)


def fit(log: ObservationLog, model, ridge: float | None = None, tol: float = 1e-8,
        max_iter: int = 100, init=None) -> ActionStats:
    """MLE ``B_hat`` and Hessian ``G_hat`` of the negative log-likelihood.

    Linear-Gaussian: ``ridge`` (default 0, pseudo-inverse) only affects
    ``B_hat``. Logistic: ``B_hat`` maximizes the likelihood minus
    ``ridge/2 |theta|^2`` (default 1e-6) and ``G_hat`` excludes the ridge.
    """
    d = log.d
    if len(log) == 0:
        return ActionStats.empty(d)
    X, y = log.arrays()
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("observation log contains NaN or inf")
    if isinstance(model, LinearGaussian):
        ridge = 0.0 if ridge is None else ridge
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        return _fit_linear(X, y, model.sigma, ridge)
    if isinstance(model, LogisticBernoulli):
        ridge = DEFAULT_LOGISTIC_RIDGE if ridge is None else ridge
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("logistic rewards must be 0 or 1")
        start = np.zeros(d) if init is None else init
        res = newton_solve(logistic_oracle(X, y, ridge), start, tol=tol, max_iter=max_iter)
        B = res.x
        w = model.dmean(X @ B)
        G = symmetrize((X * w[:, None]).T @ X)
        return ActionStats(B, G, G @ B, count=len(y), converged=res.converged, ridge=ridge)
    raise TypeError(f"unsupported reward model {model!r}")


class IncrementalStats:
    """Per-action summaries kept current as observations arrive.

    Linear-Gaussian summaries are exact rank-1 accumulations; logistic
    summaries refit only the action that received the new observation,
    warm-started from its previous MLE.
    """

    def __init__(self, K: int, d: int, model, ridge: float | None = None):
        self.K, self.d, self.model, self.ridge = K, d, model, ridge
        self.logs = [ObservationLog(d) for _ in range(K)]
        self.stats = [ActionStats.empty(d) for _ in range(K)]
        self.linear = isinstance(model, LinearGaussian)
        if self.linear and not model.sigma > 0:
            raise ValueError("linear-Gaussian likelihood needs sigma > 0")

    def add(self, a: int, x, y) -> ActionStats:
        log = self.logs[a]
        log.append(x, y)
        if self.linear:
            old = self.stats[a]
            x = log.xs[-1]
            s2 = self.model.sigma**2
            G = old.G_hat + np.outer(x, x) / s2
            info = old.info + x * (float(y) / s2)
            ridge = self.ridge or 0.0
            if ridge > 0:
                B = np.linalg.solve(G + ridge * np.eye(self.d), info)
            else:
                B = np.linalg.lstsq(G, info, rcond=None)[0]
            new = ActionStats(B, G, info, count=old.count + 1, ridge=ridge)
        else:
            new = fit(log, self.model, self.ridge, init=self.stats[a].B_hat)
        self.stats[a] = new
        return new
