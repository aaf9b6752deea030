"""Generative model: link functions, covariances, reward models and bandit instances.

A diffusion prior is a chain of Gaussian conditionals

    psi_L ~ N(0, Sigma_{L+1})
    psi_{l-1} | psi_l ~ N(f_l(psi_l), Sigma_l)
    theta_a | psi_1 ~ N(f_1(psi_1), Sigma_1)

Levels are 1-indexed in the public API (``prior.link(l)``, ``prior.cov(l)``)
to keep the code close to the usual notation; ``prior.cov(L + 1)`` is the
top covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

JITTER = 1e-10


class DimensionError(ValueError):
    pass


# --------------------------------------------------------------------------
# covariance helpers
# --------------------------------------------------------------------------

def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def safe_cholesky(a: np.ndarray) -> np.ndarray:
    """Cholesky factor of a symmetrized matrix (or stack), one jitter retry."""
    a = symmetrize(np.asarray(a, dtype=float))
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        eye = np.eye(a.shape[-1])
        return np.linalg.cholesky(a + JITTER * eye)


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix (or stack) via Cholesky."""
    chol = safe_cholesky(a)
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    inv_chol = np.linalg.solve(chol, eye)
    return symmetrize(np.swapaxes(inv_chol, -1, -2) @ inv_chol)


def as_covariance(value, d: int) -> np.ndarray:
    """Scalar variance or full matrix -> validated d x d covariance."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if not arr > 0:
            raise ValueError(f"variance must be positive, got {float(arr)}")
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise DimensionError(f"covariance has shape {arr.shape}, expected {(d, d)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("covariance has non-finite entries")
    arr = symmetrize(arr)
    safe_cholesky(arr)
    return arr


def isotropic_variance(cov: np.ndarray) -> float | None:
    """Return s if cov == s * I exactly, else None."""
    s = cov[0, 0]
    if np.array_equal(cov, s * np.eye(cov.shape[0])):
        return float(s)
    return None


# --------------------------------------------------------------------------
# MLP used by non-linear links and the denoiser
# --------------------------------------------------------------------------

@dataclass
class MlpNet:
    """Two-layer ReLU network ``W2 relu(W1 x + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def uniform(cls, in_dim: int, hidden: int, out_dim: int, rng, scale: float | None = None):
        """Random weights. ``scale=None`` uses +-1/sqrt(fan_in), else +-scale."""
        s1 = 1.0 / np.sqrt(in_dim) if scale is None else scale
        s2 = 1.0 / np.sqrt(hidden) if scale is None else scale
        return cls(
            W1=rng.uniform(-s1, s1, size=(hidden, in_dim)),
            b1=rng.uniform(-s1, s1, size=hidden),
            W2=rng.uniform(-s2, s2, size=(out_dim, hidden)),
            b2=rng.uniform(-s2, s2, size=out_dim),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "MlpNet":
        return MlpNet(**{k: v.copy() for k, v in self.params().items()})

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.W1.T + self.b1, 0.0)
        return h @ self.W2.T + self.b2

    def forward_cached(self, x: np.ndarray):
        pre = x @ self.W1.T + self.b1
        h = np.maximum(pre, 0.0)
        return h @ self.W2.T + self.b2, (x, pre, h)

    def backward(self, cache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(grad_out * output) w.r.t. the parameters."""
        x, pre, h = cache
        g_h = grad_out @ self.W2
        g_pre = g_h * (pre > 0)
        return {
            "W1": g_pre.T @ x,
            "b1": g_pre.sum(axis=0),
            "W2": grad_out.T @ h,
            "b2": grad_out.sum(axis=0),
        }


# --------------------------------------------------------------------------
# noise schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    posterior_variance: str = "tilde"  # "tilde" or "beta"

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("betas must be a non-empty 1-d array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.posterior_variance not in ("tilde", "beta"):
            raise ValueError(f"unknown posterior_variance {self.posterior_variance!r}")
        object.__setattr__(self, "betas", b)

    @property
    def L(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def beta_tildes(self) -> np.ndarray:
        ab = self.alpha_bars
        prev = np.concatenate([[1.0], ab[:-1]])
        tilde = self.betas * (1.0 - prev) / (1.0 - ab)
        tilde[0] = self.betas[0]
        return tilde

    def level_variances(self) -> np.ndarray:
        """Variance of psi_{l-1} | psi_l for l = 1..L."""
        return self.beta_tildes if self.posterior_variance == "tilde" else self.betas.copy()


# --------------------------------------------------------------------------
# link functions
# --------------------------------------------------------------------------

def _check_dim(psi: np.ndarray, d: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != d:
        raise DimensionError(f"input has dimension {psi.shape[-1]}, expected {d}")
    return psi


@dataclass
class LinearLink:
    W: np.ndarray
    kind = "linear"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise DimensionError(f"mixing matrix must be square, got {self.W.shape}")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def active_dims(self) -> int:
        """Number of leading columns before the trailing all-zero block."""
        nz = np.flatnonzero(np.any(self.W != 0, axis=0))
        return int(nz[-1] + 1) if nz.size else 0

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        return _check_dim(psi, self.d) @ self.W.T


@dataclass
class MlpLink:
    """Non-linear link given directly by an MLP: f(psi) = net(psi)."""

    net: MlpNet
    kind = "mlp"

    @property
    def d(self) -> int:
        return self.net.out_dim

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        return self.net.forward(_check_dim(psi, self.d))


@dataclass
class DdpmEpsLink:
    """Reverse-process mean of a noise-predicting denoiser at one step."""

    net: MlpNet
    schedule: NoiseSchedule
    level: int
    kind = "ddpm_eps"

    @property
    def d(self) -> int:
        return self.net.out_dim

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        psi = _check_dim(psi, self.d)
        eps = denoiser_eval(self.net, psi, self.level, self.schedule.L)
        i = self.level - 1
        beta = self.schedule.betas[i]
        alpha = 1.0 - beta
        abar = self.schedule.alpha_bars[i]
        return (psi - (beta / np.sqrt(1.0 - abar)) * eps) / np.sqrt(alpha)


def step_feature(level, L: int):
    return np.asarray(level, dtype=float) / L


def denoiser_eval(net: MlpNet, x: np.ndarray, level, L: int) -> np.ndarray:
    """Noise prediction eps(x, level); ``level`` scalar or per-row array."""
    x2 = np.atleast_2d(x)
    feat = np.broadcast_to(step_feature(level, L), (x2.shape[0],)).reshape(-1, 1)
    out = net.forward(np.hstack([x2, feat]))
    return out.reshape(np.shape(x))


def link_apply(link, psi: np.ndarray) -> np.ndarray:
    return link(psi)


# --------------------------------------------------------------------------
# the prior
# --------------------------------------------------------------------------

@dataclass
class DiffusionPrior:
    links: list
    covs: list
    top_cov: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.links) != len(self.covs):
            raise ValueError("links and covs must have the same length")
        if not self.links:
            raise ValueError("a diffusion prior needs at least one level")
        d = self.links[0].d
        for link in self.links:
            if link.d != d:
                raise DimensionError("all links must share dimension d")
        self.covs = [as_covariance(c, d) for c in self.covs]
        self.top_cov = as_covariance(self.top_cov, d)

    @property
    def L(self) -> int:
        return len(self.links)

    @property
    def d(self) -> int:
        return self.links[0].d

    def link(self, level: int):
        return self.links[level - 1]

    def prec(self, level: int) -> np.ndarray:
        """Inverse of ``cov(level)``, cached."""
        cache = self.meta.setdefault("_prec", {})
        if level not in cache:
            cache[level] = spd_inverse(self.cov(level))
        return cache[level]

    def cov(self, level: int) -> np.ndarray:
        """Sigma_level for level in 1..L+1."""
        if level == self.L + 1:
            return self.top_cov
        if not 1 <= level <= self.L:
            raise IndexError(f"level {level} outside 1..{self.L + 1}")
        return self.covs[level - 1]

    @property
    def is_linear(self) -> bool:
        return all(isinstance(l, LinearLink) for l in self.links)

    def mixing(self, level: int) -> np.ndarray:
        link = self.link(level)
        if not isinstance(link, LinearLink):
            raise TypeError(f"level {level} link is {link.kind}, not linear")
        return link.W

    def products(self) -> list[np.ndarray]:
        """B_l = W_1 ... W_l for l = 1..L (linear priors only)."""
        out, acc = [], np.eye(self.d)
        for level in range(1, self.L + 1):
            acc = acc @ self.mixing(level)
            out.append(acc)
        return out

    def marginal_cov(self) -> np.ndarray:
        """Covariance of theta_a with all latents integrated out (linear priors)."""
        total = self.cov(1).copy()
        for level, B in enumerate(self.products(), start=1):
            total += B @ self.cov(level + 1) @ B.T
        return symmetrize(total)

    def sample(self, K: int, rng, size: int | None = None):
        return prior_sample(self, K, rng, size=size)

    def save(self, path) -> None:
        save_prior(self, path)


def linear_prior(Ws: Sequence[np.ndarray], covs: Sequence, top_cov) -> DiffusionPrior:
    return DiffusionPrior([LinearLink(W) for W in Ws], list(covs), top_cov)


def prior_sample(prior: DiffusionPrior, K: int, rng, size: int | None = None):
    """Draw latents (psi_L, ..., psi_1) and K action parameters.

    Returns ``(latents, thetas)``; ``latents[0]`` is psi_L and ``latents[-1]``
    is psi_1, ``thetas`` has shape (K, d). With ``size`` every array gains a
    leading axis of that length (independent draws).
    """
    m = 1 if size is None else size
    d = prior.d
    chol_top = safe_cholesky(prior.top_cov)
    psi = rng.standard_normal((m, d)) @ chol_top.T
    latents = [psi]
    for level in range(prior.L, 1, -1):
        mean = prior.link(level)(psi)
        psi = mean + rng.standard_normal((m, d)) @ safe_cholesky(prior.cov(level)).T
        latents.append(psi)
    mean = prior.link(1)(psi)
    noise = rng.standard_normal((m, K, d)) @ safe_cholesky(prior.cov(1)).T
    thetas = mean[:, None, :] + noise
    if size is None:
        return [p[0] for p in latents], thetas[0]
    return latents, thetas


# --------------------------------------------------------------------------
# rewards
# --------------------------------------------------------------------------

def sigmoid(u):
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0, 1.0 / (1.0 + np.exp(-np.abs(u))), np.exp(-np.abs(u)) / (1.0 + np.exp(-np.abs(u))))


@dataclass(frozen=True)
class LinearGaussian:
    sigma: float = 1.0
    name = "linear"

    def __post_init__(self):
        # sigma = 0 is a noiseless environment; likelihood fits need sigma > 0
        if not self.sigma >= 0:
            raise ValueError("reward noise sigma must be non-negative")

    def mean(self, u):
        return np.asarray(u, dtype=float)

    def dmean(self, u):
        return np.ones_like(np.asarray(u, dtype=float))

    def sample(self, u, rng):
        if self.sigma == 0:
            return float(u)
        return float(u) + self.sigma * rng.standard_normal()


@dataclass(frozen=True)
class LogisticBernoulli:
    name = "logistic"

    def mean(self, u):
        return sigmoid(u)

    def dmean(self, u):
        p = sigmoid(u)
        return p * (1.0 - p)

    def sample(self, u, rng):
        return float(rng.random() < float(sigmoid(u)))


def make_reward(name: str, sigma: float = 1.0):
    if name == "linear":
        return LinearGaussian(sigma)
    if name == "logistic":
        return LogisticBernoulli()
    raise ValueError(f"unknown reward model {name!r}")


def expected_reward(model, x: np.ndarray, theta: np.ndarray) -> float:
    return float(model.mean(np.dot(x, theta)))


def reward_sample(model, x: np.ndarray, theta: np.ndarray, rng) -> float:
    return model.sample(np.dot(x, theta), rng)


# --------------------------------------------------------------------------
# bandit instances
# --------------------------------------------------------------------------

@dataclass
class UniformContexts:
    """Contexts uniform on [-1, 1]^d, optionally rescaled to unit norm."""

    d: int
    unit_norm: bool = False

    def __call__(self, rng) -> np.ndarray:
        x = rng.uniform(-1.0, 1.0, size=self.d)
        if self.unit_norm:
            x /= max(np.linalg.norm(x), 1e-12)
        return x


@dataclass
class RowContexts:
    """Contexts drawn uniformly from the rows of a fixed matrix (e.g. user factors)."""

    rows: np.ndarray
    last_index: int = -1

    def __call__(self, rng) -> np.ndarray:
        self.last_index = int(rng.integers(self.rows.shape[0]))
        return self.rows[self.last_index]


@dataclass
class BanditInstance:
    thetas: np.ndarray
    reward: object
    contexts: Callable
    latents: list | None = None
    feature_map: Callable | None = None
    n_actions: int | None = None

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        if self.shared and self.n_actions is None:
            raise ValueError("shared-parameter instances need n_actions")

    @property
    def shared(self) -> bool:
        return self.feature_map is not None

    @property
    def K(self) -> int:
        if self.shared:
            return self.n_actions
        return self.thetas.shape[0]

    @property
    def d(self) -> int:
        return self.thetas.shape[-1]

    def scores(self, x: np.ndarray) -> np.ndarray:
        if self.shared:
            return self.feature_map(x) @ self.thetas
        return self.thetas @ x

    def mean_rewards(self, x: np.ndarray) -> np.ndarray:
        return self.reward.mean(self.scores(x))

    def pull(self, x: np.ndarray, a: int, rng) -> float:
        return self.reward.sample(self.scores(x)[a], rng)


def shared_instance(theta, reward, contexts, feature_map, K: int, latents=None) -> BanditInstance:
    """Single shared parameter; ``feature_map(x)`` returns the (K, d) feature rows."""
    return BanditInstance(np.asarray(theta, dtype=float), reward, contexts, latents, feature_map, K)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

FORMAT_VERSION = 1


def _fmt(values) -> str:
    return " ".join("%.17g" % v for v in np.ravel(values))


def _write_net(lines: list, prefix: str, net: MlpNet) -> None:
    lines.append(f"{prefix}.shape = {net.in_dim} {net.hidden} {net.out_dim}")
    for name, arr in net.params().items():
        lines.append(f"{prefix}.{name} = {_fmt(arr)}")


def _write_cov(lines: list, key: str, cov: np.ndarray) -> None:
    s = isotropic_variance(cov)
    if s is not None:
        lines.append(f"{key}sigma2 = {_fmt([s])}")
    else:
        lines.append(f"{key}cov = {_fmt(cov)}")


def dumps_prior(prior: DiffusionPrior) -> str:
    lines = [f"version = {FORMAT_VERSION}", f"d = {prior.d}", f"L = {prior.L}"]
    shared_net = None
    for level in range(1, prior.L + 1):
        link = prior.link(level)
        lines.append(f"[layer {level}]")
        lines.append(f"kind = {link.kind}")
        if isinstance(link, LinearLink):
            lines.append(f"weights = {_fmt(link.W)}")
        elif isinstance(link, MlpLink):
            _write_net(lines, "net", link.net)
        elif isinstance(link, DdpmEpsLink):
            shared_net = link
        else:
            raise TypeError(f"cannot serialize link {link!r}")
        _write_cov(lines, "", prior.cov(level))
    lines.append("[top]")
    _write_cov(lines, "top_", prior.top_cov)
    if shared_net is not None:
        lines.append("[denoiser]")
        lines.append(f"betas = {_fmt(shared_net.schedule.betas)}")
        lines.append(f"posterior_variance = {shared_net.schedule.posterior_variance}")
        _write_net(lines, "net", shared_net.net)
    return "\n".join(lines) + "\n"


def save_prior(prior: DiffusionPrior, path) -> None:
    Path(path).write_text(dumps_prior(prior))


def _read_net(sec: dict) -> MlpNet:
    i, h, o = (int(v) for v in sec["net.shape"].split())
    arr = lambda k: np.array(sec[k].split(), dtype=float)
    return MlpNet(arr("net.W1").reshape(h, i), arr("net.b1"), arr("net.W2").reshape(o, h), arr("net.b2"))


def _read_cov(sec: dict, key: str, d: int):
    if key + "sigma2" in sec:
        return float(sec[key + "sigma2"])
    return np.array(sec[key + "cov"].split(), dtype=float).reshape(d, d)


def loads_prior(text: str) -> DiffusionPrior:
    sections: dict[str, dict] = {"": {}}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections[current] = {}
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = value.strip()
    head = sections[""]
    version = int(head.get("version", -1))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported prior format version {version}")
    d, L = int(head["d"]), int(head["L"])
    schedule = net = None
    if "denoiser" in sections:
        den = sections["denoiser"]
        schedule = NoiseSchedule(np.array(den["betas"].split(), dtype=float),
                                 den.get("posterior_variance", "tilde"))
        net = _read_net(den)
    links, covs = [], []
    for level in range(1, L + 1):
        sec = sections[f"layer {level}"]
        kind = sec["kind"]
        if kind == "linear":
            links.append(LinearLink(np.array(sec["weights"].split(), dtype=float).reshape(d, d)))
        elif kind == "mlp":
            links.append(MlpLink(_read_net(sec)))
        elif kind == "ddpm_eps":
            links.append(DdpmEpsLink(net, schedule, level))
        else:
            raise ValueError(f"layer {level}: unknown link kind {kind!r}")
        covs.append(_read_cov(sec, "", d))
    top = _read_cov(sections["top"], "top_", d)
    return DiffusionPrior(links, covs, top)


def load_prior(path) -> DiffusionPrior:
    return loads_prior(Path(path).read_text())
