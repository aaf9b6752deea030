"""Bandit policies: diffusion Thompson sampling and the baselines it is compared to."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .glm import IncrementalStats
from .model import (DiffusionPrior, LinearGaussian, linear_prior, safe_cholesky,
                    spd_inverse, symmetrize)
from .posterior import (ActionTerms, PosteriorChain, _resolve_mode, action_terms, hierarchical_sample,
                        propagate, update_action_terms)

HIERTS_EPS = 1e-8


@dataclass
class Decision:
    action: int
    params: np.ndarray | None
    scores: np.ndarray


def argmax_lowest(scores: np.ndarray) -> int:
    """Index of the first maximizer."""
    return int(np.argmax(scores))


class Agent:
    name = "agent"

    def act(self, x: np.ndarray) -> Decision:
        raise NotImplementedError

    def update(self, x: np.ndarray, a: int, y: float) -> None:
        pass


class DiffusionTS(Agent):
    """Thompson sampling with a diffusion prior (hierarchical posterior sampling).

    ``reward`` is the likelihood the agent assumes; it may differ from the
    environment's (e.g. a linear-Gaussian likelihood on binary rewards).
    """

    name = "dts"

    def __init__(self, prior: DiffusionPrior, K: int, reward, rng, mode: str | None = None,
                 ridge: float | None = None):
        self.prior, self.K, self.reward, self.rng = prior, K, reward, rng
        self.mode = _resolve_mode(prior, mode)
        self.stats = IncrementalStats(K, prior.d, reward, ridge)
        self.prec1 = prior.prec(1)
        self.terms: ActionTerms = action_terms(self.prec1, self.stats.stats)
        self.chain: PosteriorChain = propagate(prior, self.mode, self.terms, self.prec1)

    def sample(self):
        return hierarchical_sample(self.chain, self.rng)

    def act(self, x):
        _, thetas = self.sample()
        scores = self.reward.mean(thetas @ x)
        return Decision(argmax_lowest(scores), thetas, scores)

    def update(self, x, a, y):
        st = self.stats.add(a, x, y)
        update_action_terms(self.terms, a, self.prec1, st)
        self.chain = propagate(self.prior, self.mode, self.terms, self.prec1)


class PerActionDiffusionTS(Agent):
    """Diffusion TS where every action runs its own latent chain.

    Each theta_a is an independent draw from the diffusion prior, which is
    how a pretrained denoiser generates a set of parameters. Posterior
    pieces of all actions are stacked so one round samples every chain in a
    single batched reverse pass.
    """

    name = "dts"

    def __init__(self, prior: DiffusionPrior, K: int, reward, rng, mode: str | None = None,
                 ridge: float | None = None):
        self.prior, self.K, self.reward, self.rng = prior, K, reward, rng
        self.mode = _resolve_mode(prior, mode)
        self.stats = IncrementalStats(K, prior.d, reward, ridge)
        self.prec1 = prior.prec(1)
        L, d = prior.L, prior.d
        self.lev_gain = np.empty((L, K, d, d))
        self.lev_offset = np.empty((L, K, d))
        self.lev_chol = np.empty((L, K, d, d))
        self.act_gain = np.empty((K, d, d))
        self.act_offset = np.empty((K, d))
        self.act_chol = np.empty((K, d, d))
        chain = self._chain(self.stats.stats[0])
        for a in range(K):
            self._store(a, chain)

    def _chain(self, stats) -> PosteriorChain:
        return propagate(self.prior, self.mode, action_terms(self.prec1, [stats]), self.prec1)

    def _store(self, a: int, chain: PosteriorChain) -> None:
        for j, st in enumerate(chain.levels):
            self.lev_gain[j, a] = st.gain
            self.lev_offset[j, a] = st.offset
            self.lev_chol[j, a] = st.chol
        t = chain.actions
        self.act_gain[a], self.act_offset[a], self.act_chol[a] = t.gain[0], t.offset[0], t.chol[0]

    def sample(self) -> np.ndarray:
        K, d, L = self.K, self.prior.d, self.prior.L

        def noise(chol):
            return np.einsum("kij,kj->ki", chol, self.rng.standard_normal((K, d)))

        psi = self.lev_offset[L - 1] + noise(self.lev_chol[L - 1])
        for j in range(L - 1, 0, -1):
            parent = self.prior.link(j + 1)(psi)
            psi = (np.einsum("kij,kj->ki", self.lev_gain[j - 1], parent) + self.lev_offset[j - 1]
                   + noise(self.lev_chol[j - 1]))
        f1 = self.prior.link(1)(psi)
        return np.einsum("kij,kj->ki", self.act_gain, f1) + self.act_offset + noise(self.act_chol)

    def act(self, x):
        thetas = self.sample()
        scores = self.reward.mean(thetas @ x)
        return Decision(argmax_lowest(scores), thetas, scores)

    def update(self, x, a, y):
        self._store(a, self._chain(self.stats.add(a, x, y)))


class SharedDiffusionTS(Agent):
    """Diffusion TS when every action shares one parameter through ``feature_map(x) -> (K, d)``."""

    name = "dts_shared"

    def __init__(self, prior: DiffusionPrior, feature_map, reward, rng, mode: str | None = None,
                 ridge: float | None = None):
        self.prior, self.feature_map, self.reward, self.rng = prior, feature_map, reward, rng
        self.mode = _resolve_mode(prior, mode)
        self.stats = IncrementalStats(1, prior.d, reward, ridge)
        self.prec1 = prior.prec(1)
        self.terms = action_terms(self.prec1, self.stats.stats)
        self.chain = propagate(prior, self.mode, self.terms, self.prec1, shared=True)

    def act(self, x):
        _, theta = hierarchical_sample(self.chain, self.rng)
        scores = self.reward.mean(self.feature_map(x) @ theta)
        return Decision(argmax_lowest(scores), theta, scores)

    def update(self, x, a, y):
        st = self.stats.add(0, self.feature_map(x)[a], y)
        update_action_terms(self.terms, 0, self.prec1, st)
        self.chain = propagate(self.prior, self.mode, self.terms, self.prec1, shared=True)


class _GaussianBeliefs:
    """Independent per-action Gaussian beliefs N(mean_a, cov_a) from a common prior."""

    def __init__(self, K: int, prior_cov: np.ndarray, noise_var: float):
        d = prior_cov.shape[0]
        self.degenerate = not np.any(prior_cov)
        self.noise_var = noise_var
        self.prec = np.broadcast_to(np.zeros((d, d)) if self.degenerate else spd_inverse(prior_cov),
                                    (K, d, d)).copy()
        self.vec = np.zeros((K, d))
        self.cov = np.broadcast_to(prior_cov, (K, d, d)).copy()
        self.chol = np.broadcast_to(safe_cholesky(prior_cov) if not self.degenerate else np.zeros((d, d)),
                                    (K, d, d)).copy()
        self.mean = np.zeros((K, d))

    def add(self, a, x, y):
        if self.degenerate:
            return
        self.prec[a] += np.outer(x, x) / self.noise_var
        self.vec[a] += x * (y / self.noise_var)
        self.cov[a] = spd_inverse(self.prec[a])
        self.chol[a] = safe_cholesky(self.cov[a])
        self.mean[a] = self.cov[a] @ self.vec[a]


class LinTS(Agent):
    """Linear Thompson sampling with independent Gaussian priors N(0, prior_cov)."""

    name = "lints"

    def __init__(self, K: int, prior_cov: np.ndarray, rng, sigma: float = 1.0):
        self.K, self.rng = K, rng
        self.beliefs = _GaussianBeliefs(K, np.asarray(prior_cov, dtype=float), sigma**2)

    def act(self, x):
        b = self.beliefs
        z = self.rng.standard_normal(b.mean.shape)
        thetas = b.mean + np.einsum("kij,kj->ki", b.chol, z)
        scores = thetas @ x
        return Decision(argmax_lowest(scores), thetas, scores)

    def update(self, x, a, y):
        self.beliefs.add(a, np.asarray(x, dtype=float), float(y))


class LinUCB(Agent):
    name = "linucb"

    def __init__(self, K: int, d: int, alpha: float = 1.0, ridge: float = 1.0):
        self.alpha = alpha
        self.beliefs = _GaussianBeliefs(K, np.eye(d) / ridge, 1.0)

    def act(self, x):
        b = self.beliefs
        width = np.sqrt(np.maximum(np.einsum("i,kij,j->k", x, b.cov, x), 0.0))
        scores = b.mean @ x + self.alpha * width
        return Decision(argmax_lowest(scores), b.mean.copy(), scores)

    def update(self, x, a, y):
        self.beliefs.add(a, np.asarray(x, dtype=float), float(y))


class _GlmBeliefs:
    def __init__(self, K, d, reward, ridge):
        self.ridge = ridge
        self.stats = IncrementalStats(K, d, reward, ridge)
        self.B = np.zeros((K, d))
        self.cov = np.broadcast_to(np.eye(d) / ridge, (K, d, d)).copy()
        self.chol = np.broadcast_to(np.eye(d) / np.sqrt(ridge), (K, d, d)).copy()

    def add(self, a, x, y):
        st = self.stats.add(a, x, y)
        d = self.B.shape[1]
        self.B[a] = st.B_hat
        self.cov[a] = spd_inverse(st.G_hat + self.ridge * np.eye(d))
        self.chol[a] = safe_cholesky(self.cov[a])


class GlmTS(Agent):
    """Per-action Laplace Thompson sampling: theta_a ~ N(B_hat_a, c (G_hat_a + ridge I)^-1)."""

    name = "glmts"

    def __init__(self, K: int, d: int, reward, rng, ridge: float = 1.0, inflation: float = 1.0):
        self.reward, self.rng, self.inflation = reward, rng, inflation
        self.beliefs = _GlmBeliefs(K, d, reward, ridge)

    def act(self, x):
        b = self.beliefs
        z = self.rng.standard_normal(b.B.shape)
        thetas = b.B + np.sqrt(self.inflation) * np.einsum("kij,kj->ki", b.chol, z)
        scores = self.reward.mean(thetas @ x)
        return Decision(argmax_lowest(scores), thetas, scores)

    def update(self, x, a, y):
        self.beliefs.add(a, np.asarray(x, dtype=float), float(y))


class UcbGlm(Agent):
    name = "ucbglm"

    def __init__(self, K: int, d: int, reward, alpha: float = 1.0, ridge: float = 1.0):
        self.reward, self.alpha = reward, alpha
        self.beliefs = _GlmBeliefs(K, d, reward, ridge)

    def act(self, x):
        b = self.beliefs
        width = np.sqrt(np.maximum(np.einsum("i,kij,j->k", x, b.cov, x), 0.0))
        scores = self.reward.mean(b.B @ x) + self.alpha * width
        return Decision(argmax_lowest(scores), b.B.copy(), scores)

    def update(self, x, a, y):
        self.beliefs.add(a, np.asarray(x, dtype=float), float(y))


def hierts_prior(prior: DiffusionPrior, variant: int, eps: float = HIERTS_EPS) -> DiffusionPrior:
    """Two-level marginalization of a linear diffusion prior.

    Variant 1 keeps psi_L (mapped through B_L) as the only latent; variant 2
    keeps W_1 psi_1. In both, theta_a | latent ~ N(latent, Omega).
    """
    if variant not in (1, 2):
        raise ValueError("HierTS variant must be 1 or 2")
    Bs = prior.products()
    d = prior.d
    terms = [B @ prior.cov(l + 1) @ B.T for l, B in enumerate(Bs, start=1)]
    if variant == 1:
        omega = prior.cov(1) + sum(terms[:-1], np.zeros((d, d)))
        top = terms[-1]
    else:
        omega = prior.cov(1)
        top = sum(terms, np.zeros((d, d)))
    top = symmetrize(top) + eps * np.eye(d)
    return linear_prior([np.eye(d)], [symmetrize(omega)], top)


class HierTS(DiffusionTS):
    def __init__(self, prior: DiffusionPrior, K: int, reward, rng, variant: int = 1,
                 eps: float = HIERTS_EPS):
        if not prior.is_linear:
            raise ValueError("HierTS needs a linear diffusion prior to marginalize")
        super().__init__(hierts_prior(prior, variant, eps), K, reward, rng, mode="linear")
        self.variant = variant
        self.name = f"hierts{variant}"


class RandomAgent(Agent):
    name = "random"

    def __init__(self, K: int, rng):
        self.K, self.rng = K, rng

    def act(self, x):
        scores = np.zeros(self.K)
        a = int(self.rng.integers(self.K))
        scores[a] = 1.0
        return Decision(a, None, scores)


class OracleAgent(Agent):
    """Acts greedily on the true parameters of an instance."""

    name = "oracle"

    def __init__(self, instance):
        self.instance = instance

    def act(self, x):
        scores = self.instance.mean_rewards(x)
        return Decision(argmax_lowest(scores), self.instance.thetas, scores)


AGENT_NAMES = ("dts", "lints", "linucb", "hierts1", "hierts2", "glmts", "ucbglm", "random", "oracle")


def lints_prior_cov(prior: DiffusionPrior | None, d: int, kind: str = "auto", scale: float = 1.0,
                    samples: np.ndarray | None = None) -> np.ndarray:
    """Prior covariance for LinTS: marginal (linear priors), identity, or empirical."""
    if kind == "auto":
        kind = "marginal" if prior is not None and prior.is_linear else "identity"
    if kind == "marginal":
        return prior.marginal_cov()
    if kind == "identity":
        return scale * np.eye(d)
    if kind == "empirical":
        if samples is None:
            raise ValueError("empirical LinTS prior needs parameter samples")
        return symmetrize(np.cov(np.asarray(samples), rowvar=False)) + 1e-9 * np.eye(d)
    raise ValueError(f"unknown LinTS prior {kind!r}")


def make_agent(name: str, *, K: int, d: int, rng, prior: DiffusionPrior | None = None,
               reward=None, instance=None, **hp) -> Agent:
    """Build an agent by name. ``reward`` is the likelihood the agent assumes."""
    reward = reward if reward is not None else LinearGaussian(1.0)
    sigma = getattr(reward, "sigma", 1.0)
    if name == "dts":
        latents = hp.get("latents") or "auto"
        if latents == "auto":
            latents = "per_action" if any(prior.link(l).kind == "ddpm_eps"
                                           for l in range(1, prior.L + 1)) else "shared"
        if latents == "per_action":
            return PerActionDiffusionTS(prior, K, reward, rng, mode=hp.get("mode"), ridge=hp.get("glm_ridge"))
        if latents != "shared":
            raise ValueError(f"latents must be auto, shared or per_action, got {latents!r}")
        return DiffusionTS(prior, K, reward, rng, mode=hp.get("mode"), ridge=hp.get("glm_ridge"))
    if name == "lints":
        kind = hp.get("lints_prior") or "auto"
        if kind == "auto" and not isinstance(reward, LinearGaussian):
            kind = "identity"
        cov = lints_prior_cov(prior, d, kind, hp.get("lints_scale", 1.0), hp.get("lints_samples"))
        return LinTS(K, cov, rng, sigma=sigma)
    if name == "linucb":
        return LinUCB(K, d, alpha=hp.get("alpha", 1.0), ridge=hp.get("ridge", 1.0))
    if name in ("hierts1", "hierts2"):
        return HierTS(prior, K, reward, rng, variant=int(name[-1]), eps=hp.get("hierts_eps", HIERTS_EPS))
    if name == "glmts":
        return GlmTS(K, d, reward, rng, ridge=hp.get("ridge", 1.0), inflation=hp.get("inflation", 1.0))
    if name == "ucbglm":
        return UcbGlm(K, d, reward, alpha=hp.get("alpha", 1.0), ridge=hp.get("ridge", 1.0))
    if name == "random":
        return RandomAgent(K, rng)
    if name == "oracle":
        if instance is None:
            raise ValueError("oracle agent needs the true instance")
        return OracleAgent(instance)
    raise ValueError(f"unknown agent {name!r}; expected one of {', '.join(AGENT_NAMES)}")
