"""Hierarchical posterior of a diffusion prior given per-action GLM summaries.

The posterior keeps the prior's chain structure. Every conditional is
Gaussian:

    psi_L | H              ~ N(Sb_L B_L, Sb_L)
    psi_j | psi_{j+1}, H   ~ N(Sb_j (P_{j+1} f_{j+1}(psi_{j+1}) + B_j), Sb_j)
    theta_a | psi_1, H_a   ~ N(Sh_a (P_1 f_1(psi_1) + G_a b_a), Sh_a)

with ``P_l`` the prior precision of level l, ``Sb_j^-1 = P_{j+1} + G_j`` and
``Sh_a^-1 = P_1 + G_a``. The data terms (G_j, B_j) are propagated upward
from the actions. In ``linear`` mode they carry the mixing matrices and the
result is exact for linear-Gaussian rewards; in ``nonlinear`` mode the
mixing matrices are dropped.

Level indices are 1-based: ``chain.levels[j - 1]`` holds the posterior of
psi_j given its parent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .glm import ActionStats
from .model import DiffusionPrior, safe_cholesky, spd_inverse, symmetrize

MODES = ("linear", "nonlinear")


class ModeError(ValueError):
    pass


@dataclass
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class LevelState:
    """Posterior of psi_j | psi_{j+1}, H for one latent level j."""

    G_bar: np.ndarray
    B_bar: np.ndarray
    prior_prec: np.ndarray
    Sigma_bar: np.ndarray
    chol: np.ndarray
    gain: np.ndarray  # Sigma_bar @ prior_prec
    offset: np.ndarray  # Sigma_bar @ B_bar

    def mean(self, parent_mean: np.ndarray) -> np.ndarray:
        """Conditional mean given f_{j+1}(psi_{j+1}) (rows allowed)."""
        return parent_mean @ self.gain.T + self.offset


@dataclass
class ActionTerms:
    """Stacked per-action posterior pieces, shape (K, d, d) / (K, d)."""

    cov: np.ndarray
    chol: np.ndarray
    gain: np.ndarray  # Sigma_hat @ Sigma_1^-1
    offset: np.ndarray  # Sigma_hat @ info
    data_prec: np.ndarray  # Sigma_1^-1 - Sigma_1^-1 Sigma_hat Sigma_1^-1
    data_vec: np.ndarray  # Sigma_1^-1 Sigma_hat info
    has_data: np.ndarray

    @property
    def K(self) -> int:
        return self.cov.shape[0]


@dataclass
class PosteriorChain:
    prior: DiffusionPrior
    mode: str
    levels: list
    actions: ActionTerms
    prec1: np.ndarray
    shared: bool = False
    stats: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return self.prior.L

    @property
    def K(self) -> int:
        return self.actions.K

    def level(self, j: int) -> LevelState:
        return self.levels[j - 1]

    def reconstruction_error(self) -> float:
        """Max |Sigma_bar^-1 - (Sigma^-1 + G_bar)| over levels."""
        err = 0.0
        for st in self.levels:
            diff = spd_inverse(st.Sigma_bar) - (st.prior_prec + st.G_bar)
            err = max(err, float(np.max(np.abs(diff))))
        return err

    def dumps(self) -> str:
        """Debug dump with per-level G_bar, B_bar, Sigma_bar."""
        fmt = lambda a: " ".join("%.17g" % v for v in np.ravel(a))
        lines = [f"mode = {self.mode}", f"L = {self.L}", f"K = {self.K}", f"d = {self.prior.d}"]
        for j, st in enumerate(self.levels, start=1):
            lines += [f"[level {j}]", f"G_bar = {fmt(st.G_bar)}", f"B_bar = {fmt(st.B_bar)}",
                      f"Sigma_bar = {fmt(st.Sigma_bar)}"]
        return "\n".join(lines) + "\n"


def _resolve_mode(prior: DiffusionPrior, mode: str | None) -> str:
    if mode is None or mode == "auto":
        return "linear" if prior.is_linear else "nonlinear"
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    if mode == "linear" and not prior.is_linear:
        raise ModeError("linear mode requires linear links at every level")
    return mode


def action_terms(prec1: np.ndarray, stats: list) -> ActionTerms:
    """Conditional action posteriors for a list of ActionStats."""
    K, d = len(stats), prec1.shape[0]
    cov1 = spd_inverse(prec1)
    G = np.array([s.G_hat for s in stats]).reshape(K, d, d)
    info = np.array([s.info for s in stats]).reshape(K, d)
    has_data = np.array([s.count > 0 for s in stats], dtype=bool)
    cov = np.broadcast_to(cov1, (K, d, d)).copy()
    gain = np.broadcast_to(np.eye(d), (K, d, d)).copy()
    offset = np.zeros((K, d))
    data_prec = np.zeros((K, d, d))
    data_vec = np.zeros((K, d))
    if has_data.any():
        idx = np.flatnonzero(has_data)
        c = spd_inverse(prec1 + G[idx])
        cov[idx] = c
        gain[idx] = c @ prec1
        offset[idx] = np.einsum("kij,kj->ki", c, info[idx])
        # P - P S P == P S G, which avoids cancellation when P is large
        data_prec[idx] = symmetrize(np.swapaxes(gain[idx], -1, -2) @ G[idx])
        data_vec[idx] = np.einsum("kji,kj->ki", gain[idx], info[idx])
    return ActionTerms(cov, safe_cholesky(cov), gain, offset, data_prec, data_vec, has_data)


def update_action_terms(terms: ActionTerms, a: int, prec1: np.ndarray, stats: ActionStats) -> None:
    """Recompute the pieces of one action in place."""
    one = action_terms(prec1, [stats])
    for name in ("cov", "chol", "gain", "offset", "data_prec", "data_vec", "has_data"):
        getattr(terms, name)[a] = getattr(one, name)[0]


def _level_state(G_bar, B_bar, prior_cov, prior_prec) -> LevelState:
    if not np.any(G_bar) and not np.any(B_bar):
        # no information reached this level: the conditional is the prior layer
        d = prior_cov.shape[0]
        return LevelState(G_bar, B_bar, prior_prec, prior_cov.copy(), safe_cholesky(prior_cov),
                          np.eye(d), np.zeros(d))
    Sb = spd_inverse(prior_prec + G_bar)
    return LevelState(G_bar, B_bar, prior_prec, Sb, safe_cholesky(Sb), Sb @ prior_prec, Sb @ B_bar)


def propagate(prior: DiffusionPrior, mode: str, terms: ActionTerms, prec1: np.ndarray,
              shared: bool = False, stats=None) -> PosteriorChain:
    """Push the action-level data terms up through every latent level."""
    G_bar = terms.data_prec.sum(axis=0)
    B_bar = terms.data_vec.sum(axis=0)
    if mode == "linear":
        W1 = prior.mixing(1)
        G_bar = symmetrize(W1.T @ G_bar @ W1)
        B_bar = W1.T @ B_bar
    levels = []
    for j in range(1, prior.L + 1):
        cov = prior.cov(j + 1)
        prec = prior.prec(j + 1)
        st = _level_state(G_bar, B_bar, cov, prec)
        levels.append(st)
        if j == prior.L:
            break
        G_next = symmetrize(st.gain.T @ st.G_bar)
        B_next = st.gain.T @ st.B_bar
        if mode == "linear":
            W = prior.mixing(j + 1)
            G_next = symmetrize(W.T @ G_next @ W)
            B_next = W.T @ B_next
        G_bar, B_bar = G_next, B_next
    return PosteriorChain(prior, mode, levels, terms, prec1, shared, list(stats or []))


def chain_update(prior: DiffusionPrior, stats: list, mode: str | None = None) -> PosteriorChain:
    """Posterior chain from per-action likelihood summaries.

    Cost is O((L + K) d^3). ``mode`` is ``linear`` (exact for linear links),
    ``nonlinear`` (mixing-matrix-free approximation) or ``auto``.
    """
    mode = _resolve_mode(prior, mode)
    for s in stats:
        if s.B_hat.shape != (prior.d,):
            raise ValueError(f"stats have dimension {s.B_hat.shape}, prior has d={prior.d}")
    prec1 = prior.prec(1)
    return propagate(prior, mode, action_terms(prec1, stats), prec1, stats=stats)


def shared_chain_update(prior: DiffusionPrior, stats: ActionStats, mode: str | None = None) -> PosteriorChain:
    """Posterior chain when all actions share one parameter (single summary)."""
    chain = chain_update(prior, [stats], mode)
    chain.shared = True
    return chain


def action_posterior(chain: PosteriorChain, a: int, psi1: np.ndarray) -> Gaussian:
    psi1 = np.asarray(psi1, dtype=float)
    if psi1.shape != (chain.prior.d,):
        raise ValueError(f"psi1 has shape {psi1.shape}, expected ({chain.prior.d},)")
    t = chain.actions
    prior_mean = chain.prior.link(1)(psi1)
    return Gaussian(t.gain[a] @ prior_mean + t.offset[a], t.cov[a])


def latent_posterior(chain: PosteriorChain, level: int, psi_parent=None) -> Gaussian:
    """Posterior of psi_{level-1} given psi_level; ``level = L + 1`` is the top."""
    L = chain.L
    if not 2 <= level <= L + 1:
        raise IndexError(f"level {level} outside 2..{L + 1}")
    st = chain.level(level - 1)
    if level == L + 1:
        return Gaussian(st.offset.copy(), st.Sigma_bar)
    parent_mean = chain.prior.link(level)(np.asarray(psi_parent, dtype=float))
    return Gaussian(st.mean(parent_mean), st.Sigma_bar)


def hierarchical_sample(chain: PosteriorChain, rng, size: int | None = None):
    """Draw (psi_L, ..., psi_1) then every action parameter given psi_1.

    Returns ``(latents, thetas)`` like ``prior_sample``; for a shared chain
    ``thetas`` has shape (d,) (or (size, d)).
    """
    m = 1 if size is None else size
    prior, d = chain.prior, chain.prior.d
    top = chain.level(chain.L)
    psi = top.offset + rng.standard_normal((m, d)) @ top.chol.T
    latents = [psi]
    for j in range(chain.L - 1, 0, -1):
        st = chain.level(j)
        psi = st.mean(prior.link(j + 1)(psi)) + rng.standard_normal((m, d)) @ st.chol.T
        latents.append(psi)
    t = chain.actions
    f1 = prior.link(1)(psi)
    z = rng.standard_normal((m, t.K, d))
    thetas = (np.einsum("kij,mj->mki", t.gain, f1) + t.offset
              + np.einsum("kij,mkj->mki", t.chol, z))
    if chain.shared:
        thetas = thetas[:, 0, :]
    if size is None:
        return [p[0] for p in latents], thetas[0]
    return latents, thetas


# --------------------------------------------------------------------------
# linear-mode diagnostics
# --------------------------------------------------------------------------

@dataclass
class DiagnosticCov:
    Sigma_check: np.ndarray
    projections: list
    sigma_max_sq: float | None = None


def _require_linear(chain: PosteriorChain, what: str) -> None:
    if chain.mode != "linear":
        raise ModeError(f"{what} is only defined for linear diffusion chains")


def sigma_max_sq(prior: DiffusionPrior, sigma: float) -> float:
    """max over levels 1..L+1 of 1 + sigma_l^2 / sigma^2 (sigma_l^2 = top eigenvalue)."""
    top = max(float(np.linalg.eigvalsh(prior.cov(l))[-1]) for l in range(1, prior.L + 2))
    return 1.0 + top / sigma**2


def projections(chain: PosteriorChain, a: int) -> list:
    """P_{a,l} = Sh_a P_1 W_1 prod_{i<l} Sb_i P_{i+1} W_{i+1}, l = 1..L."""
    _require_linear(chain, "projections")
    P = chain.actions.gain[a] @ chain.prior.mixing(1)
    out = [P]
    for l in range(2, chain.L + 1):
        P = P @ chain.level(l - 1).gain @ chain.prior.mixing(l)
        out.append(P)
    return out


def marginal_covariance(chain: PosteriorChain, a: int, sigma: float | None = None) -> DiagnosticCov:
    """Covariance of theta_a | H with every latent integrated out."""
    _require_linear(chain, "marginal_covariance")
    Ps = projections(chain, a)
    total = chain.actions.cov[a].copy()
    for l, P in enumerate(Ps, start=1):
        total += P @ chain.level(l).Sigma_bar @ P.T
    smax = None if sigma is None else sigma_max_sq(chain.prior, sigma)
    return DiagnosticCov(symmetrize(total), Ps, smax)


def marginal_mean(chain: PosteriorChain, a: int) -> np.ndarray:
    """Mean of theta_a | H (linear mode)."""
    _require_linear(chain, "marginal_mean")
    m = chain.level(chain.L).offset
    for j in range(chain.L - 1, 0, -1):
        m = chain.level(j).mean(chain.prior.mixing(j + 1) @ m)
    t = chain.actions
    return t.gain[a] @ (chain.prior.mixing(1) @ m) + t.offset[a]


def info_gain_certificate(chain_t: PosteriorChain, chain_next: PosteriorChain, x, a: int,
                          sigma: float) -> np.ndarray:
    """Smallest eigenvalue of the precision gain minus its guaranteed lower bound, per level.

    Non-negative entries certify that one observation (x, a) increased the
    precision of every latent level by at least
    sigma^-2 sigma_max^-2l P_{a,l}^T x x^T P_{a,l}.
    """
    _require_linear(chain_t, "info_gain_certificate")
    _require_linear(chain_next, "info_gain_certificate")
    x = np.asarray(x, dtype=float)
    smax = sigma_max_sq(chain_t.prior, sigma)
    out = []
    for l, P in enumerate(projections(chain_t, a), start=1):
        gain = chain_next.level(l).G_bar - chain_t.level(l).G_bar
        v = P.T @ x
        bound = np.outer(v, v) / (sigma**2 * smax**l)
        out.append(float(np.linalg.eigvalsh(symmetrize(gain - bound))[0]))
    return np.array(out)
