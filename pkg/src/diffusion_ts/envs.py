"""Bandit environments: synthetic diffusion draws, Swiss roll, ratings-based instances."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import (BanditInstance, DiffusionPrior, LinearGaussian, LinearLink, MlpLink, MlpNet,
                    RowContexts, UniformContexts, linear_prior, prior_sample)


class EmptyFile(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, message: str = ""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


# --------------------------------------------------------------------------
# synthetic priors and instances
# --------------------------------------------------------------------------

def default_sparsity(d: int, L: int) -> list[int]:
    """Active column counts used for the synthetic linear problems.

    (5, 2) for d=5, L=2; otherwise no sparsity.
    """
    if d == 5 and L == 2:
        return [5, 2]
    return [d] * L


def random_linear_prior(d: int, L: int, rng, active=None, cov: float = 1.0,
                        normalize: bool = False) -> DiffusionPrior:
    """W_l ~ U[-1, 1]^{d x d} with the trailing d - d_l columns zeroed; Sigma_l = cov * I.

    ``normalize`` rescales each W_l to unit spectral norm.
    """
    active = default_sparsity(d, L) if active is None else list(active)
    if len(active) != L:
        raise ValueError(f"need {L} active-dimension counts, got {len(active)}")
    Ws = []
    for dl in active:
        if not 1 <= dl <= d:
            raise ValueError(f"active dimension {dl} outside 1..{d}")
        W = rng.uniform(-1.0, 1.0, size=(d, d))
        W[:, dl:] = 0.0
        if normalize:
            W /= max(np.linalg.norm(W, 2), 1e-12)
        Ws.append(W)
    return linear_prior(Ws, [cov] * L, cov)


def random_mlp_prior(d: int, L: int, rng, hidden: int | None = None, cov: float = 1.0) -> DiffusionPrior:
    """Two-layer ReLU links with U[-1, 1] weights; hidden 20 for d <= 5, else 60."""
    hidden = (20 if d <= 5 else 60) if hidden is None else hidden
    links = [MlpLink(MlpNet.uniform(d, hidden, d, rng, scale=1.0)) for _ in range(L)]
    return DiffusionPrior(links, [cov] * L, cov)


def sample_instance(prior: DiffusionPrior, K: int, reward, rng, contexts=None) -> BanditInstance:
    """Draw K action parameters from the prior; the instance keeps the true latents."""
    latents, thetas = prior_sample(prior, K, rng)
    if contexts is None:
        contexts = UniformContexts(prior.d)
    return BanditInstance(thetas, reward, contexts, latents=latents)


# --------------------------------------------------------------------------
# Swiss roll
# --------------------------------------------------------------------------

@dataclass
class SwissRollConfig:
    t_min: float = 1.5 * np.pi
    t_max: float = 4.5 * np.pi
    scale: float = 1.0 / (4.5 * np.pi)
    noise_std: float = 0.05
    count: int = 1000

    def validate(self) -> None:
        if not self.t_min < self.t_max:
            raise ValueError("need t_min < t_max")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be non-negative")
        if self.count < 0:
            raise ValueError("count must be non-negative")


def swiss_roll(config: SwissRollConfig, rng, t=None) -> np.ndarray:
    """Points scale * (t cos t, t sin t) + noise; ``t`` may be forced for testing."""
    config.validate()
    if t is None:
        t = rng.uniform(config.t_min, config.t_max, size=config.count)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    pts = config.scale * np.column_stack([t * np.cos(t), t * np.sin(t)])
    if config.noise_std > 0:
        pts = pts + config.noise_std * rng.standard_normal(pts.shape)
    return pts


# --------------------------------------------------------------------------
# ratings
# --------------------------------------------------------------------------

@dataclass
class RatingsTable:
    users: np.ndarray      # dense user index per triple
    items: np.ndarray
    ratings: np.ndarray
    user_ids: list = field(default_factory=list)   # original labels, by dense index
    item_ids: list = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return self.ratings.size

    def same_as(self, other: "RatingsTable") -> bool:
        return (self.user_ids == other.user_ids and self.item_ids == other.item_ids
                and np.array_equal(self.users, other.users) and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings))


def ingest_ratings(path) -> RatingsTable:
    """Read "user<TAB>item<TAB>rating[<TAB>timestamp]" rows; ids are remapped by first appearance."""
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    users, items, ratings = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(lineno, f"expected 3 or 4 tab-separated fields, got {len(parts)}")
            u, i, r = (p.strip() for p in parts[:3])
            if not u or not i:
                raise ParseError(lineno, "empty user or item id")
            try:
                value = float(r)
            except ValueError:
                raise ParseError(lineno, f"rating {r!r} is not a number") from None
            if not np.isfinite(value):
                raise ParseError(lineno, "rating is not finite")
            users.append(user_map.setdefault(u, len(user_map)))
            items.append(item_map.setdefault(i, len(item_map)))
            ratings.append(value)
    if not ratings:
        raise EmptyFile(f"{path}: no ratings")
    return RatingsTable(np.array(users), np.array(items), np.array(ratings),
                        list(user_map), list(item_map))


def write_ratings(table: RatingsTable, path) -> None:
    with open(path, "w") as fh:
        for u, i, r in zip(table.users, table.items, table.ratings):
            fh.write(f"{table.user_ids[u]}\t{table.item_ids[i]}\t{float(r)!r}\n")


@dataclass
class FactorModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    reg: float
    rmse: float
    objectives: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.item_factors.shape[1]


def _als_objective(table, U, V, reg) -> float:
    resid = table.ratings - np.einsum("ij,ij->i", U[table.users], V[table.items])
    return float(resid @ resid + reg * ((U * U).sum() + (V * V).sum()))


def _ridge_rows(n_rows: int, rows, cols, ratings, other: np.ndarray, reg: float) -> np.ndarray:
    d = other.shape[1]
    out = np.zeros((n_rows, d))
    order = np.argsort(rows, kind="stable")
    rows, cols, ratings = rows[order], cols[order], ratings[order]
    bounds = np.searchsorted(rows, np.arange(n_rows + 1))
    eye = reg * np.eye(d)
    for r in range(n_rows):
        lo, hi = bounds[r], bounds[r + 1]
        if lo == hi:
            continue
        F = other[cols[lo:hi]]
        out[r] = np.linalg.solve(F.T @ F + eye, F.T @ ratings[lo:hi])
    return out


def als_factorize(table: RatingsTable, rank: int = 5, reg: float = 0.1, sweeps: int = 20,
                  seed: int = 0) -> FactorModel:
    """Alternating ridge regressions for user and item factors.

    Each half-sweep solves its block exactly, so the objective never increases.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if not reg > 0:
        raise ValueError("reg must be positive")
    if sweeps < 0:
        raise ValueError("sweeps must be >= 0")
    rng = np.random.default_rng(seed)
    init_scale = np.sqrt(max(np.mean(np.abs(table.ratings)), 1e-3) / rank)
    U = init_scale * rng.uniform(0.5, 1.5, size=(table.n_users, rank))
    V = init_scale * rng.uniform(0.5, 1.5, size=(table.n_items, rank))
    objectives = [_als_objective(table, U, V, reg)]
    for _ in range(sweeps):
        U = _ridge_rows(table.n_users, table.users, table.items, table.ratings, V, reg)
        V = _ridge_rows(table.n_items, table.items, table.users, table.ratings, U, reg)
        objectives.append(_als_objective(table, U, V, reg))
    pred = np.einsum("ij,ij->i", U[table.users], V[table.items])
    rmse = float(np.sqrt(np.mean((table.ratings - pred) ** 2)))
    return FactorModel(U, V, reg, rmse, objectives)


def movielens_instance(factors: FactorModel, sigma: float = 0.5, rng=None,
                       items=None) -> BanditInstance:
    """Items are actions, contexts are uniformly drawn user factors.

    User factors are divided by their largest norm s (so |x| <= 1) and item
    factors multiplied by s, which leaves x^T theta equal to the fitted rating.
    ``items`` optionally restricts the action set to a subset of item indices.
    """
    U, V = factors.user_factors, factors.item_factors
    s = float(np.max(np.linalg.norm(U, axis=1)))
    s = s if s > 0 else 1.0
    thetas = V * s if items is None else V[np.asarray(items)] * s
    return BanditInstance(thetas, LinearGaussian(sigma), RowContexts(U / s))


# --------------------------------------------------------------------------
# parameter-sample files
# --------------------------------------------------------------------------

def write_samples(samples: np.ndarray, path) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"dim{i}" for i in range(samples.shape[1])])
        for row in samples:
            w.writerow([repr(float(v)) for v in row])


def read_samples(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyFile(f"{path}: no header")
    header = rows[0]
    d = len(header)
    if header != [f"dim{i}" for i in range(d)]:
        raise ParseError(1, "header must be dim0,...,dim{d-1}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d:
            raise ParseError(lineno, f"expected {d} values, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise ParseError(lineno, "non-numeric value") from None
    if not data:
        raise EmptyFile(f"{path}: no samples")
    out = np.array(data)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{path}: non-finite sample values")
    return out
