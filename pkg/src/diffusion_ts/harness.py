"""Bayes-regret experiments, regret-bound calculator and posterior-quality checks."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import envs
from .agents import AGENT_NAMES, make_agent
from .glm import ActionStats, ObservationLog, fit
from .model import (DiffusionPrior, LinearLink, MlpLink, MlpNet, UniformContexts, as_covariance,
                    linear_prior, load_prior, make_reward, symmetrize)
from .posterior import chain_update, hierarchical_sample, marginal_covariance, marginal_mean
from .pretrain import TrainConfig, train

log = logging.getLogger(__name__)

TRACE_HEADER = "run,round,action,regret,cum_regret"
AGGREGATE_HEADER = "round,mean_regret,stderr,mean_cum,stderr_cum"
RATIO_FLOOR = 1e-9
ENV_KINDS = ("linear", "mlp", "prior_file", "swissroll", "movielens")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class EnvSpec:
    kind: str = "linear"
    d: int = 5
    L: int = 2
    K: int = 100
    reward: str = "linear"
    sigma: float = 1.0
    context: str = "uniform"          # uniform on [-1,1]^d, or "unit" for unit norm
    active: list | None = None        # active columns per level (linear kind)
    hidden: int | None = None         # MLP width (mlp kind)
    normalize: bool = False           # rescale W_l to unit spectral norm
    prior_cov: float = 1.0
    prior_path: str | None = None
    ratings_path: str | None = None
    rank: int = 5
    reg: float = 0.1
    sweeps: int = 20
    pretrain_samples: int = 1000
    pretrain_L: int = 40
    pretrain_epochs: int = 2000
    pretrain_hidden: int = 64
    misspec_w: float | None = None    # perturbation U[v, v + 0.5] added to mixing weights
    misspec_cov: float | None = None  # same for covariances


@dataclass
class AgentSpec:
    names: list = field(default_factory=lambda: ["dts", "lints"])
    reward: str | None = None         # likelihood assumed by the agents (default: env reward)
    sigma: float | None = None        # likelihood noise (default: env sigma, or 1 when env is noiseless)
    mode: str | None = None
    latents: str = "auto"             # shared chain, one chain per action, or auto (per action for denoisers)
    lints_prior: str = "auto"
    lints_scale: float = 1.0
    alpha: float = 1.0
    ridge: float = 1.0
    inflation: float = 1.0
    glm_ridge: float | None = None
    hierts_eps: float = 1e-8


@dataclass
class RunSpec:
    n: int = 1000
    runs: int = 10
    seed: int = 0
    jobs: int = 1


@dataclass
class BoundsSpec:
    delta: float | None = None
    c: float = 1.0


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentSpec = field(default_factory=AgentSpec)
    run: RunSpec = field(default_factory=RunSpec)
    bounds: BoundsSpec = field(default_factory=BoundsSpec)

    def validate(self) -> None:
        e, a, r = self.env, self.agent, self.run
        if e.kind not in ENV_KINDS:
            raise ConfigError(f"env.kind must be one of {ENV_KINDS}, got {e.kind!r}")
        for key in ("d", "L", "K"):
            if getattr(e, key) < 1:
                raise ConfigError(f"env.{key} must be >= 1")
        if e.reward not in ("linear", "logistic"):
            raise ConfigError(f"env.reward must be linear or logistic, got {e.reward!r}")
        if e.sigma < 0:
            raise ConfigError("env.sigma must be non-negative")
        if e.context not in ("uniform", "unit"):
            raise ConfigError("env.context must be uniform or unit")
        if e.kind == "prior_file" and not e.prior_path:
            raise ConfigError("env.prior_path is required for kind prior_file")
        if e.kind == "movielens" and not e.ratings_path:
            raise ConfigError("env.ratings_path is required for kind movielens")
        if e.kind == "swissroll" and e.d != 2:
            raise ConfigError("swissroll parameters are 2-dimensional (env.d = 2)")
        if e.pretrain_samples < 1:
            raise ConfigError("env.pretrain_samples must be >= 1")
        if not a.names:
            raise ConfigError("agent.names must list at least one agent")
        for name in a.names:
            if name not in AGENT_NAMES:
                raise ConfigError(f"unknown agent {name!r}; expected one of {AGENT_NAMES}")
        if a.reward not in (None, "linear", "logistic"):
            raise ConfigError(f"agent.reward must be linear or logistic, got {a.reward!r}")
        if a.latents not in ("auto", "shared", "per_action"):
            raise ConfigError("agent.latents must be auto, shared or per_action")
        if a.sigma is not None and not a.sigma > 0:
            raise ConfigError("agent.sigma must be positive")
        if r.n < 1:
            raise ConfigError("run.n must be >= 1")
        if r.runs < 1:
            raise ConfigError("run.runs must be >= 1")
        if r.jobs < 1:
            raise ConfigError("run.jobs must be >= 1")
        d = self.bounds.delta
        if d is not None and not 0 < d < 1:
            raise ConfigError("bounds.delta must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"env": EnvSpec, "agent": AgentSpec, "run": RunSpec, "bounds": BoundsSpec}


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        target = getattr(cfg, section)
        known = {f.name for f in fields(_SECTIONS[section])}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            setattr(target, key, value)
    cfg.validate()
    return cfg


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as TOML literals."""
    data = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {key!r} must look like section.key")
        data.setdefault(parts[0], {})[parts[1]] = _parse_value(value.strip())
    return data


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(apply_overrides(data, overrides))


# --------------------------------------------------------------------------
# environments
# --------------------------------------------------------------------------

def _perturb(value: np.ndarray, v: float, rng) -> np.ndarray:
    return value + rng.uniform(v, v + 0.5, size=value.shape)


def _perturb_cov(cov: np.ndarray, v: float, rng) -> np.ndarray:
    out = symmetrize(_perturb(cov, v, rng))
    w, Q = np.linalg.eigh(out)
    return symmetrize((Q * np.maximum(w, 1e-6)) @ Q.T)


def misspecify(prior: DiffusionPrior, w_shift: float | None, cov_shift: float | None, rng) -> DiffusionPrior:
    """Perturb mixing weights and covariances by U[v, v + 0.5] noise."""
    links, covs = [], []
    for l in range(1, prior.L + 1):
        link = prior.link(l)
        if w_shift is not None:
            if isinstance(link, LinearLink):
                link = LinearLink(_perturb(link.W, w_shift, rng))
            elif isinstance(link, MlpLink):
                p = {k: _perturb(v, w_shift, rng) for k, v in link.net.params().items()}
                link = MlpLink(MlpNet(**p))
            else:
                raise ConfigError(f"cannot perturb {link.kind} links")
        links.append(link)
        cov = prior.cov(l)
        covs.append(cov if cov_shift is None else _perturb_cov(cov, cov_shift, rng))
    top = prior.cov(prior.L + 1)
    if cov_shift is not None:
        top = _perturb_cov(top, cov_shift, rng)
    return DiffusionPrior(links, covs, top)


@dataclass
class Environment:
    """Everything shared by the runs of one experiment."""

    cfg: ExperimentConfig
    prior: DiffusionPrior | None = None    # fixed prior (file / pretrained), if any
    factors: envs.FactorModel | None = None
    lints_samples: np.ndarray | None = None

    def contexts(self):
        return UniformContexts(self.cfg.env.d, unit_norm=self.cfg.env.context == "unit")

    def draw(self, rng):
        """Return (instance, prior handed to the agents)."""
        e = self.cfg.env
        reward = make_reward(e.reward, e.sigma)
        if e.kind in ("linear", "mlp", "prior_file"):
            if e.kind == "linear":
                true_prior = envs.random_linear_prior(e.d, e.L, rng, e.active, e.prior_cov, e.normalize)
            elif e.kind == "mlp":
                true_prior = envs.random_mlp_prior(e.d, e.L, rng, e.hidden, e.prior_cov)
            else:
                true_prior = self.prior
            inst = envs.sample_instance(true_prior, e.K, reward, rng, self.contexts())
            agent_prior = true_prior
            if e.misspec_w is not None or e.misspec_cov is not None:
                agent_prior = misspecify(true_prior, e.misspec_w, e.misspec_cov, rng)
            return inst, agent_prior
        if e.kind == "swissroll":
            thetas = envs.swiss_roll(envs.SwissRollConfig(count=e.K), rng)
            return envs.BanditInstance(thetas, reward, self.contexts()), self.prior
        # movielens
        n_items = self.factors.item_factors.shape[0]
        items = None if e.K >= n_items else np.sort(rng.choice(n_items, e.K, replace=False))
        inst = envs.movielens_instance(self.factors, e.sigma, items=items)
        inst.reward = reward
        return inst, self.prior


def _pretrain_prior(samples: np.ndarray, e: EnvSpec, seed: int) -> DiffusionPrior:
    cfg = TrainConfig(L=e.pretrain_L, hidden=e.pretrain_hidden, epochs=e.pretrain_epochs, seed=seed)
    return train(samples, cfg)


def build_environment(cfg: ExperimentConfig) -> Environment:
    e = cfg.env
    env = Environment(cfg)
    if e.kind == "prior_file":
        env.prior = load_prior(e.prior_path)
        if env.prior.d != e.d:
            raise ConfigError(f"prior file has d={env.prior.d}, config says env.d={e.d}")
    elif e.kind == "swissroll":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.run.seed, 1]))
        samples = envs.swiss_roll(envs.SwissRollConfig(count=e.pretrain_samples), rng)
        env.prior = _pretrain_prior(samples, e, cfg.run.seed)
        env.lints_samples = samples
    elif e.kind == "movielens":
        table = envs.ingest_ratings(e.ratings_path)
        env.factors = envs.als_factorize(table, e.d, e.reg, e.sweeps, seed=cfg.run.seed)
        U = env.factors.user_factors
        s = float(np.max(np.linalg.norm(U, axis=1))) or 1.0
        samples = env.factors.item_factors * s
        env.prior = _pretrain_prior(samples, e, cfg.run.seed)
        env.lints_samples = samples
    return env


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

@dataclass
class RegretTrace:
    run: int
    actions: np.ndarray
    regret: np.ndarray

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)


def run_streams(base_seed: int, run: int):
    """Independent counter-based generators for instance, contexts, rewards, agent."""
    children = np.random.SeedSequence(base_seed + run).spawn(4)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def simulate(instance, agent, n: int, ctx_rng, rew_rng):
    actions = np.empty(n, dtype=int)
    regret = np.empty(n)
    for t in range(n):
        x = instance.contexts(ctx_rng)
        a = agent.act(x).action
        means = instance.mean_rewards(x)
        actions[t] = a
        regret[t] = max(float(means.max() - means[a]), 0.0)
        agent.update(x, a, instance.pull(x, a, rew_rng))
    return actions, regret


def _agent_likelihood(cfg: ExperimentConfig):
    e, a = cfg.env, cfg.agent
    sigma = a.sigma if a.sigma is not None else (e.sigma if e.sigma > 0 else 1.0)
    return make_reward(a.reward or e.reward, sigma)


def _one_run(env: Environment, run: int) -> dict:
    cfg = env.cfg
    inst_seq = run_streams(cfg.run.seed, run)
    instance, agent_prior = env.draw(inst_seq[0])
    likelihood = _agent_likelihood(cfg)
    a = cfg.agent
    hp = {"mode": a.mode, "latents": a.latents, "glm_ridge": a.glm_ridge, "lints_prior": a.lints_prior,
          "lints_scale": a.lints_scale, "lints_samples": env.lints_samples, "alpha": a.alpha,
          "ridge": a.ridge, "hierts_eps": a.hierts_eps, "inflation": a.inflation}
    if hp["lints_prior"] == "auto" and env.lints_samples is not None:
        hp["lints_prior"] = "empirical"
    out = {}
    for name in a.names:
        # every agent sees the same contexts, reward noise and agent stream
        _, ctx_rng, rew_rng, agent_rng = run_streams(cfg.run.seed, run)
        agent = make_agent(name, K=instance.K, d=instance.d, rng=agent_rng, prior=agent_prior,
                           reward=likelihood, instance=instance, **hp)
        actions, regret = simulate(instance, agent, cfg.run.n, ctx_rng, rew_rng)
        out[name] = RegretTrace(run, actions, regret)
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: dict   # agent -> list[RegretTrace] ordered by run

    def aggregate(self, agent: str) -> dict:
        return aggregate_traces(self.traces[agent])

    def final_mean(self, agent: str) -> float:
        return float(np.mean([t.cum_regret[-1] for t in self.traces[agent]]))


def aggregate_traces(traces) -> dict:
    R = np.array([t.regret for t in traces])
    C = np.cumsum(R, axis=1)
    runs = R.shape[0]

    def stderr(M):
        if runs < 2:
            return np.zeros(M.shape[1])
        return M.std(axis=0, ddof=1) / np.sqrt(runs)

    return {"mean_regret": R.mean(0), "stderr": stderr(R), "mean_cum": C.mean(0), "stderr_cum": stderr(C)}


def run_experiment(cfg: ExperimentConfig, env: Environment | None = None) -> ExperimentResult:
    cfg.validate()
    env = build_environment(cfg) if env is None else env
    runs = range(cfg.run.runs)
    if cfg.run.jobs > 1 and cfg.run.runs > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.run.jobs, cfg.run.runs)) as pool:
            results = list(pool.map(partial(_one_run, env), runs))
    else:
        results = [_one_run(env, r) for r in runs]
    traces = {name: [res[name] for res in results] for name in cfg.agent.names}
    return ExperimentResult(cfg, traces)


def _num(x) -> str:
    """Shortest round-tripping decimal form."""
    return repr(float(x))


def write_results(result: ExperimentResult, out_dir) -> list[Path]:
    """One trace CSV and one aggregate CSV per agent plus the resolved config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, traces in result.traces.items():
        path = out / f"{name}.csv"
        with open(path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            for tr in traces:
                for t, (a, r, c) in enumerate(zip(tr.actions, tr.regret, tr.cum_regret)):
                    fh.write(f"{tr.run},{t},{a},{_num(r)},{_num(c)}\n")
        written.append(path)
        agg = aggregate_traces(traces)
        path = out / f"{name}_aggregate.csv"
        with open(path, "w") as fh:
            fh.write(AGGREGATE_HEADER + "\n")
            for t in range(len(agg["mean_regret"])):
                row = [agg[k][t] for k in ("mean_regret", "stderr", "mean_cum", "stderr_cum")]
                fh.write(f"{t}," + ",".join(_num(v) for v in row) + "\n")
        written.append(path)
    path = out / "config.json"
    path.write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

SWEEP_VARS = ("K", "L", "d", "pretrain_samples")


@dataclass
class SweepRow:
    value: object
    regret_a: float
    regret_b: float
    ratio: float


def regret_ratio_sweep(template: ExperimentConfig, var: str, values, agents=("lints", "dts")) -> list[SweepRow]:
    """Final cumulative regret ratio agents[0] / agents[1] for each value of ``var``."""
    if var not in SWEEP_VARS:
        raise ConfigError(f"sweep variable must be one of {SWEEP_VARS}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for v in values:
        cfg = copy.deepcopy(template)
        key = var
        if var == "L" and cfg.env.kind in ("swissroll", "movielens"):
            key = "pretrain_L"
        setattr(cfg.env, key, v)
        if var == "d" and cfg.env.active is not None:
            cfg.env.active = None
        if var == "L" and cfg.env.active is not None and len(cfg.env.active) != v:
            cfg.env.active = None
        names = list(dict.fromkeys(agents))
        cfg.agent.names = names
        res = run_experiment(cfg)
        ra, rb = res.final_mean(agents[0]), res.final_mean(agents[1])
        rows.append(SweepRow(v, ra, rb, ra / max(rb, RATIO_FLOOR)))
    return rows


def write_sweep(rows, path, agents=("lints", "dts")) -> None:
    with open(path, "w") as fh:
        fh.write(f"value,regret_{agents[0]},regret_{agents[1]},ratio\n")
        for r in rows:
            fh.write(f"{r.value},{_num(r.regret_a)},{_num(r.regret_b)},{_num(r.ratio)}\n")


# --------------------------------------------------------------------------
# regret bounds
# --------------------------------------------------------------------------

BOUND_VARIANTS = ("dts", "dts_sparse", "lints", "hierts1", "hierts2")


@dataclass
class BoundParams:
    n: int
    d: int
    K: int
    L: int
    sigma: float
    sigmas: list            # sigma_1 .. sigma_{L+1}
    delta: float | None = None
    active: list | None = None
    c: float = 1.0

    def resolved_delta(self) -> float:
        return 1.0 / self.n if self.delta is None else self.delta

    def validate(self) -> None:
        for key in ("n", "d", "K", "L"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if len(self.sigmas) != self.L + 1:
            raise ValueError(f"need L + 1 = {self.L + 1} level scales, got {len(self.sigmas)}")
        if any(not s > 0 for s in self.sigmas):
            raise ValueError("level scales must be positive")
        if not 0 < self.resolved_delta() < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.active is not None:
            if len(self.active) != self.L:
                raise ValueError(f"need {self.L} sparsity dimensions")
            if any(not 1 <= a <= self.d for a in self.active):
                raise ValueError("sparsity dimensions must lie in 1..d")


@dataclass
class BoundResult:
    variant: str
    value: float
    terms: dict


def compute_bound(p: BoundParams, variant: str = "dts") -> BoundResult:
    p.validate()
    if variant not in BOUND_VARIANTS:
        raise ValueError(f"variant must be one of {BOUND_VARIANTS}")
    s2 = [s * s for s in p.sigmas]      # s2[l - 1] = sigma_l^2
    n, d, K, L = p.n, p.d, p.K, p.L
    if variant == "lints":
        value = math.sqrt(n * d * K * (s2[0] + sum(s2[1:])))
        return BoundResult(variant, value, {})
    if variant == "hierts1":
        value = math.sqrt(n * d * (K * sum(s2[:L]) + L * s2[L]))
        return BoundResult(variant, value, {})
    if variant == "hierts2":
        value = math.sqrt(n * d * (K * s2[0] + sum(s2[1:])))
        return BoundResult(variant, value, {})
    if variant == "dts_sparse" and p.active is None:
        raise ValueError("dts_sparse needs sparsity dimensions")
    delta = p.resolved_delta()
    smax2 = max(1.0 + v / p.sigma**2 for v in s2)
    c0 = s2[0] / math.log(1.0 + s2[0])
    r_act = c0 * d * K * math.log(1.0 + n * s2[0] / d)
    r_lat = []
    for l in range(1, L + 1):
        dl = p.active[l - 1] if variant == "dts_sparse" else d
        cl = s2[l] * smax2**l / math.log(1.0 + s2[l])
        r_lat.append(cl * dl * math.log(1.0 + s2[l] / s2[l - 1]))
    main = math.sqrt(2.0 * n * (r_act + sum(r_lat)) * math.log(1.0 / delta))
    tail = p.c * n * delta
    terms = {"sigma_max_sq": smax2, "c0": c0, "R_act": r_act, "R_lat": r_lat,
             "delta": delta, "sqrt_term": main, "tail": tail}
    return BoundResult(variant, main + tail, terms)


# --------------------------------------------------------------------------
# posterior approximation quality
# --------------------------------------------------------------------------

@dataclass
class QualityReport:
    mean_l2: float
    cov_fro: float
    exact_mean: np.ndarray
    exact_cov: np.ndarray
    approx_mean: np.ndarray
    approx_cov: np.ndarray
    analytic: bool


def gaussian_as_diffusion(cov) -> DiffusionPrior:
    """N(0, cov) written as a one-step linear diffusion (W = I, cov split in half)."""
    cov = np.asarray(cov, dtype=float)
    return linear_prior([np.eye(cov.shape[0])], [cov / 2.0], cov / 2.0)


def posterior_quality_report(true_prior, learned_prior: DiffusionPrior, n: int, seed: int = 0,
                             sigma: float = 1.0, n_samples: int = 10_000) -> QualityReport:
    """Exact conjugate posterior vs the diffusion-prior posterior on one data stream.

    ``true_prior`` is a Gaussian-like object with ``mean`` and ``cov``. With a
    linear learned prior the approximate moments are computed analytically;
    otherwise they are fitted to ``n_samples`` hierarchical samples.
    """
    mu0 = np.asarray(true_prior.mean, dtype=float)
    S0 = as_covariance(true_prior.cov, mu0.size)
    d = mu0.size
    if learned_prior.d != d:
        raise ValueError("priors disagree on dimension")
    rng = np.random.default_rng(seed)
    theta = rng.multivariate_normal(mu0, S0)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    y = X @ theta + sigma * rng.standard_normal(n)
    # exact conjugate posterior
    P0 = np.linalg.inv(S0)
    Pn = P0 + X.T @ X / sigma**2
    exact_cov = symmetrize(np.linalg.inv(Pn))
    exact_mean = exact_cov @ (P0 @ mu0 + X.T @ y / sigma**2)
    # diffusion-prior posterior
    obs = ObservationLog(d)
    for x, v in zip(X, y):
        obs.append(x, v)
    stats = fit(obs, make_reward("linear", sigma)) if n else ActionStats.empty(d)
    chain = chain_update(learned_prior, [stats])
    if chain.mode == "linear":
        approx_mean = marginal_mean(chain, 0)
        approx_cov = marginal_covariance(chain, 0).Sigma_check
        analytic = True
    else:
        _, thetas = hierarchical_sample(chain, rng, size=n_samples)
        samples = thetas[:, 0, :]
        approx_mean = samples.mean(0)
        approx_cov = np.atleast_2d(np.cov(samples, rowvar=False))
        analytic = False
    return QualityReport(float(np.linalg.norm(exact_mean - approx_mean)),
                         float(np.linalg.norm(exact_cov - approx_cov)),
                         exact_mean, exact_cov, approx_mean, approx_cov, analytic)


def default_jobs() -> int:
    try:
        return max(len(os.sched_getaffinity(0)), 1)
    except AttributeError:
        return os.cpu_count() or 1
