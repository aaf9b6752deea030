"""Thompson sampling for contextual bandits with diffusion-model priors."""
from .model import (BanditInstance, DiffusionPrior, LinearGaussian, LinearLink, LogisticBernoulli,
                    MlpLink, MlpNet, linear_prior, load_prior, prior_sample, save_prior)
from .posterior import chain_update, hierarchical_sample, marginal_covariance
from .agents import DiffusionTS, LinTS, make_agent

__version__ = "0.1.0"

__all__ = ["BanditInstance", "DiffusionPrior", "LinearGaussian", "LinearLink", "LogisticBernoulli",
           "MlpLink", "MlpNet", "linear_prior", "load_prior", "prior_sample", "save_prior",
           "chain_update", "hierarchical_sample", "marginal_covariance", "DiffusionTS", "LinTS",
           "make_agent"]
