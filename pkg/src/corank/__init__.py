"""Corank distributions of random matrices, their Markov chains, and related number theory."""

__version__ = "0.1.0"

from .errors import DomainError
from .qseries import Approx, PGroupType, alpha, aut_order, beta, eta, eta_inf, lambda_m, theta_m, w_m
from .chain import ChainSpec, Dist, ensemble_law, iterate, stationary, tv_distance

__all__ = [
    "Approx", "ChainSpec", "Dist", "DomainError", "PGroupType", "alpha", "aut_order", "beta", "ensemble_law",
    "eta", "eta_inf", "iterate", "lambda_m", "stationary", "theta_m", "tv_distance", "w_m",
]
