"""Differentially private hyperparameter tuning by random repetition."""

from dptune import accountant, kdist, kernels, oracle, tuner, utility
from dptune.accountant import ApproxDp, PureDp, RdpTable, TuningBound, ZCdp, tuning_bound
from dptune.kdist import Geometric, Logarithmic, PointMass, Poisson, Truncated, TruncatedNegativeBinomial

__version__ = "0.1.0"

__all__ = [
    "accountant", "kdist", "kernels", "oracle", "tuner", "utility",
    "ApproxDp", "PureDp", "RdpTable", "TuningBound", "ZCdp", "tuning_bound",
    "Geometric", "Logarithmic", "PointMass", "Poisson", "Truncated", "TruncatedNegativeBinomial",
]
