"""Sensing-interval policies for a half-duplex secondary user over
hyper-exponential primary-user idle times."""

from .cost import CostModel, expected_total_cost, realized_total_cost
from .distributions import HyperExp
from .policies import PolicyParams, derive
from .simulator import ChannelModel, Flags, SensingModel, simulate

__version__ = "0.1.0"

__all__ = [
    "ChannelModel",
    "CostModel",
    "Flags",
    "HyperExp",
    "PolicyParams",
    "SensingModel",
    "derive",
    "expected_total_cost",
    "realized_total_cost",
    "simulate",
]
