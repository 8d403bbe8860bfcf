"""Deterministic scripted backends over synthetic catalogs, plus the oracle they are checked against."""

from forage.sim.backend import BreachProbePlanner, FaultyBackend, SimEvaluatorBackend, SimPlannerBackend
from forage.sim.oracle import OracleTrajectory, oracle_trajectory
from forage.sim.policy import SimPolicyParams
from forage.sim.universe import HiddenUniverse, gen_universe

__all__ = [
    "BreachProbePlanner",
    "FaultyBackend",
    "HiddenUniverse",
    "OracleTrajectory",
    "SimEvaluatorBackend",
    "SimPlannerBackend",
    "SimPolicyParams",
    "gen_universe",
    "oracle_trajectory",
]
