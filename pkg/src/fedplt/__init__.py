"""Fed-PLT: federated Peaceman-Rachford splitting with local training.

Agents may participate partially and may train with noisy gradients for privacy.
"""

__version__ = "0.1.0"

from .core import (AgentState, Bernoulli, CostModel, Full, RoundRecord, RunConfig, RunResult, UniformSubset,
                   fedavg_baseline, run)
from .problem import (ConvexityBounds, LocalDataset, NonsmoothSpec, ProblemInstance, RegularizerSpec,
                      generate_logistic_data, logistic_problem, quadratic_problem)
from .solvers import AGD, GD, SGD, Exact, NoisyGD
