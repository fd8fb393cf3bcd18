"""Training executor: jobs, early stopping, incremental and parallel runs."""

from neunets.trainer.core import (
    TrainJob,
    TrainResult,
    evaluate_fitness,
    predict,
    train,
)
from neunets.trainer.incremental import (
    chain_cut_points,
    incremental_train,
    prefix_graph,
)
from neunets.trainer.parallel import BudgetLedger, JobFailure, run_parallel

__all__ = [
    "TrainJob",
    "TrainResult",
    "evaluate_fitness",
    "predict",
    "train",
    "chain_cut_points",
    "incremental_train",
    "prefix_graph",
    "BudgetLedger",
    "JobFailure",
    "run_parallel",
]
