"""Freya PAGE / Freya SGD on simulated heterogeneous asynchronous workers."""

from .kernels import BACKEND
from .objectives import (
    FiniteSumObjective,
    LogisticProblem,
    QuadraticProblem,
    full_gradient_reference,
    generate_quadratic,
    load_csv_dataset,
)
from .optimizers import (
    OptimizerReport,
    run_asynchronous_sgd,
    run_freya_page,
    run_freya_sgd,
    run_gd_baselines,
    run_rennala_sgd,
    run_soviet_page,
)
from .harness import run_experiment
from .simclock import NoProgressError, RunTrace, SimClock, WorkerTimeModel
from .theory import equilibrium_time, theory_report

__version__ = "0.1.0"
