"""Model-parallel partially asynchronous proximal gradient solver.

Library layout:

  core         block layouts, iterate history, step-size rule
  prox         per-block proximal operators and a brute-force oracle
  loss         smooth losses (least squares, logistic) with curvature bounds
  schedule     generation/validation/serialization of update schedules
  engine       deterministic simulator, serial baseline, replay
  runtime      real multi-threaded execution with schedule capture
  diagnostics  every convergence quantity and inequality check
  cli          papg run / replay / verify / report
"""

from .core import BlockLayout, History, assemble_local_view, max_step_size, partition
from .engine import DivergenceError, Problem, Trace, replay, run_mpapg, run_serial_pg
from .loss import SmoothLoss, lipschitz_estimate, load_csv, synthetic_lasso
from .prox import Regularizer, prox_block, prox_bruteforce, prox_map
from .runtime import run_threaded
from .schedule import Schedule, adversarial, random_bounded, synchronous, validate

__all__ = [
    "BlockLayout",
    "DivergenceError",
    "History",
    "Problem",
    "Regularizer",
    "Schedule",
    "SmoothLoss",
    "Trace",
    "adversarial",
    "assemble_local_view",
    "lipschitz_estimate",
    "load_csv",
    "max_step_size",
    "partition",
    "prox_block",
    "prox_bruteforce",
    "prox_map",
    "random_bounded",
    "replay",
    "run_mpapg",
    "run_serial_pg",
    "run_threaded",
    "synchronous",
    "synthetic_lasso",
    "validate",
]

__version__ = "0.1.0"
