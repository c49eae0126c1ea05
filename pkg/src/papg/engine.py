"""Deterministic execution of the partially asynchronous recursion.

One clock advances the whole system: every worker active at t reads a frozen
snapshot of the clock-t history through its delay row, takes a prox-gradient
step on its own block, and inactive workers copy their block unchanged.
Identical inputs always produce bit-identical traces (fixed reduction order,
single thread).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import schedule as sched
from .core import History, assemble_local_view, check_model_vector, max_step_size
from .prox import prox_block, prox_map, regularizer_value

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Iterates left the finite / bounded regime."""

    def __init__(self, clock, message):
        super().__init__(f"divergence at clock {clock}: {message}")
        self.clock = clock


@dataclass(frozen=True)
class Problem:
    """Composite objective F = f + sum_i g_i over a block layout."""

    loss: object
    regs: tuple
    layout: object

    def __post_init__(self):
        if len(self.regs) != self.layout.p:
            raise ValueError(f"{len(self.regs)} regularizers for {self.layout.p} blocks")
        if self.loss.d != self.layout.d:
            raise ValueError(f"loss dimension {self.loss.d} != layout dimension {self.layout.d}")

    @property
    def p(self):
        return self.layout.p

    def objective(self, x):
        return self.loss.value(x) + regularizer_value(self.regs, x, self.layout)

    def prox_gradient_point(self, x, eta):
        """One full prox-gradient application prox_g(x - eta grad f(x))."""
        return prox_map(self.regs, x - eta * self.loss.gradient(x), eta, self.layout)


@dataclass
class Trace:
    """Everything a theorem check needs about one run."""

    history: History
    schedule: object
    eta: float
    F: np.ndarray  # F(x(t)), length T+1
    step_norms: np.ndarray  # ||x(t+1)-x(t)||, length T
    max_staleness: np.ndarray  # per clock, max over active workers, length T
    strict: bool
    step_size_warning: bool = False
    _residuals: np.ndarray = field(default=None, repr=False)

    @property
    def T(self):
        return self.schedule.T

    def final(self):
        return self.history.iterate(self.T)

    def residuals(self, problem):
        """Unit-step prox-gradient residual at every recorded iterate."""
        if self._residuals is None:
            vals = np.empty(self.T + 1)
            for t in range(self.T + 1):
                x = self.history.iterate(t)
                vals[t] = np.linalg.norm(x - problem.prox_gradient_point(x, 1.0))
            self._residuals = vals
        return self._residuals


def _check_step(problem, s, eta, strict):
    if eta <= 0:
        raise ValueError("step size must be positive")
    bound = max_step_size(problem.loss.L, problem.p, s)
    if eta >= bound:
        if strict:
            raise ValueError(
                f"strict mode: eta={eta} >= 1/(L(1+2 sqrt(p) s)) = {bound}"
            )
        return True  # permissive run beyond the guarantee; flagged in the trace
    return False


def run_mpapg(problem, schedule_obj, eta, x0, strict=True, full_trace=True):
    """Execute the partially asynchronous recursion against a schedule.

    strict refuses step sizes at or above the convergence bound; permissive
    runs beyond it are allowed but flagged. full_trace keeps every iterate
    (diagnostics); otherwise only the staleness window is retained.
    """
    violations = sched.validate(schedule_obj, schedule_obj.s)
    if violations:
        raise ValueError(
            f"schedule fails validation ({len(violations)} violations); first: {violations[0]}"
        )
    warning = _check_step(problem, schedule_obj.s, eta, strict)
    layout = problem.layout
    x = check_model_vector(x0, layout).copy()
    window = None if full_trace else schedule_obj.s + 2
    history = History(x, layout, window=window)
    T = schedule_obj.T
    F = np.empty(T + 1)
    step_norms = np.empty(T)
    staleness = np.zeros(T, dtype=int)
    F[0] = problem.objective(x)
    for t in range(T):
        x_new = x.copy()
        worst = 0
        for i in schedule_obj.active[t]:
            row = schedule_obj.delays[(t, i)]
            view = assemble_local_view(history, row, i, t)
            sl = layout.slice(i)
            grad_i = problem.loss.gradient(view)[sl]
            x_new[sl] = prox_block(problem.regs[i], x[sl] - eta * grad_i, eta)
            worst = max(worst, schedule_obj.max_staleness(t, i))
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(t, "non-finite iterate")
        norm = float(np.linalg.norm(x_new))
        if norm > DIVERGENCE_NORM:
            raise DivergenceError(t, f"iterate norm {norm:.3e} exceeds {DIVERGENCE_NORM:.0e}")
        step_norms[t] = np.linalg.norm(x_new - x)
        staleness[t] = worst
        history.append(x_new)
        x = x_new
        F[t + 1] = problem.objective(x)
    return Trace(
        history=history,
        schedule=schedule_obj,
        eta=eta,
        F=F,
        step_norms=step_norms,
        max_staleness=staleness,
        strict=strict,
        step_size_warning=warning,
    )


def run_serial_pg(problem, eta, T, x0, strict=True, full_trace=True):
    """Classical forward-backward iteration x <- prox_g(x - eta grad f(x)).

    Coincides bit-for-bit with run_mpapg under the synchronous schedule: both
    paths share the per-block prox kernels and gradient slicing.
    """
    if T < 1:
        raise ValueError("need T >= 1")
    warning = _check_step(problem, 0, eta, strict)
    layout = problem.layout
    x = check_model_vector(x0, layout).copy()
    history = History(x, layout, window=None if full_trace else 2)
    F = np.empty(T + 1)
    step_norms = np.empty(T)
    F[0] = problem.objective(x)
    for t in range(T):
        grad = problem.loss.gradient(x)
        x_new = np.empty_like(x)
        for i in range(layout.p):
            sl = layout.slice(i)
            x_new[sl] = prox_block(problem.regs[i], x[sl] - eta * grad[sl], eta)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(t, "non-finite iterate")
        if float(np.linalg.norm(x_new)) > DIVERGENCE_NORM:
            raise DivergenceError(t, "iterate norm exceeds divergence guard")
        step_norms[t] = np.linalg.norm(x_new - x)
        history.append(x_new)
        x = x_new
        F[t + 1] = problem.objective(x)
    return Trace(
        history=history,
        schedule=sched.synchronous(layout.p, T),
        eta=eta,
        F=F,
        step_norms=step_norms,
        max_staleness=np.zeros(T, dtype=int),
        strict=strict,
        step_size_warning=warning,
    )


def replay(schedule_obj, problem, eta, x0, strict=True, full_trace=True):
    """Re-execute a materialized schedule; bit-identical by determinism."""
    return run_mpapg(problem, schedule_obj, eta, x0, strict=strict, full_trace=full_trace)


# ---------------------------------------------------------------------------
# Trace persistence


def save_trace(trace, outdir, problem=None):
    """Write trace.csv, schedule.txt, final_iterate.txt, and iterates.npy.

    The residual column is filled when the problem is supplied, else nan.
    """
    os.makedirs(outdir, exist_ok=True)
    T = trace.T
    res = trace.residuals(problem) if problem is not None else np.full(T + 1, np.nan)
    with open(os.path.join(outdir, "trace.csv"), "w") as fh:
        fh.write("t,F,step_norm,max_staleness,residual\n")
        for t in range(T + 1):
            step = repr(float(trace.step_norms[t])) if t < T else ""
            stale = str(int(trace.max_staleness[t])) if t < T else ""
            fh.write(f"{t},{trace.F[t]!r},{step},{stale},{res[t]!r}\n")
    sched.save(trace.schedule, os.path.join(outdir, "schedule.txt"))
    np.savetxt(os.path.join(outdir, "final_iterate.txt"), trace.final())
    np.save(os.path.join(outdir, "iterates.npy"), trace.history.stacked())


def load_trace_csv(path):
    """Series columns of a persisted trace as a dict of arrays."""
    rows = np.genfromtxt(path, delimiter=",", names=True)
    return {
        "t": rows["t"].astype(int),
        "F": rows["F"],
        "step_norm": rows["step_norm"],
        "max_staleness": rows["max_staleness"],
        "residual": rows["residual"],
    }
