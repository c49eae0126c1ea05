"""Real concurrent execution with p worker threads and bounded staleness.

Each worker owns one block, broadcasts a versioned copy after every update,
and may compute its clock-t update only once every peer block is known at
some version in [(t-s)_+, t] (admission control). The rule is deadlock free:
the slowest worker never waits. Every worker performs one update per clock,
so the captured schedule always satisfies the frequent-update invariant;
skipped-update patterns are the simulator's job.

The realized delay rows are captured so the deterministic engine can replay
the run; both paths share the gradient and prox kernels, so replay
reproduces the runtime's iterates bit for bit.
"""

import os
import threading
import time

import numpy as np

from .core import History
from .engine import DIVERGENCE_NORM, DivergenceError, Trace, _check_step
from .prox import prox_block
from .schedule import Schedule

WATCHDOG_SECONDS = 30.0


class _SharedStore:
    """Versioned block payloads; single producer per block, any readers."""

    def __init__(self, p):
        self.cond = threading.Condition()
        self.versions = [dict() for _ in range(p)]  # worker -> {clock: payload}
        self.failure = None
        self.worker_clock = [0] * p

    def publish(self, worker, version, payload):
        with self.cond:
            self.versions[worker][version] = payload
            self.worker_clock[worker] = version
            self.cond.notify_all()

    def fail(self, exc):
        with self.cond:
            if self.failure is None:
                self.failure = exc
            self.cond.notify_all()

    def await_window(self, worker, t, s, p):
        """Block until every peer has a version in [(t-s)_+, t]; return rows.

        Returns the freshest version <= t per peer at admission time.
        """
        low = max(t - s, 0)
        deadline = time.monotonic() + WATCHDOG_SECONDS
        row = np.empty(p, dtype=int)
        with self.cond:
            while True:
                if self.failure is not None:
                    raise self.failure
                ready = True
                for j in range(p):
                    if j == worker:
                        row[j] = t
                        continue
                    newest = self.worker_clock[j]
                    if newest < low:
                        ready = False
                        break
                    row[j] = min(newest, t)
                if ready:
                    return row
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    state = ", ".join(f"w{j}@clock {c}" for j, c in enumerate(self.worker_clock))
                    raise RuntimeError(
                        f"watchdog: worker {worker} made no progress at clock {t} "
                        f"(staleness admission bug); worker state: {state}"
                    )
                self.cond.wait(timeout=min(remaining, 0.5))


def run_threaded(problem, p, s, eta, total_clocks, x0, pacing=None, strict=True):
    """Run p concurrent workers for total_clocks updates each.

    pacing maps worker index to a per-clock sleep in seconds, used to
    manufacture staleness in tests. Returns (Trace, captured Schedule).
    """
    layout = problem.layout
    if layout.p != p:
        raise ValueError(f"layout has {layout.p} blocks, expected p={p}")
    if s < 0 or total_clocks < 1:
        raise ValueError("need s >= 0 and total_clocks >= 1")
    warning = _check_step(problem, s, eta, strict)
    pacing = pacing or {}
    x0 = np.asarray(x0, dtype=float)
    store = _SharedStore(p)
    for j in range(p):
        store.versions[j][0] = x0[layout.slice(j)].copy()
    captured = [dict() for _ in range(p)]  # worker -> {t: delay row}

    def work(i):
        sl = layout.slice(i)
        delay = float(pacing.get(i, 0.0))
        xi = store.versions[i][0]
        try:
            for t in range(total_clocks):
                if delay:
                    time.sleep(delay)
                row = store.await_window(i, t, s, p)
                view = np.empty(layout.d)
                for j in range(p):
                    view[layout.slice(j)] = store.versions[j][int(row[j])]
                grad_i = problem.loss.gradient(view)[sl]
                xi = prox_block(problem.regs[i], xi - eta * grad_i, eta)
                if not np.all(np.isfinite(xi)) or np.linalg.norm(xi) > DIVERGENCE_NORM:
                    raise DivergenceError(t, f"worker {i} block diverged")
                captured[i][t] = row
                store.publish(i, t + 1, xi)
        except BaseException as exc:  # propagate to peers and the caller
            store.fail(exc)

    threads = [threading.Thread(target=work, args=(i,), name=f"papg-worker-{i}") for i in range(p)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if store.failure is not None:
        raise store.failure
    schedule_obj = capture_schedule(captured, p=p, s=s, T=total_clocks)
    trace = _collect_trace(problem, store, schedule_obj, eta, total_clocks, strict, warning)
    return trace, schedule_obj


def capture_schedule(captured, p, s, T):
    """Assemble the realized delay rows into a Schedule."""
    active = [tuple(range(p))] * T
    delays = {}
    for i, rows in enumerate(captured):
        if sorted(rows) != list(range(T)):
            raise ValueError(f"worker {i} event log incomplete: {len(rows)}/{T} clocks")
        for t, row in rows.items():
            delays[(t, i)] = np.asarray(row, dtype=int)
    return Schedule(p=p, T=T, s=s, active=active, delays=delays)


def _collect_trace(problem, store, schedule_obj, eta, T, strict, warning):
    layout = problem.layout
    iterates = np.empty((T + 1, layout.d))
    for t in range(T + 1):
        for j in range(layout.p):
            iterates[t, layout.slice(j)] = store.versions[j][t]
    history = History(iterates[0], layout)
    for t in range(1, T + 1):
        history.append(iterates[t])
    F = np.array([problem.objective(iterates[t]) for t in range(T + 1)])
    step_norms = np.linalg.norm(np.diff(iterates, axis=0), axis=1)
    staleness = np.array(
        [max(schedule_obj.max_staleness(t, i) for i in range(layout.p)) for t in range(T)],
        dtype=int,
    )
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


def default_worker_cap():
    """PAPG_THREADS caps the worker count when set."""
    cap = os.environ.get("PAPG_THREADS")
    return int(cap) if cap else None
