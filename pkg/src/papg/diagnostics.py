"""Quantities and inequality checks over completed traces.

Everything here is a pure function of an immutable Trace plus the problem
that generated it. Checks return margins (worst violation magnitudes), not
just booleans, so tolerance regressions stay visible.
"""

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import assemble_local_view


def local_view(trace, i, t):
    """Worker i's assembled view at clock t, or None if no delay row exists."""
    row = trace.schedule.delays.get((t, i))
    if row is None:
        return None
    return assemble_local_view(trace.history, row, i, t)


# ---------------------------------------------------------------------------
# Gap quantities and the error-bound recursion


def gap_A(trace, F_star):
    """A(t) = F(x(t)) - F*."""
    return trace.F - F_star


def gap_B(trace, t, s=None):
    """Windowed squared step sum: sum_{k=(t-s-1)_+}^{t-1} ||x(k+1)-x(k)||^2."""
    s = trace.schedule.s if s is None else s
    lo = max(t - s - 1, 0)
    return float(np.sum(trace.step_norms[lo:t] ** 2))


def gap_B_series(trace, s=None):
    return np.array([gap_B(trace, t, s) for t in range(trace.T + 1)])


def eb_coefficients(L, p, s, kappa, eta):
    """Coefficients of the gap recursion A <= a_eta B(t+s+1) + b B(t)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    b = 8.0 * p * s * L**2 + 4.0 * p * s * kappa * L**2 * (L + 4.0)
    a = L + 4.0 + b + (2.0 / eta**2) * (2.0 + 4.0 * kappa + kappa * L)
    return a, b


def check_gap_recursion(trace, F_star, L, kappa=None, burn_in=0.5):
    """Margins of the two gap recursions at every t with t+s+1 <= T.

    first_margin[t] >= 0 certifies
        A(t+s+1) <= A(t) - (1/eta - L - 2sL sqrt(p)) B(t+s+1)/2 + sL sqrt(p) B(t)/2,
    which needs no kappa and should hold on every valid run. second_margin
    (requires kappa) certifies A(t+s+1) <= a_eta B(t+s+1) + b B(t) and is
    advisory before the burn-in clock.
    """
    s, p, eta = trace.schedule.s, trace.schedule.p, trace.eta
    A = gap_A(trace, F_star)
    B = gap_B_series(trace)
    ts = np.arange(0, trace.T - s)
    first = np.empty(len(ts))
    for t in ts:
        rhs = (
            A[t]
            - 0.5 * (1.0 / eta - L - 2.0 * s * L * math.sqrt(p)) * B[t + s + 1]
            + 0.5 * s * L * math.sqrt(p) * B[t]
        )
        first[t] = rhs - A[t + s + 1]
    out = {"t": ts, "first_margin": first, "burn_in_clock": int(burn_in * trace.T)}
    if kappa is not None:
        a_eta, b = eb_coefficients(L, p, s, kappa, eta)
        second = np.array([a_eta * B[t + s + 1] + b * B[t] - A[t + s + 1] for t in ts])
        out["second_margin"] = second
        out["a_eta"], out["b"] = a_eta, b
    return out


# ---------------------------------------------------------------------------
# Subgradient residuals (critical-point certificates)


def subgradient_residuals(trace, problem):
    """Residual ||u(t+1) + grad f(x(t+1))|| and its delay bound, per step.

    u_i is the prox optimality subgradient at worker i's active clocks and is
    carried over across skipped clocks. Entries are defined from the first
    clock at which every worker has updated at least once; earlier steps are
    masked out.
    """
    layout = problem.layout
    s, p, eta = trace.schedule.s, trace.schedule.p, trace.eta
    L = problem.loss.L
    T = trace.T
    u = [None] * p
    residual = np.full(T, np.nan)
    bound = np.full(T, np.nan)
    defined = np.zeros(T, dtype=bool)
    coeff = math.sqrt(p) / eta + 2.0 * L
    for t in range(T):
        x_t = trace.history.iterate(t)
        x_next = trace.history.iterate(t + 1)
        for i in trace.schedule.active[t]:
            sl = layout.slice(i)
            view = local_view(trace, i, t)
            grad_i = problem.loss.gradient(view)[sl]
            u[i] = -(x_next[sl] - x_t[sl]) / eta - grad_i
        if all(ui is not None for ui in u):
            full_u = np.concatenate(u)
            residual[t] = np.linalg.norm(full_u + problem.loss.gradient(x_next))
            lo = max(t - 2 * s, 0)
            bound[t] = coeff * float(np.sum(trace.step_norms[lo : t + 1]))
            defined[t] = True
    return {"residual": residual, "bound": bound, "defined": defined}


def subgradient_residual(trace, problem, t):
    """Residual and bound for the single step t -> t+1."""
    series = subgradient_residuals(trace, problem)
    return float(series["residual"][t]), float(series["bound"][t])


# ---------------------------------------------------------------------------
# Inconsistency (Lemma-style) checks


def inconsistency_check(trace, step_norms=None):
    """Worst violation of the two local/global inconsistency inequalities.

    For every recorded (t, i):  ||x(t) - x^i(t)|| <= sum of the last s step
    norms, and for consecutive recorded pairs the local step is bounded by
    the window extended to clock t. Slack 1e-12 * (1 + ||x(t)||).
    """
    s = trace.schedule.s
    steps = trace.step_norms if step_norms is None else np.asarray(step_norms, float)
    worst_incon = 0.0
    worst_local = 0.0
    for t in range(trace.T):
        x_t = trace.history.iterate(t)
        slack = 1e-12 * (1.0 + np.linalg.norm(x_t))
        window = float(np.sum(steps[max(t - s, 0) : t]))
        window_next = float(np.sum(steps[max(t - s, 0) : t + 1]))
        for i in trace.schedule.active[t]:
            view = local_view(trace, i, t)
            lhs = np.linalg.norm(x_t - view)
            worst_incon = max(worst_incon, lhs - window - slack)
            if t + 1 < trace.T and i in trace.schedule.active[t + 1]:
                view_next = local_view(trace, i, t + 1)
                lhs2 = np.linalg.norm(view_next - view)
                worst_local = max(worst_local, lhs2 - window_next - slack)
    return {"incon_worst": worst_incon, "local_diff_worst": worst_local}


def square_sum_check(trace, problem, F_star):
    """Measured sum of squared steps against its theoretical ceiling.

    Ceiling: 2 (F(x(0)) - F*) / (1/eta - L - 2 sqrt(p) L s), meaningful only
    when the step size satisfies the strict rule (denominator positive).
    """
    s, p, eta = trace.schedule.s, trace.schedule.p, trace.eta
    L = problem.loss.L
    denom = 1.0 / eta - L - 2.0 * math.sqrt(p) * L * s
    measured = float(np.sum(trace.step_norms**2))
    ceiling = 2.0 * (trace.F[0] - F_star) / denom if denom > 0 else np.inf
    return {"measured": measured, "ceiling": ceiling, "margin": ceiling - measured}


# ---------------------------------------------------------------------------
# Decrease, residual, and rate estimates


def sufficient_decrease(trace, tail_frac=0.5):
    """Largest alpha with F(x(t+1)) <= F(x(t)) - alpha ||step||^2 on the tail.

    Returns None when every tail step is (numerically) zero: the property is
    vacuous on a stationary trace.
    """
    start = int(trace.T * (1.0 - tail_frac))
    ratios = []
    for t in range(start, trace.T):
        d = trace.step_norms[t]
        if d <= 1e-15 * (1.0 + abs(trace.F[t])):
            continue
        ratios.append((trace.F[t] - trace.F[t + 1]) / d**2)
    return min(ratios) if ratios else None


def prox_residual(problem, x):
    """||x - prox_g(x - grad f(x))|| at unit step; zero iff prox-fixed point."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - problem.prox_gradient_point(x, 1.0)))


def rate_fit(A_series, s, burn_in=0.5, floor=1e-14):
    """Geometric fit of the periodically sampled gap A(r(s+1)) ~ C1 rho^r.

    Least squares on log A over the post-burn-in periods, stopping at the
    first value below the floor. Needs at least 5 usable points.
    """
    A = np.asarray(A_series, dtype=float)
    clocks = np.arange(0, len(A), s + 1)
    r = np.arange(len(clocks))
    vals = A[clocks]
    usable = len(vals)
    for k, v in enumerate(vals):
        if v < floor:
            usable = k
            break
    r, vals, clocks = r[:usable], vals[:usable], clocks[:usable]
    keep = clocks >= burn_in * (len(A) - 1)
    r, vals = r[keep], vals[keep]
    if len(r) < 5:
        raise ValueError(f"rate fit needs >= 5 usable points, got {len(r)}")
    logv = np.log(vals)
    slope, intercept = np.polyfit(r, logv, 1)
    pred = slope * r + intercept
    ss_res = float(np.sum((logv - pred) ** 2))
    ss_tot = float(np.sum((logv - np.mean(logv)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return {"C1": math.exp(intercept), "rho": math.exp(slope), "r_squared": r2, "points": len(r)}


def prox_lipschitz(trace, problem, eta=None):
    """Lipschitz estimate of the displacement map along the trajectory.

    Delta_eta(x) = prox_g(x - eta grad f(x)) - x, evaluated at consecutive
    local views (clocks where the worker has rows at both t and t+1). The
    eta of the displacement map may differ from the trace's step size so the
    same trajectory pairs can probe several eta values.
    """
    eta = trace.eta if eta is None else eta
    p = trace.schedule.p
    worst = 0.0
    pairs = 0
    for i in range(p):
        for t in range(trace.T - 1):
            if (t, i) not in trace.schedule.delays or (t + 1, i) not in trace.schedule.delays:
                continue
            v0 = local_view(trace, i, t)
            v1 = local_view(trace, i, t + 1)
            dx = np.linalg.norm(v1 - v0)
            if dx <= 1e-14 * (1.0 + np.linalg.norm(v0)):
                continue
            d0 = problem.prox_gradient_point(v0, eta) - v0
            d1 = problem.prox_gradient_point(v1, eta) - v1
            worst = max(worst, float(np.linalg.norm(d1 - d0) / dx))
            pairs += 1
    return {"L_eta": worst, "pairs": pairs}


def grad_lipschitz_prox_bound(eta, L_f, L_g):
    """Closed-form ceiling eta (L_f + L_g) / (1 - eta L_g), for eta L_g < 1."""
    if eta * L_g >= 1:
        raise ValueError("bound requires eta * L_g < 1")
    return eta * (L_f + L_g) / (1.0 - eta * L_g)


def support_stability(trace, blocks=None, start=0):
    """Smallest clock from which the nonzero pattern never changes.

    Restricted to the given block indices (default: all). Returns None when
    the support is still changing at the final step ("not stabilized").
    """
    layout = trace.history.layout
    if blocks is None:
        idx = np.arange(layout.d)
    else:
        idx = np.concatenate([np.arange(layout.offsets[b], layout.offsets[b + 1]) for b in blocks])
    supports = [trace.history.iterate(t)[idx] != 0 for t in range(start, trace.T + 1)]
    t0 = 0
    for t in range(len(supports) - 1, 0, -1):
        if not np.array_equal(supports[t], supports[t - 1]):
            t0 = t
            break
    t0 += start
    if t0 >= trace.T:
        return None
    return t0


def finite_length(trace, tail_window=200):
    """Trajectory length diagnostics for the Cauchy / finite-length property.

    Reports the running partial sums of step norms, the largest single step
    and the summed increment over the final window, and checks that the
    local-view trajectory length is within the (2s+1) factor of the global
    one wherever consecutive views are recorded.
    """
    s = trace.schedule.s
    partial = np.cumsum(trace.step_norms)
    tail = trace.step_norms[-tail_window:]
    local_sum = 0.0
    local_pairs = 0
    for i in range(trace.schedule.p):
        for t in range(trace.T - 1):
            if (t, i) in trace.schedule.delays and (t + 1, i) in trace.schedule.delays:
                local_sum += np.linalg.norm(local_view(trace, i, t + 1) - local_view(trace, i, t))
                local_pairs += 1
    global_sum = float(partial[-1])
    return {
        "total_length": global_sum,
        "tail_max_step": float(np.max(tail)),
        "tail_sum": float(np.sum(tail)),
        "local_sum": local_sum,
        "local_pairs": local_pairs,
        "local_factor_margin": (2 * s + 1) * trace.schedule.p * global_sum - local_sum,
    }


def theorem_period_constant(r, s):
    """C = (r^{s+1} - 1)/(r - 1) for r > 1; exceeds s+1 whenever s > 0."""
    if r <= 1:
        raise ValueError("need r > 1")
    if s < 0:
        raise ValueError("need s >= 0")
    return (r ** (s + 1) - 1.0) / (r - 1.0)


# ---------------------------------------------------------------------------
# Reference solutions and empirical constants


def reference_solution(problem, tol=1e-12, max_iters=500_000):
    """High-precision serial prox-gradient solve; F* oracle for convex runs.

    Iterates at eta = 0.9/L until the unit-step residual drops below tol.
    """
    eta = 0.9 / problem.loss.L
    x = np.zeros(problem.layout.d)
    for k in range(max_iters):
        x = problem.prox_gradient_point(x, eta)
        if k % 25 == 0 and prox_residual(problem, x) <= tol:
            break
    else:
        raise RuntimeError(f"reference solve did not reach residual {tol} in {max_iters} iters")
    return x, problem.objective(x)


def kappa_estimate(trace, problem, x_star, tail_frac=0.5):
    """Empirical error-bound constant max dist(x(t), x*)/residual(x(t)).

    Valid for unique-minimizer desk instances where x* approximates the
    solution set. Labeled empirical; used to instantiate the recursion
    coefficients only.
    """
    start = int(trace.T * (1.0 - tail_frac))
    best = 0.0
    for t in range(start, trace.T + 1):
        x = trace.history.iterate(t)
        r = prox_residual(problem, x)
        if r <= 1e-13:
            continue
        best = max(best, float(np.linalg.norm(x - x_star)) / r)
    return best


# ---------------------------------------------------------------------------
# Aggregate report


@dataclass
class RunReport:
    """Derived series, estimates, and pass/fail verdicts for one run."""

    horizon: int = 0
    eta: float = 0.0
    s: int = 0
    p: int = 0
    F_star: float = None
    F_star_kind: str = "reference"  # "reference" (certified solve) or "best_observed"
    kappa: float = None
    alpha_hat: float = None
    rate: dict = None
    prox_lipschitz: dict = None
    finite_length: dict = None
    checks: dict = field(default_factory=dict)

    def record(self, name, passed, worst, detail=""):
        self.checks[name] = {"pass": bool(passed), "worst_violation": float(worst), "detail": detail}

    @property
    def hard_failures(self):
        return [k for k, v in self.checks.items() if not v["pass"]]

    def to_json(self, path=None):
        payload = asdict(self)
        text = json.dumps(payload, indent=2, sort_keys=True, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        return cls(**payload)


def build_report(trace, problem, F_star=None, F_star_kind="reference", kappa=None, burn_in=0.5):
    """Run every applicable check on a trace and collect a RunReport.

    Hard invariants (inconsistency bounds, subgradient bound, first gap
    recursion, square-summability ceiling) set pass/fail; estimates
    (alpha, rate, prox Lipschitz) are recorded as data.
    """
    L = problem.loss.L
    report = RunReport(
        horizon=trace.T,
        eta=trace.eta,
        s=trace.schedule.s,
        p=trace.schedule.p,
        F_star=F_star,
        F_star_kind=F_star_kind,
        kappa=kappa,
    )
    inc = inconsistency_check(trace)
    report.record("lemma_inconsistency", inc["incon_worst"] <= 0, inc["incon_worst"])
    report.record("lemma_local_diff", inc["local_diff_worst"] <= 0, inc["local_diff_worst"])

    sub = subgradient_residuals(trace, problem)
    gap = sub["residual"][sub["defined"]] - sub["bound"][sub["defined"]]
    worst = float(np.max(gap)) if len(gap) else 0.0
    report.record("subgradient_bound", worst <= 1e-10, worst)

    if F_star is not None:
        rec = check_gap_recursion(trace, F_star, L, kappa=kappa, burn_in=burn_in)
        lo = trace.schedule.s + 1
        first = rec["first_margin"][lo:]
        worst1 = float(-np.min(first)) if len(first) else 0.0
        report.record("gap_recursion_first", worst1 <= 1e-10, worst1)
        if kappa is not None:
            mask = rec["t"] >= rec["burn_in_clock"]
            second = rec["second_margin"][mask]
            worst2 = float(-np.min(second)) if len(second) else 0.0
            report.record("gap_recursion_second", worst2 <= 1e-10, worst2)
        if trace.strict and not trace.step_size_warning:
            sq = square_sum_check(trace, problem, F_star)
            report.record("square_summable_ceiling", sq["margin"] >= -1e-8, max(0.0, -sq["margin"]))
        if np.min(gap_A(trace, F_star)) < -1e-8 and F_star_kind == "reference":
            report.record("gap_nonnegative", False, float(-np.min(gap_A(trace, F_star))))
        else:
            report.record("gap_nonnegative", True, 0.0)
        try:
            report.rate = rate_fit(gap_A(trace, F_star), trace.schedule.s, burn_in=burn_in)
        except ValueError:
            report.rate = None
    report.alpha_hat = sufficient_decrease(trace)
    report.prox_lipschitz = prox_lipschitz(trace, problem)
    report.finite_length = finite_length(trace, tail_window=min(200, trace.T))
    return report
