"""Command-line front end: run, replay, verify, report.

Exit codes: 0 success, 2 config/parse error, 3 divergence abort,
4 hard invariant violation.
"""

import json
import os
import sys
from dataclasses import dataclass, asdict

import click
import numpy as np

from . import diagnostics, engine, loss as loss_mod, runtime, schedule as sched
from .core import History, max_step_size, partition
from .engine import DivergenceError, Problem, Trace
from .prox import KINDS, Regularizer

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_INVARIANT = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed run configuration; to_dict/from_dict round-trip exactly."""

    problem: dict
    regularizer: object  # dict applied to every block, or list per block
    layout: dict
    schedule: dict
    mode: str = "simulate"
    eta: float = None
    eta_frac: float = None
    strict: bool = True
    pacing: dict = None
    out: str = None

    @classmethod
    def from_dict(cls, raw):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg._validate()
        return cfg

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def _validate(self):
        if self.mode not in ("simulate", "threaded", "serial"):
            raise ConfigError(f"mode must be simulate|threaded|serial, got {self.mode!r}")
        if (self.eta is None) == (self.eta_frac is None):
            raise ConfigError("exactly one of eta / eta_frac must be set")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.eta_frac is not None and self.strict and not 0 < self.eta_frac < 1:
            raise ConfigError("eta_frac must lie in (0, 1) in strict mode")
        src = self.problem or {}
        if ("csv" in src) == ("generator" in src):
            raise ConfigError("problem needs exactly one source: csv or generator")
        T = self.schedule.get("T", 0)
        if T < 1:
            raise ConfigError("schedule.T must be >= 1")


def build_problem(cfg):
    """Materialize (Problem, layout) from a parsed config."""
    src = cfg.problem
    kind = src.get("kind", "least_squares")
    if "csv" in src:
        loss = loss_mod.load_csv(src["csv"], kind)
    else:
        gen = src["generator"]
        if kind != "least_squares":
            raise ConfigError("the synthetic generator produces least-squares instances")
        loss, _ = loss_mod.synthetic_lasso(
            n=gen["n"], d=gen["d"], k=gen.get("k", 5), sigma=gen.get("sigma", 0.1), seed=gen.get("seed", 0)
        )
    lay = cfg.layout
    layout = partition(lay.get("d", loss.d), lay["p"], sizes=lay.get("sizes"))
    if layout.d != loss.d:
        raise ConfigError(f"layout d={layout.d} does not match data d={loss.d}")
    regs = cfg.regularizer
    if isinstance(regs, dict):
        regs = [regs] * layout.p
    if len(regs) != layout.p:
        raise ConfigError(f"got {len(regs)} regularizers for p={layout.p} blocks")
    built = []
    for spec in regs:
        if spec.get("kind") not in KINDS:
            raise ConfigError(f"unknown regularizer kind {spec.get('kind')!r}")
        built.append(
            Regularizer(
                kind=spec["kind"],
                weight=spec.get("weight", 0.0),
                lo=spec.get("lo", -np.inf),
                hi=spec.get("hi", np.inf),
            )
        )
    return Problem(loss=loss, regs=tuple(built), layout=layout)


def build_schedule(cfg, p):
    scfg = cfg.schedule
    kind = scfg.get("kind", "synchronous")
    T, s = scfg["T"], scfg.get("s", 0)
    if kind == "synchronous":
        return sched.synchronous(p, T)
    if kind == "random_bounded":
        return sched.random_bounded(p, T, s, scfg.get("seed", 0))
    if kind == "adversarial":
        return sched.adversarial(p, T, s)
    raise ConfigError(f"unknown schedule kind {kind!r}")


def resolve_eta(cfg, problem, s):
    if cfg.eta is not None:
        return cfg.eta
    return cfg.eta_frac * max_step_size(problem.loss.L, problem.p, s)


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    raw.update(overrides or {})
    return RunConfig.from_dict(raw)


def _is_convex(problem):
    return all(reg.convex for reg in problem.regs)


def execute(cfg):
    """Run the configured solver; returns (trace, problem)."""
    problem = build_problem(cfg)
    s = cfg.schedule.get("s", 0)
    eta = resolve_eta(cfg, problem, s)
    if cfg.mode == "serial":
        return engine.run_serial_pg(problem, eta, cfg.schedule["T"], np.zeros(problem.layout.d), strict=cfg.strict), problem
    if cfg.mode == "threaded":
        cap = runtime.default_worker_cap()
        if cap is not None and problem.p > cap:
            raise ConfigError(f"PAPG_THREADS={cap} caps workers below p={problem.p}")
        pacing = {int(k): float(v) for k, v in (cfg.pacing or {}).items()}
        trace, _ = runtime.run_threaded(
            problem, problem.p, s, eta, cfg.schedule["T"], np.zeros(problem.layout.d), pacing=pacing, strict=cfg.strict
        )
        return trace, problem
    schedule_obj = build_schedule(cfg, problem.p)
    return engine.run_mpapg(problem, schedule_obj, eta, np.zeros(problem.layout.d), strict=cfg.strict), problem


def make_report(trace, problem, kappa=None, burn_in=0.5):
    if _is_convex(problem):
        _, f_star = diagnostics.reference_solution(problem)
        kind = "reference"
    else:
        f_star = float(np.min(trace.F))  # relative gap: inf F is not computable here
        kind = "best_observed"
    return diagnostics.build_report(trace, problem, F_star=f_star, F_star_kind=kind, kappa=kappa, burn_in=burn_in)


@click.group()
def main():
    """Partially asynchronous model-parallel proximal gradient toolkit."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["simulate", "threaded", "serial"]), default=None)
@click.option("--eta", type=float, default=None)
@click.option("--eta-frac", type=float, default=None)
@click.option("--s", "s_override", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--strict/--permissive", "strict", default=None)
@click.option("--eb-kappa", type=float, default=None)
@click.option("--burn-in", type=float, default=0.5)
def cmd_run(config_path, mode, eta, eta_frac, s_override, seed, out_dir, strict, eb_kappa, burn_in):
    """Run a configured experiment and write trace + report files."""
    try:
        overrides = {}
        if mode is not None:
            overrides["mode"] = mode
        if eta is not None:
            overrides["eta"] = eta
            overrides["eta_frac"] = None
        if eta_frac is not None:
            overrides["eta_frac"] = eta_frac
            overrides["eta"] = None
        if strict is not None:
            overrides["strict"] = strict
        cfg = load_config(config_path, overrides)
        if s_override is not None:
            cfg.schedule["s"] = s_override
        if seed is not None:
            cfg.schedule["seed"] = seed
        if out_dir is not None:
            cfg.out = out_dir
        if cfg.out is None:
            raise ConfigError("no output directory (config key 'out' or --out)")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        trace, problem = execute(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        sys.exit(EXIT_DIVERGENCE)
    os.makedirs(cfg.out, exist_ok=True)
    engine.save_trace(trace, cfg.out, problem=problem)
    with open(os.path.join(cfg.out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report = make_report(trace, problem, kappa=eb_kappa, burn_in=burn_in)
    report.to_json(os.path.join(cfg.out, "report.json"))
    failures = report.hard_failures
    if failures:
        click.echo(f"invariant violations: {failures}", err=True)
        sys.exit(EXIT_INVARIANT)
    click.echo(f"run complete: {cfg.out} (all {len(report.checks)} checks passed)")


@main.command("replay")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--schedule", "schedule_path", required=True, type=click.Path())
@click.option("--reference", "reference_dir", type=click.Path(), default=None,
              help="Trace directory to compare against (default: schedule file's directory).")
def cmd_replay(config_path, schedule_path, reference_dir):
    """Re-execute a materialized schedule and compare iterates bitwise."""
    try:
        cfg = load_config(config_path)
        schedule_obj = sched.load(schedule_path)
        problem = build_problem(cfg)
        eta = resolve_eta(cfg, problem, schedule_obj.s)
        ref_dir = reference_dir or os.path.dirname(os.path.abspath(schedule_path))
        ref_path = os.path.join(ref_dir, "iterates.npy")
        reference = np.load(ref_path)
    except (ConfigError, ValueError, OSError) as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        trace = engine.replay(schedule_obj, problem, eta, np.zeros(problem.layout.d), strict=cfg.strict)
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        sys.exit(EXIT_DIVERGENCE)
    got = trace.history.stacked()
    if got.shape != reference.shape:
        click.echo(f"shape mismatch: replay {got.shape} vs reference {reference.shape}", err=True)
        sys.exit(EXIT_INVARIANT)
    for t in range(got.shape[0]):
        if not np.array_equal(got[t], reference[t]):
            click.echo(f"DIVERGENT at clock {t}")
            sys.exit(EXIT_INVARIANT)
    click.echo("IDENTICAL")


def load_trace_dir(trace_dir):
    """Rebuild a Trace (plus problem and persisted series) from a run directory."""
    cfg = load_config(os.path.join(trace_dir, "config.json"))
    problem = build_problem(cfg)
    schedule_obj = sched.load(os.path.join(trace_dir, "schedule.txt"))
    iterates = np.load(os.path.join(trace_dir, "iterates.npy"))
    series = engine.load_trace_csv(os.path.join(trace_dir, "trace.csv"))
    if iterates.shape != (schedule_obj.T + 1, problem.layout.d):
        raise ConfigError(
            f"iterates shape {iterates.shape} inconsistent with T={schedule_obj.T}, d={problem.layout.d}"
        )
    history = History(iterates[0], problem.layout)
    for t in range(1, schedule_obj.T + 1):
        history.append(iterates[t])
    eta = resolve_eta(cfg, problem, schedule_obj.s)
    trace = Trace(
        history=history,
        schedule=schedule_obj,
        eta=eta,
        F=np.array([problem.objective(iterates[t]) for t in range(schedule_obj.T + 1)]),
        step_norms=np.linalg.norm(np.diff(iterates, axis=0), axis=1),
        max_staleness=np.array(
            [
                max((schedule_obj.max_staleness(t, i) for i in schedule_obj.active[t]), default=0)
                for t in range(schedule_obj.T)
            ]
        ),
        strict=cfg.strict,
    )
    return trace, problem, series, cfg


@main.command("verify")
@click.argument("trace_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--eb-kappa", type=float, default=None)
@click.option("--burn-in", type=float, default=0.5)
def cmd_verify(trace_dir, eb_kappa, burn_in):
    """Run every diagnostic on a persisted trace directory."""
    try:
        trace, problem, series, cfg = load_trace_dir(trace_dir)
    except (ConfigError, ValueError, OSError) as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    report = make_report(trace, problem, kappa=eb_kappa, burn_in=burn_in)
    # cross-consistency: persisted series vs the persisted iterates; the
    # inconsistency bounds are also re-checked against the recorded step
    # norms, so a tampered iterate cannot hide behind a stale series.
    rec_steps = trace.step_norms
    csv_steps = series["step_norm"][: trace.T]
    worst_steps = float(np.max(np.abs(rec_steps - csv_steps) / (1.0 + np.abs(csv_steps))))
    report.record("trace_series_consistency", worst_steps <= 1e-9, worst_steps)
    inc = diagnostics.inconsistency_check(trace, step_norms=csv_steps)
    report.record("lemma_inconsistency_vs_recorded", inc["incon_worst"] <= 0, inc["incon_worst"])
    report.to_json(os.path.join(trace_dir, "report.json"))
    failures = report.hard_failures
    if failures:
        click.echo(f"invariant violations: {failures}", err=True)
        sys.exit(EXIT_INVARIANT)
    click.echo(f"verify ok: {len(report.checks)} checks passed")


@main.command("report")
@click.argument("report_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_csv", type=click.Path(), default=None,
              help="Plot-ready series CSV (default: series.csv next to the report).")
def cmd_report(report_path, out_csv):
    """Summarize a report JSON; emit plot-ready gap/residual series."""
    report = diagnostics.RunReport.from_json(report_path)
    if not report.checks and report.rate is None:
        click.echo("no checks run")
        return
    click.echo(f"horizon={report.horizon} p={report.p} s={report.s} eta={report.eta:.6g}")
    if report.F_star is not None:
        click.echo(f"F* = {report.F_star:.12g} ({report.F_star_kind})")
    if report.rate:
        click.echo(
            f"rate: rho={report.rate['rho']:.6f} C1={report.rate['C1']:.6g} "
            f"R2={report.rate['r_squared']:.4f} ({report.rate['points']} points)"
        )
    if report.alpha_hat is not None:
        click.echo(f"sufficient decrease alpha = {report.alpha_hat:.6g}")
    if report.prox_lipschitz:
        click.echo(f"prox Lipschitz L_eta = {report.prox_lipschitz['L_eta']:.6g}")
    click.echo("checks:")
    for name in sorted(report.checks):
        entry = report.checks[name]
        verdict = "PASS" if entry["pass"] else "FAIL"
        click.echo(f"  {verdict}  {name}  worst_violation={entry['worst_violation']:.3e}")
    trace_csv = os.path.join(os.path.dirname(os.path.abspath(report_path)), "trace.csv")
    if os.path.exists(trace_csv) and report.F_star is not None:
        series = engine.load_trace_csv(trace_csv)
        out_csv = out_csv or os.path.join(os.path.dirname(trace_csv), "series.csv")
        A = series["F"] - report.F_star
        steps = np.nan_to_num(series["step_norm"])
        B = np.array(
            [np.sum(steps[max(t - report.s - 1, 0) : t] ** 2) for t in range(len(A))]
        )
        with np.errstate(divide="ignore"):
            logA = np.log10(np.maximum(A, 0))
            logB = np.log10(B)
            logR = np.log10(series["residual"])
        with open(out_csv, "w") as fh:
            fh.write("t,A,B,residual,log10_A,log10_B,log10_residual\n")
            for t in range(len(A)):
                fh.write(
                    f"{t},{A[t]!r},{B[t]!r},{series['residual'][t]!r},"
                    f"{logA[t]!r},{logB[t]!r},{logR[t]!r}\n"
                )
        click.echo(f"series written: {out_csv}")


if __name__ == "__main__":
    main()
