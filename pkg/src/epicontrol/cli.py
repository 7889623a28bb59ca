"""Command-line entry point: ``epicontrol {simulate,sweep,fit,forecast,policy}``.

Exit codes: 0 success, 1 invalid input (nothing written), 2 runtime or
convergence failure. ``EPICONTROL_OUT`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dataio, svg
from .dataio import RunArtifacts, RunConfig, ValidationError
from .forecast import posterior_predictive, replay_fit
from .inference import FittingError, fit_map, fit_mcmc, summarize
from .intervention import greedy_search, max_infected, sweep
from .models import Family, IntegratorError, InvalidParameterError, simulate

log = logging.getLogger("epicontrol")

OUT_ENV = "EPICONTROL_OUT"
DEFAULT_OUT = "epicontrol-out"
LOCK_NAME = ".epicontrol.lock"


@dataclass(frozen=True)
class CommandOutcome:
    exit_code: int
    summary: str
    manifest_path: Optional[Path] = None


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _with_seed(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(cfg, fit=dataclasses.replace(cfg.fit, seed=seed))


class _OutDir:
    """Exclusive lock on an output directory for the lifetime of one command."""

    def __init__(self, path: Path):
        self.path = path
        self.lock = path / LOCK_NAME

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise _Fail(2, f"output directory {self.path} is locked by another run ({self.lock})") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)
        return False


def _write(artifacts: RunArtifacts, out_dir: Path, seed, command: str) -> Path:
    with _OutDir(out_dir):
        try:
            dataio.write_outputs(artifacts, out_dir, seed=seed, command=command)
        except dataio.OutputError as exc:
            raise _Fail(2, f"{exc} (written: {', '.join(exc.written) or 'none'})") from None
    return out_dir / dataio.MANIFEST_NAME


def _fmt(x: float) -> str:
    return f"{x:.4g}"


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out_dir: Path, *, schedule_path=None, chart: bool = False,
                 seed=None) -> CommandOutcome:
    schedule = None
    if schedule_path is not None:
        schedule = dataio.read_schedule(schedule_path, horizon=cfg.horizon)
    traj = simulate(cfg.spec, cfg.params, schedule, cfg.horizon)
    infected = traj.infected
    peak_day = int(np.argmax(infected))
    lines = [
        f"model {cfg.spec.label}: R0={_fmt(cfg.params.r0)} gamma={_fmt(cfg.params.gamma)} horizon={cfg.horizon}",
        f"peak infected fraction {infected[peak_day]:.6f} on day {peak_day}",
        f"final R {traj['R'][-1]:.6f}",
    ]
    if cfg.spec.family is Family.SEI3RD:
        lines.append(f"final D {traj['D'][-1]:.6f}")
    extra = {}
    if chart:
        extra["trajectory.svg"] = svg.line_chart(
            traj.times, {c: traj[c] for c in traj.compartments},
            title=f"{cfg.spec.label} trajectory", ylabel="population fraction",
        )
    art = RunArtifacts(trajectory=traj, config=dataio.dump_config(cfg), extra=extra)
    return CommandOutcome(0, "\n".join(lines), _write(art, out_dir, seed, "simulate"))


def parse_levels(text: str) -> list[float]:
    try:
        levels = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse intervention levels {text!r}") from None
    if not levels:
        raise ValidationError("at least one intervention level is required")
    bad = [u for u in levels if not 0 <= u <= 1]
    if bad:
        raise ValidationError(f"intervention levels must lie in [0, 1]: {bad}")
    return levels


def cmd_sweep(cfg: RunConfig, out_dir: Path, *, levels: Sequence[float], chart: bool = False,
              seed=None) -> CommandOutcome:
    if not levels:
        raise ValidationError("at least one intervention level is required")
    trajs = sweep(cfg.spec, cfg.params, levels, cfg.horizon)
    extra = {}
    long_rows, peak_rows = [], []
    lines = [f"{'u':>6}  {'peak infected':>14}  {'peak day':>8}"]
    peaks = []
    for u, traj in zip(levels, trajs):
        inf = traj.infected
        day = int(np.argmax(inf))
        peaks.append(float(inf[day]))
        extra[f"trajectory_u{dataio.fmt(u)}.csv"] = dataio.trajectory_csv(traj)
        long_rows += [[u, int(t), v] for t, v in zip(traj.times, inf)]
        peak_rows.append([u, inf[day], day])
        lines.append(f"{u:>6.3g}  {inf[day]:>14.6f}  {day:>8d}")
    order = np.argsort(levels, kind="stable")
    sorted_peaks = np.asarray(peaks)[order]
    monotone = bool(np.all(np.diff(sorted_peaks) <= 0))
    lines.append(f"peak non-increasing in u: {'yes' if monotone else 'NO'}")
    extra["sweep.csv"] = dataio._csv_text(["u", "t", "infected"], long_rows)
    extra["sweep_peaks.csv"] = dataio._csv_text(["u", "peak_infected", "peak_day"], peak_rows)
    if chart:
        extra["sweep.svg"] = svg.line_chart(
            trajs[0].times, {f"u={u:g}": t.infected for u, t in zip(levels, trajs)},
            title=f"{cfg.spec.label} under fixed interventions", ylabel="infected fraction",
            hline=cfg.policy.threshold,
        )
    art = RunArtifacts(config=dataio.dump_config(cfg), extra=extra)
    return CommandOutcome(0, "\n".join(lines), _write(art, out_dir, seed, "sweep"))


def _fit(cfg: RunConfig, data):
    try:
        theta, value = fit_map(cfg.spec, cfg.params, data, cfg.prior, cfg.fit)
        log.info("MAP r0=%.6g rho=%.6g log posterior %.6g", theta[0], theta[1], value)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            samples = fit_mcmc(cfg.spec, cfg.params, data, cfg.prior, cfg.fit, init=theta)
    except (FittingError, IntegratorError) as exc:
        raise _Fail(2, f"fit failed: {exc}") from None
    for note in samples.warnings:
        log.warning(note)
    return theta, samples


def table_row(cfg: RunConfig, summary) -> str:
    return (
        f"{cfg.region or '-'}  {cfg.period or '-'}  {cfg.spec.label}  "
        f"R0 {summary.r0.mean:.4f} ± {summary.r0.sd:.4f}  rho {summary.rho.mean:.4f} ± {summary.rho.sd:.4f}"
    )


def cmd_fit(cfg: RunConfig, out_dir: Path, *, cases, fill_missing: str = "error", seed=None) -> CommandOutcome:
    data = dataio.load_cases(cases, cfg.spec.population, fill_missing=fill_missing)
    _, samples = _fit(cfg, data)
    summary = summarize(samples)
    art = RunArtifacts(
        posterior=samples,
        summary=dataio.summary_json(summary, cfg.spec.label, cfg.region, cfg.period),
        config=dataio.dump_config(cfg),
    )
    lines = [table_row(cfg, summary), f"acceptance {', '.join(f'{a:.2f}' for a in samples.acceptance_rate)}"]
    return CommandOutcome(0, "\n".join(lines), _write(art, out_dir, cfg.fit.seed, "fit"))


def cmd_forecast(cfg: RunConfig, out_dir: Path, *, cases, posterior=None, fill_missing: str = "error",
                 chart: bool = False, seed=None) -> CommandOutcome:
    data = dataio.load_cases(cases, cfg.spec.population, fill_missing=fill_missing)
    if posterior is not None:
        samples = dataio.read_posterior(posterior, seed=cfg.fit.seed)
    else:
        _, samples = _fit(cfg, data)
    bands = posterior_predictive(
        samples, cfg.spec, cfg.params, data, cfg.forecast_horizon, cfg.n_draws, cfg.fit.seed
    )
    point = (float(np.median(samples.r0)), float(np.median(samples.rho)))
    replay = replay_fit(point, cfg.spec, cfg.params, data)
    extra = {
        "replay.csv": dataio._csv_text(
            ["day", "observed", "expected", "residual"],
            [[i, int(c), e, r] for i, (c, e, r) in enumerate(zip(data.counts, replay.expected, replay.residuals))],
        )
    }
    if chart:
        extra["forecast.svg"] = svg.band_chart(
            bands.times, bands.lower, bands.median, bands.upper, observed=bands.observed,
            split=len(data) - 0.5, title=f"{cfg.spec.label} forecast",
        )
    art = RunArtifacts(forecast=bands, config=dataio.dump_config(cfg), extra=extra)
    if posterior is None:
        art.posterior = samples
    future = slice(bands.history, None)
    lines = [
        f"{cfg.spec.label}: {bands.draws_used} posterior draws, {bands.history} history days, "
        f"{bands.horizon} forecast days",
    ]
    if bands.horizon:
        lines.append(
            f"day {int(bands.times[-1])}: median {bands.median[-1]:.1f} "
            f"[{bands.lower[-1]:.1f}, {bands.upper[-1]:.1f}]; "
            f"forecast total median {bands.median[future].sum():.0f}"
        )
    return CommandOutcome(0, "\n".join(lines), _write(art, out_dir, cfg.fit.seed, "forecast"))


def cmd_policy(cfg: RunConfig, out_dir: Path, *, chart: bool = False, seed=None) -> CommandOutcome:
    result = greedy_search(cfg.spec, cfg.params, cfg.policy)
    traj = simulate(cfg.spec, cfg.params, result.schedule, cfg.policy.horizon)
    peak = max_infected(traj)
    segs = ", ".join(f"{b}:{dataio.fmt(u)}" for b, u in zip(result.schedule.breakpoints, result.schedule.levels))
    lines = [
        f"feasible: {'yes' if result.feasible else 'no'}",
        f"threshold {cfg.policy.threshold:g}; max infected under schedule {peak:.6f}",
        f"segments (day:u): {segs}",
    ]
    extra = {}
    if chart:
        extra["policy.svg"] = svg.line_chart(
            traj.times, {"infected": traj.infected, "u": result.schedule.daily_levels(cfg.policy.horizon + 1)},
            title=f"{cfg.spec.label} greedy intervention", ylabel="fraction", hline=cfg.policy.threshold,
        )
    art = RunArtifacts(trajectory=traj, schedule=result.schedule, config=dataio.dump_config(cfg), extra=extra)
    return CommandOutcome(0, "\n".join(lines), _write(art, out_dir, seed, "policy"))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (INI)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int, help="random seed; overrides fit.seed")
    common.add_argument("--quiet", action="store_true", help="suppress the printed summary")
    common.add_argument("--allow-unknown-keys", action="store_true",
                        help="warn about unknown config keys instead of failing")

    parser = argparse.ArgumentParser(prog="epicontrol", description="Compartmental epidemic modelling toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="simulate a deterministic trajectory")
    p.add_argument("--schedule", help="intervention schedule CSV (day,u)")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")

    p = sub.add_parser("sweep", parents=[common], help="simulate under several constant interventions")
    p.add_argument("--u", required=True, help="comma-separated intervention levels, e.g. 0,0.5,1")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")

    p = sub.add_parser("fit", parents=[common], help="fit R0 and rho to daily case counts")
    p.add_argument("--cases", required=True, help="CSV with header date,new_cases")
    p.add_argument("--fill-missing", choices=("error", "zero"), default="error",
                   help="how to treat missing dates")

    p = sub.add_parser("forecast", parents=[common], help="posterior-predictive forecast")
    p.add_argument("--cases", required=True, help="CSV with header date,new_cases")
    p.add_argument("--posterior", help="posterior CSV (r0,rho); fitted when omitted")
    p.add_argument("--fill-missing", choices=("error", "zero"), default="error",
                   help="how to treat missing dates")
    p.add_argument("--svg", action="store_true", help="also write an SVG band chart")

    p = sub.add_parser("policy", parents=[common], help="greedy adaptive intervention search")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> CommandOutcome:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = dataio.load_config(args.config, allow_unknown=args.allow_unknown_keys)
        for w in caught:
            log.warning("config: %s", w.message)
        cfg = _with_seed(cfg, args.seed)
        seed = args.seed if args.seed is not None else cfg.fit.seed
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir, schedule_path=args.schedule, chart=args.svg, seed=seed)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, levels=parse_levels(args.u), chart=args.svg, seed=seed)
        if args.command == "fit":
            return cmd_fit(cfg, out_dir, cases=args.cases, fill_missing=args.fill_missing)
        if args.command == "forecast":
            return cmd_forecast(cfg, out_dir, cases=args.cases, posterior=args.posterior,
                                fill_missing=args.fill_missing, chart=args.svg)
        return cmd_policy(cfg, out_dir, chart=args.svg, seed=seed)
    except (ValidationError, InvalidParameterError, FileNotFoundError) as exc:
        return CommandOutcome(1, f"error: {exc}")
    except _Fail as exc:
        return CommandOutcome(exc.code, f"error: {exc}")
    except (IntegratorError, FittingError) as exc:
        return CommandOutcome(2, f"error: {exc}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    quiet = "--quiet" in (sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format="%(levelname)s %(message)s")
    outcome = run(argv)
    if outcome.exit_code:
        print(outcome.summary, file=sys.stderr)
    elif not quiet:
        print(outcome.summary)
        print(f"manifest: {outcome.manifest_path}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
