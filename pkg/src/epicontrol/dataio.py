"""Case-count ingestion, run configuration, and artifact serialisation.

Config files are INI with the sections ``[model] [rates] [priors] [fit]
[forecast] [policy]``; every key is optional except ``model.family``.
Floats are written with ``repr`` so every value reads back exactly.
"""
from __future__ import annotations

import configparser
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .forecast import ForecastBands
from .inference import (
    MIN_SERIES_LENGTH,
    FitConfig,
    ObservedSeries,
    PosteriorSamples,
    PosteriorSummary,
    PriorSpec,
    ParameterSummary,
)
from .intervention import REMAINING_HORIZON, InterventionSchedule, PolicySearchConfig
from .models import DiseaseParams, Family, ModelSpec, StageRates, Trajectory

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


class ValidationError(ValueError):
    """Malformed input; ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TooShortError(ValidationError):
    pass


class OutputError(OSError):
    def __init__(self, message, written):
        super().__init__(message)
        self.written = list(written)


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


# ---------------------------------------------------------------------------
# case counts


def load_cases(
    path: PathLike,
    population: float = 1e6,
    *,
    fill_missing: str = "error",
    min_rows: int = MIN_SERIES_LENGTH,
) -> ObservedSeries:
    """Read a ``date,new_cases`` CSV of daily new cases.

    Rows are sorted by date. Gaps in the calendar are an error unless
    ``fill_missing="zero"``, which inserts zero counts and warns.
    """
    if fill_missing not in ("error", "zero"):
        raise ValueError("fill_missing must be 'error' or 'zero'")
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            rows = list(csv.reader(fh))
    except (UnicodeDecodeError, csv.Error) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not rows or [c.strip() for c in rows[0]] != ["date", "new_cases"]:
        raise ValidationError(f"{path}: header must be 'date,new_cases'")

    seen: dict[dt.date, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ValidationError(f"line {lineno}: expected 2 fields, got {len(row)}")
        raw_date, raw_count = (c.strip() for c in row)
        try:
            day = dt.date.fromisoformat(raw_date)
        except ValueError:
            raise ValidationError(f"line {lineno}: unparsable date {raw_date!r}") from None
        try:
            count = int(raw_count)
        except ValueError:
            raise ValidationError(f"line {lineno}: count {raw_count!r} is not an integer") from None
        if count < 0:
            raise ValidationError(f"line {lineno}: negative count {count}")
        if day in seen:
            raise ValidationError(f"line {lineno}: duplicate date {day.isoformat()}")
        seen[day] = count

    days = sorted(seen)
    if days:
        span = (days[-1] - days[0]).days + 1
        if span != len(days):
            missing = span - len(days)
            if fill_missing == "error":
                raise ValidationError(f"{missing} calendar day(s) missing between {days[0]} and {days[-1]}")
            warnings.warn(f"zero-filling {missing} missing day(s)", stacklevel=2)
            days = [days[0] + dt.timedelta(d) for d in range(span)]
    if len(days) < min_rows:
        raise TooShortError(f"{path}: {len(days)} rows; at least {min_rows} required")
    counts = np.array([seen.get(d, 0) for d in days], dtype=np.int64)
    return ObservedSeries(tuple(d.isoformat() for d in days), counts, population)


def write_cases(series: ObservedSeries, path: PathLike) -> None:
    lines = ["date,new_cases"] + [f"{d},{int(c)}" for d, c in zip(series.dates, series.counts)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    spec: ModelSpec
    params: DiseaseParams
    prior: PriorSpec = PriorSpec()
    fit: FitConfig = FitConfig()
    policy: PolicySearchConfig = PolicySearchConfig()
    horizon: int = 365
    forecast_horizon: int = 30
    n_draws: int = 500
    region: str = ""
    period: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)


_STAGE_KEYS = ("p1", "p2", "g1", "g2", "g3", "delta", "w1", "w2", "w3")

# section -> key -> parser
_SCHEMA = {
    "model": {
        "family": str, "refined": "bool", "population": float,
        "horizon": int, "region": str, "period": str,
    },
    "rates": {
        "r0": float, "rho": float, "gamma": float, "sigma": float, "iota": float,
        **{k: float for k in _STAGE_KEYS},
    },
    "priors": {"r0_loc": float, "r0_scale": float, "rho_a": float, "rho_b": float},
    "fit": {
        "chains": int, "iterations": int, "burn_in": int, "proposal_scale": float,
        "seed": int, "restarts": int,
    },
    "forecast": {"horizon": int, "n_draws": int},
    "policy": {
        "threshold": float, "u_grid": "floats", "decision_interval": int,
        "lookahead": "lookahead", "horizon": int,
    },
}

_BOOLS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _parse_value(kind, raw: str):
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() not in _BOOLS:
            raise ValueError(f"expected true/false, got {raw!r}")
        return _BOOLS[raw.lower()]
    if kind == "floats":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if kind == "lookahead":
        return REMAINING_HORIZON if raw == REMAINING_HORIZON else int(raw)
    if kind is float:
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {raw!r}")
        return value
    return kind(raw)


def parse_config(text: str, *, allow_unknown: bool = False, source: str = "<config>") -> RunConfig:
    """Validate config text; raises :class:`ValidationError` listing every problem."""
    parser = configparser.ConfigParser(
        interpolation=None, default_section="__none__", inline_comment_prefixes=(";", "#")
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValidationError(f"{source}: {exc}") from None

    problems: list[str] = []
    notes: list[str] = []
    values: dict[str, dict] = {s: {} for s in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            msg = f"unknown section [{section}]"
            (notes if allow_unknown else problems).append(msg)
            continue
        for key, raw in parser.items(section):
            kind = _SCHEMA[section].get(key)
            if kind is None:
                msg = f"unknown key {section}.{key}"
                (notes if allow_unknown else problems).append(msg)
                continue
            try:
                values[section][key] = _parse_value(kind, raw)
            except ValueError as exc:
                problems.append(f"{section}.{key}: {exc}")

    model, rates = values["model"], values["rates"]
    family = None
    if "family" not in model:
        problems.append("model.family is required")
    else:
        try:
            family = Family(model["family"].upper())
        except ValueError:
            problems.append(f"model.family must be one of SIR, SEIR, SEI3RD, got {model['family']!r}")
    if family is Family.SIR and "sigma" in rates:
        notes.append("rates.sigma is ignored for SIR")
        rates.pop("sigma")
    if family in (Family.SIR, Family.SEIR):
        for key in _STAGE_KEYS:
            if key in rates:
                notes.append(f"rates.{key} is ignored for {family.value}")
                rates.pop(key)

    def build(label, factory, **kwargs):
        try:
            return factory(**kwargs)
        except (ValueError, TypeError) as exc:
            problems.append(f"{label}: {exc}")
            return None

    spec = params = prior = fit = policy = None
    if family is not None:
        spec = build("model", ModelSpec, family=family, refined=model.get("refined", True),
                     population=model.get("population", 1e6))
    stage = build("rates", StageRates, **{k: rates[k] for k in _STAGE_KEYS if k in rates})
    if stage is not None:
        params = build("rates", DiseaseParams, stage=stage,
                       **{k: rates[k] for k in ("r0", "rho", "gamma", "sigma", "iota") if k in rates})
        if params is not None and not params.r0 > 0:
            problems.append("rates.r0 must be > 0")
        if params is not None and family is not Family.SIR and not params.sigma > 0:
            problems.append("rates.sigma must be > 0")
        if params is not None and not params.gamma > 0:
            problems.append("rates.gamma must be > 0")
    prior = build("priors", PriorSpec, **values["priors"])
    fit = build("fit", FitConfig, **values["fit"])
    policy_kwargs = dict(values["policy"])
    policy_kwargs.setdefault("horizon", model.get("horizon", 365))
    policy = build("policy", PolicySearchConfig, **policy_kwargs)

    horizon = model.get("horizon", 365)
    if horizon < 0:
        problems.append("model.horizon must be >= 0")
    fc = values["forecast"]
    if fc.get("horizon", 30) < 0:
        problems.append("forecast.horizon must be >= 0")
    if fc.get("n_draws", 500) < 1:
        problems.append("forecast.n_draws must be >= 1")

    if problems:
        raise ValidationError(problems)
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return RunConfig(
        spec=spec, params=params, prior=prior, fit=fit, policy=policy,
        horizon=horizon, forecast_horizon=fc.get("horizon", 30), n_draws=fc.get("n_draws", 500),
        region=model.get("region", ""), period=model.get("period", ""), warnings=tuple(notes),
    )


def load_config(path: PathLike, *, allow_unknown: bool = False) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, allow_unknown=allow_unknown, source=str(path))


def dump_config(cfg: RunConfig) -> str:
    """Effective config with every default filled in; parses back to an equal RunConfig."""
    p, st = cfg.params, cfg.params.stage
    sections = {
        "model": {
            "family": cfg.spec.family.value, "refined": cfg.spec.refined,
            "population": cfg.spec.population, "horizon": cfg.horizon,
            "region": cfg.region, "period": cfg.period,
        },
        "rates": {
            "r0": p.r0, "rho": p.rho, "gamma": p.gamma, "sigma": p.sigma, "iota": p.iota,
            **asdict(st),
        },
        "priors": asdict(cfg.prior),
        "fit": {k: getattr(cfg.fit, k) for k in _SCHEMA["fit"]},
        "forecast": {"horizon": cfg.forecast_horizon, "n_draws": cfg.n_draws},
        "policy": {
            "threshold": cfg.policy.threshold,
            "u_grid": ",".join(fmt(u) for u in cfg.policy.u_grid),
            "decision_interval": cfg.policy.decision_interval,
            "lookahead": cfg.policy.lookahead, "horizon": cfg.policy.horizon,
        },
    }
    if cfg.spec.family is Family.SIR:
        del sections["rates"]["sigma"]
    if cfg.spec.family is not Family.SEI3RD:
        for key in _STAGE_KEYS:
            del sections["rates"][key]
    out = []
    for name, items in sections.items():
        out.append(f"[{name}]")
        for key, value in items.items():
            out.append(f"{key} = {value if isinstance(value, str) else fmt(value)}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# writers and readers


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (v if isinstance(v, str) else fmt(v)) for v in row])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory) -> str:
    header = ["t", *traj.compartments, "incidence"]
    rows = []
    for t in range(len(traj.times)):
        inc = traj.incidence[t] if t < len(traj.incidence) else None
        rows.append([int(traj.times[t]), *traj.states[t], inc])
    return _csv_text(header, rows)


def read_trajectory(path: PathLike) -> Trajectory:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    names = tuple(header[1:-1])
    family = next(f for f in Family if f.compartments == names)
    body = rows[1:]
    states = np.array([[float(x) for x in r[1:-1]] for r in body])
    incidence = np.array([float(r[-1]) for r in body if r[-1] != ""])
    times = np.array([int(r[0]) for r in body])
    return Trajectory(family, times, states, incidence)


def posterior_csv(samples: PosteriorSamples) -> str:
    return _csv_text(["r0", "rho"], samples.draws.tolist())


def read_posterior(path: PathLike, *, chains: int = 1, seed: int = 0) -> PosteriorSamples:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["r0", "rho"]:
        raise ValidationError(f"{path}: header must be 'r0,rho'")
    try:
        draws = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if draws.size and (np.any(draws[:, 0] <= 0) or np.any((draws[:, 1] <= 0) | (draws[:, 1] >= 1))):
        raise ValidationError(f"{path}: draws outside r0 > 0, 0 < rho < 1")
    if len(draws) % chains:
        chains = 1
    return PosteriorSamples(draws, chains, (float("nan"),) * chains, seed)


def summary_record(summary: PosteriorSummary, model: str, region: str = "", period: str = "") -> dict:
    rec = {"model": model, "region": region, "period": period}
    for name in ("r0", "rho"):
        s: ParameterSummary = getattr(summary, name)
        rec.update({
            f"{name}_mean": s.mean, f"{name}_sd": s.sd,
            f"{name}_q05": s.q05, f"{name}_q50": s.q50, f"{name}_q95": s.q95,
        })
    rec["n_draws"] = summary.n_draws
    return rec


def summary_json(summary: PosteriorSummary, model: str, region: str = "", period: str = "") -> str:
    return json.dumps(summary_record(summary, model, region, period), indent=2) + "\n"


def read_summary(path: PathLike) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def forecast_csv(bands: ForecastBands) -> str:
    rows = []
    for i, t in enumerate(bands.times):
        obs = None
        if bands.observed is not None and not np.isnan(bands.observed[i]):
            obs = int(bands.observed[i])
        rows.append([int(t), bands.lower[i], bands.median[i], bands.upper[i], obs])
    return _csv_text(["day", "lower", "median", "upper", "observed"], rows)


def read_forecast(path: PathLike) -> ForecastBands:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    col = lambda j: np.array([float(r[j]) for r in rows])
    observed = np.array([float(r[4]) if r[4] != "" else np.nan for r in rows])
    history = int(np.sum(~np.isnan(observed)))
    return ForecastBands(
        times=np.array([int(r[0]) for r in rows]), lower=col(1), median=col(2), upper=col(3),
        draws_used=0, history=history, observed=observed,
    )


def schedule_csv(schedule: InterventionSchedule) -> str:
    return _csv_text(["day", "u"], zip(schedule.breakpoints, schedule.levels))


def read_schedule(path: PathLike, horizon: Optional[int] = None) -> InterventionSchedule:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip() for c in rows[0]] != ["day", "u"]:
        raise ValidationError(f"{path}: header must be 'day,u'")
    try:
        days = [int(r[0]) for r in rows[1:]]
        levels = [float(r[1]) for r in rows[1:]]
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not days:
        raise ValidationError(f"{path}: schedule has no segments")
    horizon = days[-1] if horizon is None else horizon
    try:
        return InterventionSchedule(tuple(days), tuple(levels), horizon)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


@dataclass
class RunArtifacts:
    """Everything a command may persist; ``None`` fields are skipped."""

    trajectory: Optional[Trajectory] = None
    posterior: Optional[PosteriorSamples] = None
    summary: Optional[str] = None
    forecast: Optional[ForecastBands] = None
    schedule: Optional[InterventionSchedule] = None
    config: Optional[str] = None
    extra: dict[str, str] = field(default_factory=dict)

    def files(self) -> dict[str, str]:
        out = {}
        if self.config is not None:
            out["config.effective.ini"] = self.config
        if self.trajectory is not None:
            out["trajectory.csv"] = trajectory_csv(self.trajectory)
        if self.posterior is not None:
            out["posterior.csv"] = posterior_csv(self.posterior)
        if self.summary is not None:
            out["summary.json"] = self.summary
        if self.forecast is not None:
            out["forecast.csv"] = forecast_csv(self.forecast)
        if self.schedule is not None:
            out["schedule.csv"] = schedule_csv(self.schedule)
        out.update(self.extra)
        return out


MANIFEST_NAME = "manifest.json"


def write_outputs(artifacts: RunArtifacts, out_dir: PathLike, *, seed: Optional[int] = None,
                  command: str = "") -> dict:
    """Write every artifact plus ``manifest.json`` listing each file's sha256."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, written = [], []
    for name, text in sorted(artifacts.files().items()):
        data = text.encode("utf-8")
        target = out_dir / name
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        except OSError as exc:
            raise OutputError(f"failed writing {name}: {exc}", written) from exc
        written.append(name)
        entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {"command": command, "seed": seed, "files": entries}
    try:
        (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"failed writing manifest: {exc}", written) from exc
    return manifest
