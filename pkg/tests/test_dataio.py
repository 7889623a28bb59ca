import json
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from epicontrol.dataio import (
    RunArtifacts,
    TooShortError,
    ValidationError,
    dump_config,
    forecast_csv,
    load_cases,
    load_config,
    parse_config,
    posterior_csv,
    read_forecast,
    read_posterior,
    read_schedule,
    read_summary,
    read_trajectory,
    schedule_csv,
    summary_json,
    trajectory_csv,
    write_cases,
    write_outputs,
)
from epicontrol.forecast import posterior_predictive
from epicontrol.inference import PosteriorSamples, summarize, synthetic_series
from epicontrol.intervention import InterventionSchedule, PolicySearchConfig
from epicontrol.models import DiseaseParams, ModelSpec, simulate


def write(tmp_path, text, name="cases.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def daily_rows(n, start_day=1):
    return "".join(f"2020-03-{d:02d},{d}\n" for d in range(start_day, start_day + n))


class TestLoadCases:
    def test_two_rows(self, tmp_path):
        path = write(tmp_path, "date,new_cases\n2020-01-22,5\n2020-01-23,7\n")
        series = load_cases(path, min_rows=2)
        assert len(series) == 2 and list(series.counts) == [5, 7]
        assert series.dates == ("2020-01-22", "2020-01-23")

    def test_out_of_order_equals_sorted(self, tmp_path):
        rows = daily_rows(20).splitlines()
        shuffled = rows[::-1]
        a = load_cases(write(tmp_path, "date,new_cases\n" + "\n".join(rows), "a.csv"))
        b = load_cases(write(tmp_path, "date,new_cases\n" + "\n".join(shuffled) + "\n", "b.csv"))
        assert a == b

    def test_negative_count_cites_line(self, tmp_path):
        path = write(tmp_path, "date,new_cases\n2020-01-22,5\n2020-01-23,7\n2020-01-24,-3\n")
        with pytest.raises(ValidationError, match="line 4"):
            load_cases(path, min_rows=2)

    @pytest.mark.parametrize("row,needle", [("2020-13-40,5", "date"), ("2020-03-21,abc", "integer"),
                                            ("2020-03-21,1,2", "fields"), ("2020-03-21,1.5", "integer")])
    def test_malformed_rows(self, tmp_path, row, needle):
        path = write(tmp_path, "date,new_cases\n" + daily_rows(20) + row + "\n")
        with pytest.raises(ValidationError, match=needle):
            load_cases(path)

    def test_duplicate_date(self, tmp_path):
        path = write(tmp_path, "date,new_cases\n" + daily_rows(20) + "2020-03-05,1\n")
        with pytest.raises(ValidationError, match="duplicate"):
            load_cases(path)

    def test_bad_header(self, tmp_path):
        with pytest.raises(ValidationError, match="header"):
            load_cases(write(tmp_path, "day,count\n" + daily_rows(20)))

    def test_missing_day_policy(self, tmp_path):
        rows = daily_rows(10) + daily_rows(10, start_day=12)
        path = write(tmp_path, "date,new_cases\n" + rows)
        with pytest.raises(ValidationError, match="missing"):
            load_cases(path)
        with pytest.warns(UserWarning, match="zero-filling 1"):
            series = load_cases(path, fill_missing="zero")
        assert len(series) == 21 and series.counts[10] == 0

    def test_too_short(self, tmp_path):
        with pytest.raises(TooShortError, match="13 rows"):
            load_cases(write(tmp_path, "date,new_cases\n" + daily_rows(13)))

    def test_no_trailing_newline_and_bom(self, tmp_path):
        text = "﻿date,new_cases\n" + daily_rows(14).rstrip("\n")
        assert len(load_cases(write(tmp_path, text))) == 14

    def test_round_trip(self, tmp_path):
        series = synthetic_series(ModelSpec("SIR"), DiseaseParams(), 30, seed=1)
        write_cases(series, tmp_path / "c.csv")
        assert load_cases(tmp_path / "c.csv") == series

    @settings(max_examples=200, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.binary(max_size=300))
    def test_fuzz_only_structured_errors(self, tmp_path, blob):
        path = tmp_path / "fuzz.csv"
        path.write_bytes(b"date,new_cases\n" + blob)
        try:
            series = load_cases(path, min_rows=1)
        except ValidationError:
            return
        assert np.all(series.counts >= 0)
        assert list(series.dates) == sorted(series.dates)


MINIMAL = "[model]\nfamily = SIR\npopulation = 500000\n"


class TestConfig:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.spec == ModelSpec("SIR", refined=True, population=5e5)
        assert cfg.params == DiseaseParams()
        assert cfg.policy == PolicySearchConfig()
        assert (cfg.fit.chains, cfg.fit.iterations, cfg.fit.burn_in) == (4, 5000, 2000)
        assert (cfg.prior.rho_a, cfg.prior.rho_b) == (2.0, 2.0)
        assert cfg.forecast_horizon == 30 and cfg.n_draws == 500 and cfg.horizon == 365

    @pytest.mark.parametrize("family", ["SIR", "SEIR", "SEI3RD"])
    def test_round_trip(self, family):
        text = f"[model]\nfamily = {family}\n[priors]\nrho_a = 2\nrho_b = 2\n[rates]\nr0 = 2.7\ngamma = 0.1\n"
        cfg = parse_config(text)
        again = parse_config(dump_config(cfg))
        assert again == cfg
        assert dump_config(again) == dump_config(cfg)
        assert (again.prior.rho_a, again.prior.rho_b) == (2.0, 2.0)

    def test_sigma_for_sir_warns(self):
        with pytest.warns(UserWarning, match="sigma"):
            cfg = parse_config(MINIMAL + "[rates]\nsigma = 0.3\n")
        assert cfg.warnings

    def test_every_problem_listed(self):
        text = "[model]\nfamily = SIRS\n[rates]\nrho = 2\n[fit]\nchains = many\n[policy]\nthreshold = 0\n"
        with pytest.raises(ValidationError) as err:
            parse_config(text)
        joined = " ".join(err.value.problems)
        for needle in ("family", "rho", "chains", "threshold"):
            assert needle in joined
        assert len(err.value.problems) >= 4

    def test_family_required(self):
        with pytest.raises(ValidationError, match="family"):
            parse_config("[rates]\nr0 = 2\n")

    def test_unknown_key_strict_and_lenient(self):
        text = MINIMAL + "[rates]\nbeta = 0.3\n"
        with pytest.raises(ValidationError, match="unknown key rates.beta"):
            parse_config(text)
        with pytest.warns(UserWarning):
            parse_config(text, allow_unknown=True)

    def test_unknown_section(self):
        with pytest.raises(ValidationError, match="section"):
            parse_config(MINIMAL + "[extras]\nx = 1\n")

    def test_lookahead_values(self):
        cfg = parse_config(MINIMAL + "[policy]\nlookahead = 21\nu_grid = 0,0.5,1\n")
        assert cfg.policy.lookahead == 21 and cfg.policy.u_grid == (0.0, 0.5, 1.0)

    def test_inline_comments(self):
        cfg = parse_config("[model]\nfamily = SEIR   ; or SIR\n[fit]\nseed = 4 # fixed\n")
        assert cfg.spec.family.value == "SEIR" and cfg.fit.seed == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(tmp_path / "nope.ini")

    @settings(max_examples=200)
    @given(st.text(max_size=200))
    def test_fuzz(self, text):
        try:
            cfg = parse_config("[model]\nfamily = SEIR\n" + text)
        except ValidationError:
            return
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert parse_config(dump_config(cfg)) == cfg


@pytest.fixture(scope="module")
def artifacts():
    spec = ModelSpec("SEI3RD")
    params = DiseaseParams(r0=2.2, gamma=0.1, rho=0.7)
    traj = simulate(spec, params, horizon_days=40)
    rng = np.random.default_rng(0)
    samples = PosteriorSamples(np.column_stack([rng.normal(2.2, 0.05, 400), rng.uniform(0.6, 0.8, 400)]), 1, (0.3,), 0)
    data = synthetic_series(ModelSpec("SIR"), params, 30, seed=0)
    bands = posterior_predictive(samples, ModelSpec("SIR"), params, data, 10, n_draws=100, seed=0)
    schedule = InterventionSchedule((0, 7, 21), (0.0, 0.35, 0.1), 40)
    return RunArtifacts(
        trajectory=traj, posterior=samples, summary=summary_json(summarize(samples), "SEI3RD(i)"),
        forecast=bands, schedule=schedule, config=dump_config(parse_config(MINIMAL)),
    )


class TestWriters:
    def test_sei3rd_header(self, artifacts):
        assert trajectory_csv(artifacts.trajectory).splitlines()[0] == "t,S,E,I1,I2,I3,R,D,incidence"

    @pytest.mark.parametrize("family,header", [("SIR", "t,S,I,R,incidence"), ("SEIR", "t,S,E,I,R,incidence")])
    def test_other_headers(self, family, header):
        assert trajectory_csv(simulate(ModelSpec(family), DiseaseParams(), horizon_days=3)).splitlines()[0] == header

    def test_round_trips(self, tmp_path, artifacts):
        write_outputs(artifacts, tmp_path)
        traj = read_trajectory(tmp_path / "trajectory.csv")
        np.testing.assert_allclose(traj.states, artifacts.trajectory.states, rtol=1e-12, atol=0)
        np.testing.assert_allclose(traj.incidence, artifacts.trajectory.incidence, rtol=1e-12, atol=0)
        post = read_posterior(tmp_path / "posterior.csv")
        np.testing.assert_allclose(post.draws, artifacts.posterior.draws, rtol=1e-12, atol=0)
        bands = read_forecast(tmp_path / "forecast.csv")
        for name in ("lower", "median", "upper"):
            np.testing.assert_allclose(getattr(bands, name), getattr(artifacts.forecast, name), rtol=1e-12, atol=0)
        assert bands.history == artifacts.forecast.history
        sched = read_schedule(tmp_path / "schedule.csv", horizon=40)
        assert sched == artifacts.schedule
        summary = read_summary(tmp_path / "summary.json")
        assert summary["model"] == "SEI3RD(i)" and summary["n_draws"] == 400

    def test_floats_exact(self, artifacts):
        text = posterior_csv(artifacts.posterior)
        values = np.array([[float(x) for x in line.split(",")] for line in text.splitlines()[1:]])
        np.testing.assert_array_equal(values, artifacts.posterior.draws)

    def test_forecast_blank_future_observed(self, artifacts):
        lines = forecast_csv(artifacts.forecast).splitlines()
        assert lines[0] == "day,lower,median,upper,observed"
        assert lines[-1].endswith(",") and not lines[1].endswith(",")

    def test_schedule_header(self, artifacts):
        assert schedule_csv(artifacts.schedule).splitlines() == ["day,u", "0,0", "7,0.35", "21,0.1"]

    def test_empty_manifest(self, tmp_path):
        manifest = write_outputs(RunArtifacts(), tmp_path)
        assert manifest["files"] == []
        assert json.loads((tmp_path / "manifest.json").read_text())["files"] == []

    def test_manifest_hashes_stable(self, tmp_path, artifacts):
        a = write_outputs(artifacts, tmp_path / "a", seed=7, command="fit")
        b = write_outputs(artifacts, tmp_path / "b", seed=7, command="fit")
        assert a == b
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
        assert {e["path"] for e in a["files"]} == {
            "config.effective.ini", "trajectory.csv", "posterior.csv", "summary.json", "forecast.csv", "schedule.csv",
        }

    def test_bad_posterior_file(self, tmp_path):
        path = write(tmp_path, "r0,rho\n2.0,1.5\n", "p.csv")
        with pytest.raises(ValidationError):
            read_posterior(path)

    def test_bad_schedule_file(self, tmp_path):
        path = write(tmp_path, "day,u\n0,0.2\n0,0.3\n", "s.csv")
        with pytest.raises(ValidationError):
            read_schedule(path, horizon=10)
