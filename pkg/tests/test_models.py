import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from epicontrol.intervention import InterventionSchedule
from epicontrol.models import (
    DiseaseParams,
    Family,
    IntegratorError,
    InvalidParameterError,
    ModelSpec,
    StageRates,
    _clamp,
    derivatives,
    init_state,
    simulate,
    step,
)

from oracles import euler_reference, final_size, sir_peak

FAMILIES = list(Family)

# frozen from oracles.sir_peak(3) and oracles.final_size(3)
PEAK_R0_3 = 0.3004625704439633
FINAL_R0_3 = 0.9404797907073597


def test_frozen_oracle_values():
    assert sir_peak(3.0) == pytest.approx(PEAK_R0_3, abs=1e-15)
    assert final_size(3.0) == pytest.approx(FINAL_R0_3, abs=1e-12)
    assert 1 - FINAL_R0_3 == pytest.approx(math.exp(-3 * FINAL_R0_3), abs=1e-12)


class TestTypes:
    def test_compartment_counts(self):
        assert [ModelSpec(f).n_compartments for f in FAMILIES] == [3, 4, 7]

    def test_population_positive(self):
        with pytest.raises(InvalidParameterError):
            ModelSpec("SIR", population=0)

    @pytest.mark.parametrize("field,value", [("rho", 0.0), ("rho", 1.5), ("iota", 1.0), ("iota", -0.1), ("r0", -1)])
    def test_param_invariants(self, field, value):
        with pytest.raises(InvalidParameterError):
            DiseaseParams(**{field: value})

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidParameterError):
            DiseaseParams(stage=StageRates(w1=0.5, w2=0.3, w3=0.1))

    def test_beta_derived(self):
        assert DiseaseParams(r0=3.0, gamma=0.1).beta == pytest.approx(0.3)

    def test_label(self):
        assert ModelSpec("SEIR", refined=True).label == "SEIR(i)"
        assert ModelSpec("SEIR", refined=False).label == "SEIR"


class TestInitState:
    def test_sir_refined(self):
        y = init_state(ModelSpec("SIR", refined=True), DiseaseParams(iota=1e-4))
        np.testing.assert_allclose(y, [0.9999, 1e-4, 0.0], rtol=0, atol=1e-15)

    def test_sir_index_case(self):
        y = init_state(ModelSpec("SIR", refined=False, population=1e6), DiseaseParams())
        np.testing.assert_allclose(y, [1 - 1e-6, 1e-6, 0.0], rtol=0, atol=1e-15)

    def test_sei3rd_seeds_i1(self):
        y = init_state(ModelSpec("SEI3RD"), DiseaseParams(iota=1e-4))
        assert y[0] == pytest.approx(0.9999) and y[2] == 1e-4
        assert np.count_nonzero(y) == 2

    def test_seir_seeds_i_not_e(self):
        y = init_state(ModelSpec("SEIR"), DiseaseParams(iota=1e-3))
        assert y[1] == 0 and y[2] == 1e-3

    def test_iota_at_one_rejected(self):
        with pytest.raises(InvalidParameterError):
            DiseaseParams(iota=1.0)


class TestDerivatives:
    def test_sir_hand_arithmetic(self):
        d = derivatives(ModelSpec("SIR"), DiseaseParams(r0=3, gamma=0.1), [0.99, 0.01, 0.0], 0.0)
        np.testing.assert_allclose(d, [-0.00297, 0.00197, 0.001], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_full_suppression(self, family):
        spec = ModelSpec(family)
        y = np.full(spec.n_compartments, 1 / spec.n_compartments)
        d = derivatives(spec, DiseaseParams(), y, 1.0)
        assert d[0] == 0.0
        assert d[1] == pytest.approx(-DiseaseParams().gamma * y[1] if family is Family.SIR else
                                     -DiseaseParams().sigma * y[1])

    @pytest.mark.parametrize("family", FAMILIES)
    def test_disease_free_equilibrium(self, family):
        spec = ModelSpec(family)
        y = np.zeros(spec.n_compartments)
        y[0] = 0.7
        y[spec.family.compartments.index("R")] = 0.3
        assert np.all(derivatives(spec, DiseaseParams(), y, 0.0) == 0.0)

    def test_sei3rd_by_hand(self):
        st_ = StageRates()
        p = DiseaseParams(r0=2.0, gamma=0.1, sigma=0.2, stage=st_)
        y = np.array([0.9, 0.02, 0.03, 0.02, 0.01, 0.015, 0.005])
        lam = 0.2 * (0.6 * 0.03 + 0.3 * 0.02 + 0.1 * 0.01)
        expected = [
            -lam * 0.9,
            lam * 0.9 - 0.2 * 0.02,
            0.2 * 0.02 - (st_.p1 + st_.g1) * 0.03,
            st_.p1 * 0.03 - (st_.p2 + st_.g2) * 0.02,
            st_.p2 * 0.02 - (st_.delta + st_.g3) * 0.01,
            st_.g1 * 0.03 + st_.g2 * 0.02 + st_.g3 * 0.01,
            st_.delta * 0.01,
        ]
        np.testing.assert_allclose(derivatives(ModelSpec("SEI3RD"), p, y, 0.0), expected, rtol=1e-13, atol=1e-17)

    def test_u_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            derivatives(ModelSpec("SIR"), DiseaseParams(), [0.9, 0.1, 0.0], 1.2)

    def test_zero_sum_random(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            family = FAMILIES[rng.integers(3)]
            spec = ModelSpec(family)
            w = rng.dirichlet([1, 1, 1])
            stage = StageRates(*rng.uniform(0, 1, 6), w[0], w[1], 1.0 - w[0] - w[1])
            p = DiseaseParams(r0=rng.uniform(0.1, 10), gamma=rng.uniform(0.01, 1), sigma=rng.uniform(0.01, 1),
                              stage=stage)
            y = rng.dirichlet(np.ones(spec.n_compartments))
            assert abs(derivatives(spec, p, y, rng.uniform()).sum()) <= 1e-14


class TestStep:
    def test_suppressed_s_constant(self):
        spec = ModelSpec("SEIR")
        y0 = np.array([0.8, 0.1, 0.05, 0.05])
        y1 = step(spec, DiseaseParams(), y0, 1.0, 0.25)
        assert y1[0] == y0[0]
        assert y1[1] < y0[1]

    def test_zero_field_is_fixed_point(self):
        p = DiseaseParams(r0=0.0, gamma=0.0, sigma=0.0,
                          stage=StageRates(0, 0, 0, 0, 0, 0, 0.6, 0.3, 0.1))
        for family in FAMILIES:
            spec = ModelSpec(family)
            y0 = np.random.default_rng(1).dirichlet(np.ones(spec.n_compartments))
            np.testing.assert_array_equal(step(spec, p, y0, 0.0, 1.0), y0)

    def test_one_day_matches_fine_euler(self):
        p = DiseaseParams(r0=3.0, gamma=0.1)
        y0 = np.array([0.9999, 1e-4, 0.0])
        ref = euler_reference("SIR", {"r0": np.array([3.0]), "gamma": np.array([0.1])}, y0[None], 1)[0, -1]
        np.testing.assert_allclose(step(ModelSpec("SIR"), p, y0, 0.0, 1.0), ref, rtol=0, atol=1e-6)

    def test_dt_positive(self):
        with pytest.raises(InvalidParameterError):
            step(ModelSpec("SIR"), DiseaseParams(), [0.9, 0.1, 0.0], 0.0, 0.0)

    def test_clamp_renormalises(self):
        y = np.array([0.5, -1e-13, 0.5 + 1e-13])
        low = _clamp(y)
        assert low == -1e-13
        assert y[1] == 0.0 and abs(y.sum() - 1) < 1e-15

    def test_large_negative_is_integrator_failure(self):
        # an absurd step size overshoots far below zero
        with pytest.raises(IntegratorError):
            step(ModelSpec("SIR"), DiseaseParams(r0=50, gamma=1.0), [0.5, 0.5, 0.0], 0.0, 10.0)


class TestSimulate:
    def test_analytic_peak(self, sir, headline):
        traj = simulate(sir, headline, horizon_days=365)
        assert traj.infected.max() == pytest.approx(PEAK_R0_3, abs=1e-3)

    def test_analytic_final_size(self, sir, headline):
        traj = simulate(sir, headline, horizon_days=365)
        assert traj["R"][-1] == pytest.approx(FINAL_R0_3, abs=1e-3)

    def test_full_suppression(self, sir, headline):
        traj = simulate(sir, headline, InterventionSchedule.constant(1.0, 200), 200)
        assert np.all(traj.incidence == 0.0)
        assert np.all(traj["S"] == traj["S"][0])

    def test_shapes(self, sir, headline):
        traj = simulate(sir, headline, horizon_days=50)
        assert traj.states.shape == (51, 3)
        assert len(traj.times) == len(traj.incidence) + 1
        np.testing.assert_array_equal(traj.incidence, traj["S"][:-1] - traj["S"][1:])

    def test_zero_horizon(self, sir, headline):
        traj = simulate(sir, headline, horizon_days=0)
        assert traj.states.shape == (1, 3) and traj.incidence.size == 0

    def test_bit_identical(self, headline):
        spec = ModelSpec("SEI3RD")
        a = simulate(spec, headline, horizon_days=200)
        b = simulate(spec, headline, horizon_days=200)
        assert a == b

    def test_schedule_must_cover_horizon(self, sir, headline):
        with pytest.raises(InvalidParameterError):
            simulate(sir, headline, InterventionSchedule.constant(0.0, 10), 20)

    def test_immutable(self, sir, headline):
        traj = simulate(sir, headline, horizon_days=5)
        with pytest.raises(ValueError):
            traj.states[0, 0] = 0.0

    @pytest.mark.parametrize("family", FAMILIES)
    def test_matches_high_accuracy_solver(self, family):
        """RK4 at dt=0.25 against DOP853 with tight tolerances."""
        spec = ModelSpec(family)
        p = DiseaseParams(r0=3.0, gamma=0.1, iota=1e-4)
        st_ = p.stage
        beta, g, s = p.beta, p.gamma, p.sigma

        def rhs(t, y):
            if family is Family.SIR:
                return [-beta * y[0] * y[1], beta * y[0] * y[1] - g * y[1], g * y[1]]
            if family is Family.SEIR:
                return [-beta * y[0] * y[2], beta * y[0] * y[2] - s * y[1], s * y[1] - g * y[2], g * y[2]]
            lam = beta * (st_.w1 * y[2] + st_.w2 * y[3] + st_.w3 * y[4])
            return [
                -lam * y[0], lam * y[0] - s * y[1], s * y[1] - (st_.p1 + st_.g1) * y[2],
                st_.p1 * y[2] - (st_.p2 + st_.g2) * y[3], st_.p2 * y[3] - (st_.delta + st_.g3) * y[4],
                st_.g1 * y[2] + st_.g2 * y[3] + st_.g3 * y[4], st_.delta * y[4],
            ]

        y0 = init_state(spec, p)
        ref = solve_ivp(rhs, (0, 200), y0, t_eval=np.arange(201), method="DOP853", rtol=1e-12, atol=1e-15)
        traj = simulate(spec, p, horizon_days=200)
        np.testing.assert_allclose(traj.states, ref.y.T, rtol=0, atol=2e-5)


@st.composite
def model_case(draw):
    family = draw(st.sampled_from(FAMILIES))
    r0 = draw(st.floats(0.2, 8.0))
    gamma = draw(st.floats(0.02, 0.5))
    sigma = draw(st.floats(0.05, 1.0))
    iota = draw(st.floats(1e-6, 0.05))
    u = draw(st.floats(0.0, 1.0))
    return ModelSpec(family), DiseaseParams(r0=r0, gamma=gamma, sigma=sigma, iota=iota), u


class TestInvariants:
    @settings(max_examples=200, deadline=None)
    @given(model_case())
    def test_conservation_and_sign(self, case):
        spec, p, u = case
        traj = simulate(spec, p, horizon_days=365, u=u)
        assert np.all(np.abs(traj.states.sum(axis=1) - 1) <= 1e-9)
        assert np.all(traj.states >= 0)

    @settings(max_examples=100, deadline=None)
    @given(model_case())
    def test_monotone_cumulative(self, case):
        spec, p, u = case
        traj = simulate(spec, p, horizon_days=365, u=u)
        assert np.all(np.diff(traj["S"]) <= 0)
        assert np.all(np.diff(traj["R"]) >= 0)
        if spec.family is Family.SEI3RD:
            assert np.all(np.diff(traj["D"]) >= 0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.5, 6.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_intervention_monotonicity(self, r0, a, b):
        lo, hi = sorted((a, b))
        spec, p = ModelSpec("SIR"), DiseaseParams(r0=r0, gamma=0.1)
        peak_lo = simulate(spec, p, horizon_days=365, u=lo).infected.max()
        peak_hi = simulate(spec, p, horizon_days=365, u=hi).infected.max()
        assert peak_hi <= peak_lo
