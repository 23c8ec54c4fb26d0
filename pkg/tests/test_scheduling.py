import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_hazard_posterior, patient_after_biopsy
from oracles import brute_force_rates, ols_slope
from persched.errors import DataError, TailDominatedError, UndefinedRateError
from persched.prediction import NewPatientState, sample_subject_effects, survival_inverse
from persched.scheduling import (
    ANNUAL,
    EXPECTED,
    MEDIAN,
    PRIAS,
    ClassificationRates,
    KappaSource,
    Policy,
    VisitState,
    annual_next_biopsy,
    classification_rates,
    dyn_risk_fixed,
    f1_score,
    next_biopsy_decision,
    prias_fixed_slots,
    prias_next_biopsy,
    propose,
    propose_dyn_risk,
    propose_expected,
    propose_hybrid,
    propose_median,
    psa_doubling_time,
    select_kappa,
    youden_j,
)
from persched.types import PsaMeasurement


@pytest.fixture(scope="module")
def exp_state_pp(prias_spec):
    post = constant_hazard_posterior(prias_spec, 0.5)
    state = NewPatientState.from_history(patient_after_biopsy(0.0))
    state = NewPatientState(history=state.history, t=0.0, s=0.0)
    pp = sample_subject_effects(state, post, per_theta=5, n_theta=1, seed=1)
    return state, pp


class TestPersonalizedProposals:
    def test_expected_exponential(self, exp_state_pp):
        state, pp = exp_state_pp
        prop = propose_expected(state, pp)
        assert prop.u == pytest.approx(2.0, rel=0.01)
        assert prop.u >= state.t
        assert prop.diagnostics.expected == prop.u

    def test_median_exponential(self, exp_state_pp):
        state, pp = exp_state_pp
        prop = propose_median(state, pp)
        assert prop.u == pytest.approx(math.log(2) / 0.5, abs=1e-3)
        assert prop.u <= propose_expected(state, pp).u  # right-skewed

    def test_median_equals_quantile_half(self, exp_state_pp):
        state, pp = exp_state_pp
        assert propose_median(state, pp).u == survival_inverse(0.5, state, pp).u

    def test_dyn_risk_kappa_half_equals_median(self, exp_state_pp):
        state, pp = exp_state_pp
        assert propose_dyn_risk(state, pp, 0.5).u == propose_median(state, pp).u

    def test_dyn_risk_tracks_risk_level(self, exp_state_pp):
        state, pp = exp_state_pp
        prop = propose_dyn_risk(state, pp, 0.95)
        from persched.prediction import dynamic_survival

        assert dynamic_survival(prop.u, state, pp) == pytest.approx(0.95, abs=2e-4)

    def test_kappa_monotone(self, exp_state_pp):
        state, pp = exp_state_pp
        us = [propose_dyn_risk(state, pp, k).u for k in (0.99, 0.9, 0.7, 0.5, 0.2)]
        assert us == sorted(us)

    def test_tail_dominated_raises(self, prias_spec):
        post = constant_hazard_posterior(prias_spec, 1e-4)
        state = NewPatientState.from_history(patient_after_biopsy(0.0))
        pp = sample_subject_effects(state, post, per_theta=3, n_theta=1, seed=2)
        with pytest.raises(TailDominatedError) as exc:
            propose_expected(state, pp)
        assert exc.value.tail_prob > 0.9

    def test_hybrid_tight_uses_center(self, prias_spec):
        post = constant_hazard_posterior(prias_spec, 6.0)  # sd ~ 1/6 year
        state = NewPatientState.from_history(patient_after_biopsy(0.0))
        pp = sample_subject_effects(state, post, per_theta=5, n_theta=1, seed=3)
        prop = propose_hybrid(state, pp, "med", 0.95)
        assert not prop.diagnostics.hybrid_fallback
        assert prop.u == pytest.approx(propose_median(state, pp).u, abs=1e-9)

    def test_hybrid_diffuse_falls_back(self, prias_spec):
        post = constant_hazard_posterior(prias_spec, 0.2)  # median - q025 ~ 3.3y
        state = NewPatientState.from_history(patient_after_biopsy(0.0))
        pp = sample_subject_effects(state, post, per_theta=5, n_theta=1, seed=4)
        prop = propose_hybrid(state, pp, "med", 0.95)
        assert prop.diagnostics.hybrid_fallback
        assert prop.u == pytest.approx(propose_dyn_risk(state, pp, 0.95).u, abs=1e-9)

    def test_hybrid_threshold_is_strict(self, exp_state_pp):
        # exponential(0.5): median - q025 = (ln2 - ln(40/39)) / 0.5 ~ 1.34 < 3
        state, pp = exp_state_pp
        prop = propose_hybrid(state, pp, "med", 0.95)
        assert not prop.diagnostics.hybrid_fallback


class TestClassificationRates:
    def test_perfect_separation(self):
        cohort = [(0.1, True), (0.2, True), (0.9, False), (0.95, False)]
        rates = classification_rates(0.5, 1.0, 1.0, cohort)
        assert rates.tpr == 1.0 and rates.fpr == 0.0 and rates.ppv == 1.0
        assert f1_score(rates) == 1.0 and youden_j(rates) == 1.0

    def test_no_events_tpr_undefined_fpr_zero(self):
        cohort = [(1.0, False), (1.0, False)]
        with pytest.raises(UndefinedRateError) as exc:
            classification_rates(0.5, 1.0, 1.0, cohort)
        assert "TPR" in str(exc.value)
        assert exc.value.fpr == 0.0

    def test_matches_brute_force_counting(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(4, 40))
            risks = rng.uniform(size=n)
            cases = rng.uniform(size=n) < 0.4
            if not cases.any() or cases.all():
                continue
            kappa = float(rng.uniform(0.05, 0.95))
            tpr, fpr, ppv = brute_force_rates(kappa, risks, cases)
            if ppv is None:
                with pytest.raises(UndefinedRateError):
                    classification_rates(kappa, 0, 1, list(zip(risks, cases)))
                continue
            rates = classification_rates(kappa, 0, 1, list(zip(risks, cases)))
            assert rates.tpr == pytest.approx(tpr)
            assert rates.fpr == pytest.approx(fpr)
            assert rates.ppv == pytest.approx(ppv)

    def test_rate_bounds_validated(self):
        with pytest.raises(DataError):
            ClassificationRates(tpr=1.2, fpr=0.0, ppv=0.5)


class TestScores:
    def test_f1_harmonic_mean(self):
        rates = ClassificationRates(tpr=1.0, fpr=0.0, ppv=0.5)
        assert f1_score(rates) == pytest.approx(2 / 3)

    def test_f1_zero_case(self):
        assert f1_score(ClassificationRates(tpr=0.0, fpr=0.0, ppv=0.0)) == 0.0

    def test_youden_zero_when_equal(self):
        rates = ClassificationRates(tpr=0.4, fpr=0.4, ppv=0.3)
        assert youden_j(rates) == 0.0

    @given(
        st.floats(0, 1, allow_nan=False),
        st.floats(0, 1, allow_nan=False),
        st.floats(0, 1, allow_nan=False),
    )
    @settings(max_examples=50, deadline=None)
    def test_score_oracles(self, tpr, fpr, ppv):
        rates = ClassificationRates(tpr=tpr, fpr=fpr, ppv=ppv)
        assert youden_j(rates) == pytest.approx(tpr - fpr)
        if tpr + ppv > 0:
            assert f1_score(rates) == pytest.approx(2 * tpr * ppv / (tpr + ppv))


def brute_force_select(objective, cohort, grid_step=0.01):
    best = None
    n_grid = int(round(1 / grid_step))
    for i in range(n_grid + 1):
        kappa = i * grid_step
        tpr, fpr, ppv = brute_force_rates(kappa, np.array([p for p, _ in cohort]),
                                          np.array([c for _, c in cohort]))
        if tpr is None or fpr is None or ppv is None:
            continue
        value = (2 * tpr * ppv / (tpr + ppv) if (tpr + ppv) else 0.0) if objective == "f1" \
            else tpr - fpr
        if best is None or value >= best[0]:
            best = (value, kappa)
    return best


class TestSelectKappa:
    def test_perfectly_separable_ties_toward_largest(self):
        cohort = [(0.1, True), (0.15, True), (0.8, False), (0.9, False)]
        sel = select_kappa("f1", 1.0, 1.0, cohort)
        assert sel.objective_value == 1.0
        # every grid kappa in [0.15, 0.79] achieves F1 = 1; largest wins
        assert sel.chosen_kappa == pytest.approx(0.79)

    @pytest.mark.parametrize("objective", ["f1", "youden"])
    def test_matches_brute_force(self, objective):
        rng = np.random.default_rng(17)
        for _ in range(30):
            n = int(rng.integers(5, 60))
            cohort = list(zip(rng.uniform(size=n), rng.uniform(size=n) < 0.35))
            if not any(c for _, c in cohort) or all(c for _, c in cohort):
                continue
            sel = select_kappa(objective, 0.0, 1.0, cohort)
            value, kappa = brute_force_select(objective, cohort)
            assert sel.objective_value == pytest.approx(value)
            assert sel.chosen_kappa == pytest.approx(kappa)

    def test_objectives_can_differ(self):
        # fixed fixture where F1 and Youden select different thresholds
        # (values frozen from the brute-force oracle)
        cohort = [
            (0.19, False), (0.40, False), (0.89, True),
            (0.56, False), (0.57, False), (0.21, True),
        ]
        f1 = select_kappa("f1", 0.0, 1.0, cohort)
        yj = select_kappa("youden", 0.0, 1.0, cohort)
        assert f1.chosen_kappa == pytest.approx(1.00)
        assert f1.objective_value == pytest.approx(0.5)
        assert yj.chosen_kappa == pytest.approx(0.39)
        assert yj.objective_value == pytest.approx(0.25)

    def test_needs_both_classes(self):
        with pytest.raises(UndefinedRateError):
            select_kappa("f1", 0.0, 1.0, [(0.5, True), (0.2, True)])


class TestPsaDoublingTime:
    def test_exact_collinear(self):
        psa = tuple(
            PsaMeasurement(t, 2.0**v) for t, v in [(0.0, 1.0), (0.5, 1.25), (1.0, 1.5)]
        )
        assert psa_doubling_time(psa) == pytest.approx(2.0, abs=1e-12)

    def test_flat_series_infinite(self):
        psa = tuple(PsaMeasurement(t, 5.0) for t in (0.0, 0.5, 1.0))
        assert psa_doubling_time(psa) == math.inf

    def test_matches_ols_oracle(self):
        rng = np.random.default_rng(23)
        times = np.sort(rng.uniform(0, 5, 12))
        times += np.arange(12) * 1e-6
        values = rng.uniform(1, 3, 12)
        psa = tuple(PsaMeasurement(float(t), float(2.0**v)) for t, v in zip(times, values))
        slope = ols_slope(np.array([p.time for p in psa]), np.array([p.log2_psa for p in psa]))
        expected = math.inf if slope <= 0 else 1.0 / slope
        assert psa_doubling_time(psa) == pytest.approx(expected, rel=1e-10)

    def test_window_restricts_points(self):
        psa = tuple(
            PsaMeasurement(t, 2.0**v)
            for t, v in [(0.0, 3.0), (1.0, 1.0), (2.0, 1.5), (3.0, 2.0)]
        )
        # full history is non-monotone; the trailing 2 years double every 2 years
        assert psa_doubling_time(psa, window=2.0) == pytest.approx(2.0, abs=1e-9)

    def test_needs_two_points(self):
        with pytest.raises(DataError):
            psa_doubling_time((PsaMeasurement(0.0, 5.0),))


def _rising_psa(doubling_years, times):
    return tuple(PsaMeasurement(t, 2.0 ** (1.0 + t / doubling_years)) for t in times)


class TestPriasSchedule:
    def test_fixed_slots(self):
        assert prias_fixed_slots(through=25.0) == [1.0, 4.0, 7.0, 10.0, 15.0, 20.0, 25.0]

    def test_slow_psa_follows_slots(self):
        psa = _rising_psa(12.0, [0.0, 0.5, 1.0])
        visit = VisitState(t=1.0, s=1.0)
        assert prias_next_biopsy(visit, psa) == 4.0

    def test_fast_psa_triggers_annual(self):
        psa = _rising_psa(8.0, [0.0, 0.5, 1.0])
        visit = VisitState(t=1.0, s=1.0)
        assert prias_next_biopsy(visit, psa) == 2.0

    def test_every_five_years_after_ten(self):
        psa = tuple(PsaMeasurement(t, 5.0) for t in (0.0, 1.0, 2.0))
        visit = VisitState(t=10.0, s=10.0)
        assert prias_next_biopsy(visit, psa) == 15.0

    def test_annual_trigger_respects_gap(self):
        psa = _rising_psa(5.0, [0.0, 1.0, 2.0, 2.5])
        visit = VisitState(t=2.5, s=2.5)
        assert prias_next_biopsy(visit, psa) == 3.5  # max(t + 1, next integer year)


class TestAnnual:
    def test_basic(self):
        assert annual_next_biopsy(0.0) == 1.0
        assert annual_next_biopsy(2.5) == 3.5

    def test_composition(self):
        t = 0.0
        for _ in range(5):
            t = annual_next_biopsy(t)
        assert t == 5.0


class TestNextBiopsyDecision:
    def test_pulls_forward_to_gap_rule(self):
        visit = VisitState(t=3.0, s=3.5, u_pv=math.inf, t_nv=4.0)
        decision = next_biopsy_decision(visit, 3.4)
        assert decision.action == "conduct"
        assert decision.time == 4.0

    def test_previous_proposal_caps(self):
        visit = VisitState(t=4.0, s=5.0, u_pv=5.0, t_nv=5.5)
        decision = next_biopsy_decision(visit, 6.0)
        assert decision.action == "conduct"
        assert decision.time == 5.0

    def test_defers_and_carries(self):
        visit = VisitState(t=4.0, s=4.5, u_pv=math.inf, t_nv=5.0)
        decision = next_biopsy_decision(visit, 8.0)
        assert decision.action == "defer"
        assert decision.time == 8.0

    def test_boundary_conducts_at_next_visit(self):
        visit = VisitState(t=1.0, s=2.0, u_pv=math.inf, t_nv=2.5)
        decision = next_biopsy_decision(visit, 2.5)
        assert decision.action == "conduct" and decision.time == 2.5

    @given(
        st.floats(0.0, 10.0, allow_nan=False),
        st.floats(0.0, 5.0, allow_nan=False),
        st.floats(0.1, 15.0, allow_nan=False),
        st.floats(0.1, 20.0, allow_nan=False),
    )
    @settings(max_examples=120, deadline=None)
    def test_gap_rule_always_enforced(self, t, ds, u, u_pv):
        s = t + ds
        visit = VisitState(t=t, s=s, u_pv=u_pv, t_nv=s + 0.5)
        decision = next_biopsy_decision(visit, u)
        if decision.action == "conduct":
            assert decision.time - t >= 1.0 - 1e-12
            assert decision.time >= s - 1e-12


class TestPolicyTypes:
    def test_fixed_kappa_validated(self):
        with pytest.raises(DataError):
            KappaSource("fixed", 1.5)
        with pytest.raises(DataError):
            KappaSource("fixed", None)
        with pytest.raises(DataError):
            KappaSource("f1", 0.5)

    def test_policies_need_kappa(self):
        with pytest.raises(DataError):
            Policy(kind="dyn_risk")
        dyn_risk_fixed(0.95)

    def test_dispatcher_baselines(self, prias_spec):
        history = patient_after_biopsy(2.0, psa_points=[(0.0, 5.0), (1.0, 5.0)])
        visit = VisitState(t=2.0, s=2.0)
        assert propose(ANNUAL, visit=visit, history=history).u == 3.0
        assert propose(PRIAS, visit=visit, history=history).u == 4.0

    def test_dispatcher_requires_pp(self):
        history = patient_after_biopsy(2.0)
        visit = VisitState(t=2.0, s=2.0)
        with pytest.raises(DataError):
            propose(EXPECTED, visit=visit, history=history)
