import math

import numpy as np
import pytest
from scipy.special import gamma as gamma_fn

from conftest import make_theta
from persched.errors import DataError, InfeasibleError
from persched.likelihood import cumulative_hazard
from persched.params import default_model_spec
from persched.scheduling import ANNUAL, PRIAS
from persched.simulation import (
    CompoundLossSpec,
    PolicySummary,
    PooledSummary,
    ScheduleOutcome,
    SimConfig,
    compound_loss,
    constrained_select,
    draw_true_gr_time,
    pooled_estimates,
    run_policy,
    simulate_dataset,
    summary_from_json,
    summary_to_json,
)
from persched.types import RandomEffects, WeibullHazard


def flat_psa_patient(T_star, subgroup=0, horizon=20.0):
    from persched.simulation import TruePatient

    cfg = SimConfig(n_datasets=1, n_patients=2)
    times = cfg.psa_visit_times(horizon)
    return TruePatient(
        subgroup=subgroup,
        age=70.0,
        b_true=np.zeros(3),
        T_star=T_star,
        psa_times=times,
        psa_values=np.full(len(times), 5.0),
    )


class TestDrawTrueGrTime:
    def test_exponential_mean(self, prias_spec):
        from persched.simulation import EventTimeSampler

        theta = make_theta(prias_spec, baseline=WeibullHazard(1.0, 2.0))
        b = RandomEffects(np.zeros(3))
        rng = np.random.default_rng(0)
        sampler = EventTimeSampler(70.0, theta, b, prias_spec)
        draws = np.array([sampler.draw(rng) for _ in range(4000)])
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert draws.mean() == pytest.approx(2.0, abs=3 * se)

    def test_weibull_mean_first_subgroup(self, prias_spec):
        from persched.simulation import EventTimeSampler

        theta = make_theta(prias_spec, baseline=WeibullHazard(1.5, 4.0))
        b = RandomEffects(np.zeros(3))
        rng = np.random.default_rng(1)
        sampler = EventTimeSampler(70.0, theta, b, prias_spec)
        draws = np.array([sampler.draw(rng) for _ in range(4000)])
        expected = 4.0 * gamma_fn(1.0 + 1.0 / 1.5)
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert draws.mean() == pytest.approx(expected, abs=3 * se)

    def test_inversion_identity(self, prias_spec, prias_theta, b_zero):
        H5 = cumulative_hazard(70.0, prias_theta, b_zero, prias_spec, 0.0, 5.0)
        rng = np.random.default_rng(2)
        T = draw_true_gr_time(70.0, prias_theta, b_zero, prias_spec, rng, u=math.exp(-H5))
        assert T == pytest.approx(5.0, abs=1e-6)

    def test_administrative_infinity(self, prias_spec):
        theta = make_theta(prias_spec, baseline=WeibullHazard(1.0, 1e9))
        rng = np.random.default_rng(3)
        T = draw_true_gr_time(70.0, theta, RandomEffects(np.zeros(3)), prias_spec, rng)
        assert T == math.inf


class TestSimulateDataset:
    def test_interval_rules(self):
        cfg = SimConfig(n_datasets=1, n_patients=60, master_seed=11)
        train, test = simulate_dataset(cfg, 0)
        assert len(train) == 45 and len(test) == 15
        for history, interval in train.patients:
            if interval.exact:
                # event observed exactly: PSA stops at the event time
                assert history.psa[-1].time <= interval.l + 1e-9
            else:
                assert interval.right_censored
            assert history.psa[0].time == 0.0

    def test_psa_visit_grid(self):
        cfg = SimConfig(n_datasets=1, n_patients=4)
        times = cfg.psa_visit_times(3.0)
        expected = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0]
        np.testing.assert_allclose(times, expected)

    def test_subgroups_roughly_uniform(self):
        cfg = SimConfig(n_datasets=1, n_patients=120, master_seed=3)
        _, test = simulate_dataset(cfg, 0)
        train, _ = simulate_dataset(cfg, 0)
        groups = [t.subgroup for t in test]
        assert set(groups) <= {0, 1, 2}

    def test_subgroup_event_time_ordering(self):
        cfg = SimConfig(n_datasets=1, n_patients=400, master_seed=19)
        _, test = simulate_dataset(cfg, 0)
        cfg2 = SimConfig(n_datasets=1, n_patients=400, train_fraction=0.01, master_seed=19)
        _, test = simulate_dataset(cfg2, 0)
        by_group = {g: [] for g in range(3)}
        for p in test:
            if math.isfinite(p.T_star):
                by_group[p.subgroup].append(p.T_star)
        means = [np.mean(by_group[g]) for g in range(3)]
        ses = [np.std(by_group[g], ddof=1) / math.sqrt(len(by_group[g])) for g in range(3)]
        assert means[0] < means[1] + 3 * (ses[0] + ses[1])
        assert means[1] < means[2] + 3 * (ses[1] + ses[2])
        assert means[0] < means[2]

    def test_deterministic_given_seed(self):
        cfg = SimConfig(n_datasets=1, n_patients=25, master_seed=9)
        t1, s1 = simulate_dataset(cfg, 0)
        t2, s2 = simulate_dataset(cfg, 0)
        for (h1, i1), (h2, i2) in zip(t1.patients, t2.patients):
            assert h1 == h2 and i1 == i2
        for a, b in zip(s1, s2):
            assert a.T_star == b.T_star
            np.testing.assert_array_equal(a.psa_values, b.psa_values)


class TestRunPolicyBaselines:
    def test_annual_mid_year_detection(self):
        patient = flat_psa_patient(5.5)
        cfg = SimConfig(n_datasets=1, n_patients=2)
        out = run_policy(patient, ANNUAL, None, cfg)
        assert out.n_biopsies == 6
        assert out.offset == pytest.approx(0.5)

    def test_annual_early_event(self):
        patient = flat_psa_patient(0.5)
        cfg = SimConfig(n_datasets=1, n_patients=2)
        out = run_policy(patient, ANNUAL, None, cfg)
        assert out.n_biopsies == 1
        assert out.offset == pytest.approx(0.5)

    def test_prias_flat_psa_fixed_slots(self):
        patient = flat_psa_patient(5.0)
        cfg = SimConfig(n_datasets=1, n_patients=2)
        out = run_policy(patient, PRIAS, None, cfg)
        assert out.n_biopsies == 3  # biopsies at 1, 4, 7
        assert out.offset == pytest.approx(2.0)

    def test_undetected_beyond_horizon(self):
        patient = flat_psa_patient(25.0)
        cfg = SimConfig(n_datasets=1, n_patients=2)
        out = run_policy(patient, ANNUAL, None, cfg)
        assert out.undetected and out.offset is None


class TestPooledEstimates:
    def _outcome(self, n, offset_months, subgroup=0):
        return ScheduleOutcome(
            n_biopsies=n,
            detection_time=offset_months / 12.0 + 1.0,
            offset=offset_months / 12.0,
            undetected=False,
            subgroup=subgroup,
        )

    def test_single_dataset_equals_plain_stats(self):
        outs = [self._outcome(n, o) for n, o in [(1, 3.0), (2, 6.0), (4, 9.0)]]
        summary = pooled_estimates([{"policy": outs}])
        s = summary.overall["policy"]
        assert s.mean_n == pytest.approx(np.mean([1, 2, 4]))
        assert s.sd_n == pytest.approx(np.std([1, 2, 4], ddof=1))
        assert s.mean_o_months == pytest.approx(6.0)
        assert s.sd_o_months == pytest.approx(np.std([3, 6, 9], ddof=1))

    def test_equal_sizes_pool_to_simple_average(self):
        d1 = [self._outcome(n, o) for n, o in [(1, 2.0), (3, 4.0)]]
        d2 = [self._outcome(n, o) for n, o in [(5, 6.0), (7, 8.0)]]
        summary = pooled_estimates([{"p": d1}, {"p": d2}])
        assert summary.overall["p"].mean_n == pytest.approx((2.0 + 6.0) / 2)

    def test_matches_flat_recomputation_oracle(self):
        rng = np.random.default_rng(31)
        datasets = []
        for _ in range(5):
            nk = int(rng.integers(3, 12))
            outs = [
                self._outcome(int(rng.integers(1, 9)), float(rng.uniform(0, 30)),
                              subgroup=int(rng.integers(0, 3)))
                for _ in range(nk)
            ]
            datasets.append({"p": outs})
        summary = pooled_estimates(datasets)
        # means pool with n_k weights = flat mean over all patients
        all_n = [o.n_biopsies for d in datasets for o in d["p"]]
        all_o = [o.offset * 12 for d in datasets for o in d["p"]]
        assert summary.overall["p"].mean_n == pytest.approx(np.mean(all_n), abs=1e-12)
        assert summary.overall["p"].mean_o_months == pytest.approx(np.mean(all_o), abs=1e-12)
        # variances pool with (n_k - 1) weights
        num = sum(
            (len(d["p"]) - 1) * np.var([o.n_biopsies for o in d["p"]], ddof=1)
            for d in datasets
        )
        den = sum(len(d["p"]) - 1 for d in datasets)
        assert summary.overall["p"].sd_n**2 == pytest.approx(num / den, abs=1e-12)

    def test_undetected_excluded_but_counted(self):
        outs = [
            self._outcome(2, 6.0),
            ScheduleOutcome(n_biopsies=4, detection_time=None, offset=None,
                            undetected=True, subgroup=0),
        ]
        summary = pooled_estimates([{"p": outs}])
        assert summary.overall["p"].mean_n == 2.0
        assert summary.overall["p"].n_undetected == 1
        assert summary.overall["p"].n_patients == 2

    def test_json_round_trip(self):
        outs = [self._outcome(2, 6.0, subgroup=1)]
        summary = pooled_estimates([{"p": outs}])
        again = summary_from_json(summary_to_json(summary))
        assert again.overall["p"] == summary.overall["p"]
        assert again.by_subgroup == summary.by_subgroup


def _summary(policy, mean_n, mean_o):
    return PolicySummary(
        policy=policy, n_patients=10, n_undetected=0, mean_n=mean_n, sd_n=1.0,
        mean_o_months=mean_o, sd_o_months=2.0,
        quantiles_n=(1.0,) * 6, quantiles_o_months=(1.0,) * 6,
    )


class TestCompoundAndConstrained:
    def setup_method(self):
        self.pooled = PooledSummary(
            overall={
                "annual": _summary("annual", 5.24, 6.01),
                "exp": _summary("exp", 1.92, 15.08),
                "med": _summary("med", 2.06, 13.88),
            },
            by_subgroup={},
            n_datasets=1,
        )

    def test_pure_mean_n_ranking(self):
        losses = compound_loss(self.pooled, CompoundLossSpec(criteria=(("mean_n", 1.0),)))
        assert min(losses, key=losses.get) == "exp"

    def test_equal_weights_sum(self):
        spec = CompoundLossSpec(criteria=(("mean_n", 0.5), ("mean_o", 0.5)))
        losses = compound_loss(self.pooled, spec)
        assert losses["annual"] == pytest.approx(0.5 * 5.24 + 0.5 * 6.01)

    def test_hand_computed_values(self):
        spec = CompoundLossSpec(criteria=(("mean_n", 0.25), ("mean_o", 0.75)))
        losses = compound_loss(self.pooled, spec)
        assert losses["exp"] == pytest.approx(0.25 * 1.92 + 0.75 * 15.08)

    def test_weights_validated(self):
        with pytest.raises(DataError):
            CompoundLossSpec(criteria=(("mean_n", 0.7), ("mean_o", 0.7)))

    def test_constraint_excludes_slow_detectors(self):
        # a 12-month offset cap excludes the central-tendency policies
        choice = constrained_select(self.pooled, "mean_n", [("mean_o", 12.0)])
        assert choice == "annual"

    def test_no_constraints_global_argmin(self):
        choice = constrained_select(self.pooled, "mean_n", [])
        assert choice == "exp"

    def test_infeasible_reported(self):
        with pytest.raises(InfeasibleError) as exc:
            constrained_select(self.pooled, "mean_n", [("mean_o", 0.0)])
        assert "mean_o" in str(exc.value)

    def test_unknown_criterion(self):
        with pytest.raises(DataError):
            compound_loss(self.pooled, CompoundLossSpec(criteria=(("nonsense", 1.0),)))
