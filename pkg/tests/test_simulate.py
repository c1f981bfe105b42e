"""Monte Carlo harness: generation laws, evaluation, reproducibility."""

import numpy as np
import pytest
from scipy import stats

from wamdf.procedures import run_procedure
from wamdf.simulate import (
    SimConfig,
    evaluate,
    generate_du,
    generate_model1,
    run_simulation,
    simulation_preset,
    substream,
)


class TestGenerateModel1:
    def test_all_null_uniform_pvalues(self):
        config = SimConfig(M=10_000, n_reps=1, seed=1, p_law="fixed", p_fixed=0.0)
        theta, p, gamma, pvalues = generate_model1(config, substream(1, 0))
        assert not theta.any()
        assert stats.kstest(pvalues, "uniform").pvalue > 0.01

    def test_vanishing_effect_is_null(self):
        config = SimConfig(
            M=10_000, n_reps=1, seed=2, p_law="fixed", p_fixed=1.0,
            gamma_law="fixed", gamma_fixed=1e-12,
        )
        theta, _, _, pvalues = generate_model1(config, substream(2, 0))
        assert theta.all()
        assert stats.kstest(pvalues, "uniform").pvalue > 0.01

    def test_theta_mean_matches_prior(self):
        config = simulation_preset(1, a=5, M=10_000, n_reps=1, seed=3)
        theta, _, _, _ = generate_model1(config, substream(3, 0))
        se = np.sqrt(0.25 / config.M)
        assert abs(theta.mean() - 0.5) <= 3 * se

    def test_homogeneous_a1_gammas(self):
        config = simulation_preset(1, a=1, M=100, n_reps=1, seed=4)
        _, _, gamma, _ = generate_model1(config, substream(4, 0))
        assert np.ptp(gamma) == 0.0 and gamma[0] == 1.0


class TestGenerateDu:
    def test_all_signal(self):
        pvalues = generate_du(0, 5, substream(5, 0))
        assert np.array_equal(pvalues, np.zeros(5))
        report = run_procedure("UA", pvalues, alpha=0.01, lam=0.5)
        assert report.n_rejected == 5
        theta = np.ones(5, dtype=bool)
        assert evaluate(theta, report) == (0.0, 1.0)

    def test_all_null_fdp_is_indicator(self):
        pvalues = generate_du(5, 0, substream(6, 0))
        assert pvalues.min() > 0.0
        report = run_procedure("UU", pvalues, alpha=0.05)
        theta = np.zeros(5, dtype=bool)
        fdp, cdp = evaluate(theta, report)
        assert fdp == float(report.n_rejected > 0)
        assert cdp == 0.0

    def test_layout(self):
        pvalues = generate_du(3, 2, substream(7, 0))
        assert pvalues.size == 5
        assert np.array_equal(pvalues[3:], [0.0, 0.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            generate_du(0, 0, substream(8, 0))


class TestEvaluate:
    def _report(self, rejected):
        from wamdf.procedures import DecisionReport

        rejected = np.asarray(rejected, dtype=bool)
        n = rejected.size
        return DecisionReport(
            variant="UU", alpha=0.05, lam=None, u=1.0, t_hat=0.0, m0_hat=n,
            rejected=rejected, pvalues=np.zeros(n), weights=np.ones(n),
            q=np.zeros(n),
        )

    def test_zero_rejections(self):
        assert evaluate([True, False], self._report([False, False])) == (0.0, 0.0)

    def test_all_nulls_rejected(self):
        assert evaluate([False, False], self._report([True, True]))[0] == 1.0

    def test_mixed_counts(self):
        fdp, cdp = evaluate([True, True, False, False], self._report([True, False, True, False]))
        assert (fdp, cdp) == (0.5, 0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate([True], self._report([True, False]))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimConfig(M=0, n_reps=1, seed=1)
        with pytest.raises(ValueError):
            SimConfig(M=1, n_reps=1, seed=1, weight_mode="nope")
        with pytest.raises(ValueError):
            SimConfig(M=1, n_reps=1, seed=1, lambda_rule="fixed")
        with pytest.raises(ValueError):
            SimConfig(M=1, n_reps=1, seed=1, variants=("UU", "ZZ"))

    def test_presets(self):
        assert simulation_preset(1).p_law == "fixed"
        assert simulation_preset(2).p_law == "uniform"
        assert simulation_preset(3).weight_mode == "perturbed"
        assert simulation_preset(4).weight_mode == "independent"
        with pytest.raises(ValueError):
            simulation_preset(5)

    def test_from_file(self, tmp_path):
        path = tmp_path / "sim.cfg"
        path.write_text(
            "# smoke config\n"
            "preset = 3\n"
            "M = 50\n"
            "n_reps = 4\n"
            "seed = 9\n"
            "gamma_a = 3\n"
        )
        config = SimConfig.from_file(path)
        assert config.weight_mode == "perturbed"
        assert (config.M, config.n_reps, config.seed) == (50, 4, 9)
        assert config.gamma_a == 3.0

    def test_from_file_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "sim.cfg"
        path.write_text("M = 10\nn_reps = 2\nseed = 1\nbogus = 3\n")
        with pytest.raises(ValueError, match="bogus"):
            SimConfig.from_file(path)


class TestRunSimulation:
    def test_bitwise_reproducibility(self):
        config = simulation_preset(1, a=3, M=60, n_reps=10, seed=21)
        s1 = run_simulation(config)
        s2 = run_simulation(config)
        for v in config.variants:
            np.testing.assert_array_equal(s1.fdp[v], s2.fdp[v])
            np.testing.assert_array_equal(s1.cdp[v], s2.cdp[v])

    def test_threads_do_not_change_results(self):
        config = simulation_preset(3, a=5, M=40, n_reps=8, seed=22)
        serial = run_simulation(config, threads=1)
        parallel = run_simulation(config, threads=2)
        for v in config.variants:
            np.testing.assert_array_equal(serial.fdp[v], parallel.fdp[v])
            np.testing.assert_array_equal(serial.cdp[v], parallel.cdp[v])

    def test_homogeneous_weights_make_wa_equal_ua(self):
        config = simulation_preset(1, a=1, M=150, n_reps=12, seed=23)
        summary = run_simulation(config)
        np.testing.assert_array_equal(summary.cdp["WA"], summary.cdp["UA"])
        np.testing.assert_array_equal(summary.fdp["WA"], summary.fdp["UA"])
        np.testing.assert_array_equal(summary.cdp["WU"], summary.cdp["UU"])

    def test_smoke_ordering_and_control(self):
        # small version of the heterogeneous study: adaptive/weighted
        # variants order by power, and every variant controls the level
        config = simulation_preset(1, a=5, M=200, n_reps=100, seed=7)
        summary = run_simulation(config, threads=2)
        cdp = {v: summary.mean(v, "cdp") for v in config.variants}
        se = {v: summary.se(v, "cdp") for v in config.variants}
        assert cdp["WA"] >= cdp["UA"] - 2 * (se["WA"] + se["UA"])
        assert cdp["UA"] >= cdp["UU"] - 2 * (se["UA"] + se["UU"])
        assert cdp["WA"] >= cdp["WU"] - 2 * (se["WA"] + se["WU"])
        for v in config.variants:
            assert summary.mean(v, "fdp") <= 0.05 + 2 * summary.se(v, "fdp")

    def test_less_conservative_per_replication(self):
        # with the null-count estimate at or below M, the adaptive variant
        # rejects at least as much as its unadaptive counterpart
        import warnings

        from wamdf.weights import asymptotically_optimal_weights, PriorSpec

        config = simulation_preset(2, a=5, M=120, n_reps=30, seed=31)
        checked = 0
        for rep in range(config.n_reps):
            rng = substream(config.seed, rep)
            theta, p, gamma, pvalues = generate_model1(config, rng)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                profile = asymptotically_optimal_weights(PriorSpec(p, gamma), 0.05)
            lam, w, u = profile.t_bar, profile.weights, profile.u
            wa = run_procedure("WA", pvalues, weights=w, alpha=0.05, lam=lam, u=u)
            wu = run_procedure("WU", pvalues, weights=w, alpha=0.05, u=u)
            ua = run_procedure("UA", pvalues, alpha=0.05, lam=lam, u=1.0)
            uu = run_procedure("UU", pvalues, alpha=0.05, u=1.0)
            if wa.m0_hat <= config.M:
                checked += 1
                assert wa.n_rejected >= wu.n_rejected
            if ua.m0_hat <= config.M:
                assert ua.n_rejected >= uu.n_rejected
        assert checked > 15

    def test_heterogeneous_prior_studies_ordering(self):
        # the published pattern at moderate effect spread: weighted/adaptive
        # variants order by power and every variant holds the level
        for preset in (2, 3):
            config = simulation_preset(preset, a=3, M=200, n_reps=60, seed=13)
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                summary = run_simulation(config, threads=2)
            cdp = {v: summary.mean(v, "cdp") for v in config.variants}
            se = {v: summary.se(v, "cdp") for v in config.variants}
            assert cdp["WA"] >= cdp["UA"] - 2 * (se["WA"] + se["UA"])
            assert cdp["UA"] >= cdp["UU"] - 2 * (se["UA"] + se["UU"])
            assert cdp["WA"] >= cdp["WU"] - 2 * (se["WA"] + se["WU"])
            for v in config.variants:
                assert summary.mean(v, "fdp") <= 0.05 + 2 * summary.se(v, "fdp")

    def test_skipped_replications_counted(self):
        # a single strong test with prior drawn above 1 - alpha admits no
        # solution; those replications must be skipped and counted
        config = SimConfig(
            M=1, n_reps=40, seed=30, p_law="uniform",
            gamma_law="fixed", gamma_fixed=2.5,
        )
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            summary = run_simulation(config)
        assert summary.n_skipped > 0
        assert summary.n_completed == config.n_reps - summary.n_skipped
        for v in config.variants:
            assert summary.fdp[v].size == summary.n_completed

    def test_summary_serialization(self, tmp_path):
        import json

        from wamdf.simulate import write_summary_json

        config = simulation_preset(1, a=3, M=30, n_reps=3, seed=41)
        summary = run_simulation(config)
        path = tmp_path / "summary.json"
        write_summary_json(summary, path)
        with open(path) as fh:
            d = json.load(fh)
        assert d["M"] == 30 and d["n_completed"] == 3
        assert set(d["variants"]) == set(config.variants)

    def test_single_rep_se_is_none(self):
        config = simulation_preset(1, a=3, M=30, n_reps=1, seed=43)
        summary = run_simulation(config)
        assert summary.se("WA", "cdp") is None
        assert summary.to_dict()["variants"]["WA"]["cdp_se"] is None
