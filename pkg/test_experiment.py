"""
Tests for the Monte Carlo convergence and stability experiments
"""

import numpy as np
import pytest

from src.swave.errors import ConfigError, SampleError
from src.swave.experiment import (
    aggregate, convergence_study, deterministic_error, estimate_order, fit_slope, sample_error,
    sample_max_energy, spatial_smoke, stability_sweep
)
from src.swave.fem1d import assemble_operators
from src.swave.models import ConvergenceConfig, NoiseSeed, SpatialMesh
from src.swave.noise import simulate_increments
from src.swave.problem import builtin
from src.swave.stepper import discrete_energy, initial_state


def small_config(**overrides):
    values = dict(
        problem="test1", theta=0.0, m=16, levels=(4, 8), reference=32, samples=2, base_seed=99
    )
    values.update(overrides)
    return ConvergenceConfig(**values)


class TestEstimateOrder:
    def test_exact_halving(self):
        assert estimate_order([0.1, 0.05]) == pytest.approx([1.0])

    def test_constructed_ratio(self):
        assert estimate_order([0.1, 0.1 / 2**1.5]) == pytest.approx([1.5])

    def test_table_row(self):
        assert round(estimate_order([2.856e-2, 1.469e-2])[0], 3) == 0.959

    def test_non_adjacent_levels(self):
        assert estimate_order([0.16, 0.01], levels=[4, 16]) == pytest.approx([2.0])

    @pytest.mark.parametrize("errors", [[0.1], [0.1, 0.0], [0.1, -0.05]])
    def test_invalid(self, errors):
        with pytest.raises(ValueError):
            estimate_order(errors)


class TestFitSlope:
    def test_power_law(self):
        taus = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
        assert fit_slope(taus, [3.0 * t**1.5 for t in taus]) == pytest.approx(1.5)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_slope([0.25], [0.1])


class TestConvergenceConfig:
    @pytest.mark.parametrize("overrides", [
        dict(theta=0.3),
        dict(levels=(8, 4)),
        dict(levels=(4, 12)),
        dict(reference=48),
        dict(reference=16, levels=(4, 32)),
        dict(m=4),
        dict(samples=0),
        dict(error_norm="l1"),
        dict(workers=0),
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            small_config(**overrides)


class TestSampleError:
    def test_deterministic_per_sample(self):
        cfg = small_config()
        a = sample_error(cfg, 3)
        b = sample_error(cfg, 3)
        assert np.array_equal(a.u_l2, b.u_l2)
        assert np.array_equal(a.u_h1, b.u_h1)
        assert np.array_equal(a.v_l2, b.v_l2)

    def test_samples_differ(self):
        cfg = small_config()
        assert not np.array_equal(sample_error(cfg, 0).u_l2, sample_error(cfg, 1).u_l2)

    def test_errors_nonnegative_finite(self):
        record = sample_error(small_config(problem="test2", theta=0.5), 0)
        for values in (record.u_l2, record.u_h1, record.v_l2):
            assert values.shape == (2,)
            assert np.all(np.isfinite(values)) and np.all(values >= 0)
        assert [p.shape for p in record.pointwise] == [(3, 4), (3, 8)]

    def test_level_equal_to_reference(self):
        record = sample_error(small_config(theta=0.5, levels=(32,), reference=32), 0)
        assert record.u_l2[0] == 0.0 and record.u_h1[0] == 0.0 and record.v_l2[0] == 0.0

    def test_coupling_is_bit_exact(self):
        cfg = small_config(levels=(4, 8, 16, 32), reference=256, m=256)
        levels = simulate_increments(NoiseSeed(cfg.base_seed, 0), 1.0, [*cfg.levels, cfg.reference])
        for coarse, fine in zip(levels, levels[1:]):
            summed = fine.bar
            while summed.size > coarse.bar.size:
                summed = summed.reshape(-1, 2).sum(axis=1)
            assert np.array_equal(coarse.bar, summed)

    def test_failure_tagged_with_sample(self, monkeypatch):
        import src.swave.experiment as experiment

        def boom(*args, **kwargs):
            raise ConfigError("no path")

        monkeypatch.setattr(experiment, "simulate_increments", boom)
        with pytest.raises(SampleError) as excinfo:
            sample_error(small_config(), 5)
        assert excinfo.value.sample == 5

    def test_noise_free_second_order(self):
        cfg = ConvergenceConfig(
            problem="deterministic", theta=0.5, m=32, levels=(8, 16, 32, 64), reference=256,
            samples=1, base_seed=0, mode=1,
        )
        report = convergence_study(cfg)
        assert report.slopes[0] == pytest.approx(2.0, abs=0.2)
        assert all(row.se == (0.0, 0.0, 0.0) for row in report.rows)


class TestConvergenceStudy:
    @pytest.fixture(scope="class")
    def report(self):
        return convergence_study(small_config(levels=(4, 8, 16), reference=64, samples=4))

    def test_rows(self, report):
        assert [row.N for row in report.rows] == [4, 8, 16]
        assert [row.tau for row in report.rows] == [0.25, 0.125, 0.0625]
        assert report.rows[0].order == (None, None, None)
        for row in report.rows[1:]:
            assert all(o is not None for o in row.order)
        for row in report.rows:
            assert all(e > 0 for e in row.err)
            assert all(s >= 0 for s in row.se)

    def test_slopes_present(self, report):
        assert all(s is not None for s in report.slopes)

    def test_orders_match_errors(self, report):
        errs = [row.err[0] for row in report.rows]
        assert [row.order[0] for row in report.rows[1:]] == pytest.approx(estimate_order(errs))

    def test_worker_count_does_not_change_results(self, report):
        parallel = convergence_study(small_config(levels=(4, 8, 16), reference=64, samples=4, workers=2))
        for a, b in zip(report.rows, parallel.rows):
            assert a.err == b.err
            assert a.se == b.se

    def test_errors_nonincreasing_within_noise(self, report):
        for coarse, fine in zip(report.rows, report.rows[1:]):
            for k in range(3):
                assert fine.err[k] <= coarse.err[k] + 2.0 * (coarse.se[k] + fine.se[k])

    def test_warns_on_close_reference(self, caplog):
        with caplog.at_level("WARNING", logger="src.swave.experiment"):
            convergence_study(small_config(levels=(4, 8), reference=16, samples=1))
        assert any("below 4x the finest level" in r.getMessage() for r in caplog.records)

    def test_no_warning_on_distant_reference(self, caplog):
        with caplog.at_level("WARNING", logger="src.swave.experiment"):
            convergence_study(small_config(levels=(4, 8), reference=32, samples=1))
        assert not any("finest level" in r.getMessage() for r in caplog.records)

    def test_max_rms_not_above_rms_max(self):
        cfg = small_config(samples=3)
        records = [sample_error(cfg, i) for i in range(3)]
        rms_max, _ = aggregate(records, cfg.levels, "rms-max")
        max_rms, _ = aggregate(records, cfg.levels, "max-rms")
        assert np.all(max_rms <= rms_max * (1 + 1e-12))

    def test_single_level_has_no_orders(self):
        report = convergence_study(small_config(levels=(8,), samples=1))
        assert report.rows[0].order == (None, None, None)
        assert report.slopes == (None, None, None)


class TestStability:
    def test_zero_data_has_zero_energy(self):
        report = stability_sweep("test1", 0.5, (4, 8), m=16, samples=2, base_seed=1, mode=0)
        assert all(row.mean_max_energy == 0.0 for row in report.rows)
        assert report.stable

    def test_peak_excludes_initial_energy(self):
        ops = assemble_operators(SpatialMesh(-1.0, 1.0, 16))
        start = discrete_energy(initial_state(builtin("deterministic", 2), ops), ops)
        coarse, fine = sample_max_energy("deterministic", 0.0, (8, 64), 16, 0, 1.0, 2, 0)
        assert coarse < 0.75 * start
        assert fine < start
        assert coarse < fine

    def test_flags_large_deviation(self):
        report = stability_sweep("deterministic", 0.0, (8, 64), m=16, samples=1, base_seed=0)
        assert [row.N for row in report.rows] == [8, 64]
        assert report.rows[-1].rel_dev == 0.0 and not report.rows[-1].flagged
        assert report.rows[0].rel_dev > 0.25
        assert report.rows[0].flagged
        assert not report.stable

    def test_noisy_levels_differ(self):
        report = stability_sweep("test2", 0.0, (4, 8), m=16, samples=3, base_seed=2, growth=1e-9)
        assert report.rows[0].mean_max_energy != report.rows[1].mean_max_energy
        assert report.rows[0].flagged

    def test_rejects_bad_levels(self):
        with pytest.raises(ConfigError):
            stability_sweep("test2", 0.5, (8, 4), m=16, samples=2, base_seed=1)
        with pytest.raises(ConfigError):
            stability_sweep("test2", 0.5, (4, 12), m=16, samples=2, base_seed=1)


class TestSpatialSmoke:
    def test_differences_shrink(self, quiet_spec):
        rows = spatial_smoke(quiet_spec, 0.5, (16, 32, 64), N=32, base_seed=0)
        assert [row.m for row in rows] == [16, 32]
        assert rows[1].diff_u_h1 < rows[0].diff_u_h1
        assert rows[1].diff_v_l2 < rows[0].diff_v_l2

    def test_rejects_non_doubling(self, quiet_spec):
        with pytest.raises(ConfigError):
            spatial_smoke(quiet_spec, 0.5, (16, 48), N=8, base_seed=0)


class TestDampedOracle:
    def test_theta0_first_order_without_noise(self):
        steps = (64, 128, 256)
        errors = [deterministic_error(128, N, theta=0.0, k=1) for N in steps]
        assert fit_slope([1.0 / N for N in steps], errors) == pytest.approx(1.0, abs=0.2)

    def test_theta0_coarse_steps_pre_asymptotic(self):
        steps = (4, 8, 16, 32)
        errors = [deterministic_error(128, N, theta=0.0, k=2) for N in steps]
        assert fit_slope([1.0 / N for N in steps], errors) < 0.75


@pytest.mark.slow
class TestAcceptance:
    @pytest.mark.parametrize("problem", ["test1", "test2"])
    def test_theta0_first_order(self, problem):
        # sin(2 pi x) data keeps N <= 32 pre-asymptotic under theta = 0 damping
        cfg = ConvergenceConfig(
            problem=problem, theta=0.0, m=128, levels=(16, 32, 64, 128), reference=512,
            samples=30, base_seed=20230703, mode=1,
        )
        report = convergence_study(cfg)
        for slope in report.slopes:
            assert 0.75 <= slope <= 1.25

    def test_theta_half_rates(self):
        cfg = ConvergenceConfig(
            problem="test2", theta=0.5, m=256, levels=(4, 8, 16, 32), reference=256,
            samples=100, base_seed=20230703,
        )
        report = convergence_study(cfg)
        assert 1.25 <= report.slopes[0] <= 1.8
        assert 0.8 <= report.slopes[2] <= 1.3

    @pytest.mark.parametrize("theta", [0.0, 0.5])
    def test_energy_bounded(self, theta):
        report = stability_sweep("test2", theta, (16, 32, 64, 128), m=256, samples=200, base_seed=20230703)
        assert report.stable
        assert all(np.isfinite(row.mean_max_energy) for row in report.rows)

    def test_noise_free_oracle_slope(self):
        cfg = ConvergenceConfig(
            problem="deterministic", theta=0.5, m=128, levels=(8, 16, 32, 64), reference=1024,
            samples=1, base_seed=0, mode=1,
        )
        report = convergence_study(cfg)
        assert report.slopes[0] == pytest.approx(2.0, abs=0.2)

    def test_coupling_every_sample(self):
        for sample in range(100):
            levels = simulate_increments(NoiseSeed(20230703, sample), 1.0, [4, 8, 16, 32, 256])
            for coarse, fine in zip(levels, levels[1:]):
                summed = fine.bar
                while summed.size > coarse.bar.size:
                    summed = summed.reshape(-1, 2).sum(axis=1)
                assert np.array_equal(coarse.bar, summed)
