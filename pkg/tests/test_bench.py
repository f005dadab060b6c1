import numpy as np
import pytest

from srtlab.bench import (AstRecord, BenchError, ScenarioConfig, ast,
                          benefit, best_cell, compare, propagate_sd,
                          sweep_counts, sweep_from_csv, sweep_to_csv,
                          sweep_to_figure)
from srtlab.darf import DarfConfig, OraclePipeline, OracleSurface


class TestAst:
    def test_worked_example_clamped(self):
        assert ast(0.5, 0.8, 600.0) == pytest.approx(600.0)

    def test_worked_example_unclamped(self):
        assert ast(1.2, 5.0, 1800.0) == pytest.approx(10800.0)

    def test_unit_point(self):
        assert ast(1.0, 1.0, 1.0) == pytest.approx(1.0)

    def test_bias_sign_ignored(self):
        assert ast(1.0, -5.0, 10.0) == ast(1.0, 5.0, 10.0)

    def test_negative_time_rejected(self):
        with pytest.raises(BenchError):
            ast(1.0, 0.0, -1.0)

    def test_negative_sd_rejected(self):
        with pytest.raises(BenchError):
            ast(-0.1, 0.0, 1.0)

    def test_monotone_above_clamp(self):
        assert ast(2.0, 2.0, 100.0) < ast(3.0, 2.0, 100.0) < ast(3.0, 4.0, 100.0)

    def test_record_computes_ast(self):
        r = AstRecord(s=1.2, b=5.0, t=1800.0)
        assert r.ast == pytest.approx(10800.0)


class TestCompare:
    def test_identity(self):
        s = compare([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (s.rmse, s.bias, s.r2, s.n) == (0.0, 0.0, 1.0, 3)

    def test_constant_offset(self):
        s = compare([3.0, 4.0, 5.0], [1.0, 2.0, 3.0])
        assert s.bias == pytest.approx(2.0)
        assert s.rmse == pytest.approx(2.0)
        assert s.r2 == pytest.approx(1.0)

    def test_anticorrelated_r2(self):
        s = compare([3.0, 2.0, 1.0], [1.0, 2.0, 3.0])
        assert s.r2 == pytest.approx(1.0)
        assert s.bias == pytest.approx(0.0)

    def test_constant_reference_r2_none(self):
        assert compare([1.0, 2.0], [0.0, 0.0]).r2 is None

    def test_length_mismatch(self):
        with pytest.raises(BenchError):
            compare([1.0, 2.0], [1.0])

    def test_rmse_decomposition(self):
        rng = np.random.default_rng(0)
        pred = rng.standard_normal(50)
        ref = rng.standard_normal(50)
        s = compare(pred, ref)
        assert s.rmse ** 2 == pytest.approx(
            s.bias ** 2 + np.var(pred - ref), abs=1e-9)


class TestPropagateSd:
    def test_zero(self):
        assert propagate_sd(0.0, 0.0) == 0.0

    def test_three_four_five(self):
        assert propagate_sd(3.0, 4.0) == pytest.approx(5.0)

    def test_example(self):
        assert propagate_sd(1.2, 0.5) == pytest.approx(1.3)

    def test_negative_rejected(self):
        with pytest.raises(BenchError):
            propagate_sd(-1.0, 0.0)


class TestBenefit:
    def test_positive_improvement(self):
        assert benefit(-2.0, -8.0) == pytest.approx(6.0)

    def test_identity_zero(self):
        assert benefit(-5.0, -5.0) == 0.0

    def test_matching_scenarios_accepted(self):
        a = ScenarioConfig(device="identity").to_scenario()
        b = ScenarioConfig(device="gain:20").to_scenario()
        assert benefit(-2.0, -4.0, a, b) == pytest.approx(2.0)

    def test_mismatched_scenarios_rejected(self):
        a = ScenarioConfig(layout="S0N0").to_scenario()
        b = ScenarioConfig(layout="S0N90", device="beamformer").to_scenario()
        with pytest.raises(BenchError, match="beyond the device"):
            benefit(-2.0, -4.0, a, b)


def make_pipeline_factory(midpoint=-7.0):
    def make_pipeline(seed):
        surf = OracleSurface(midpoint_db=midpoint, mismatch_per_db=0.1,
                             sample_n=20, seed=seed)
        return OraclePipeline(surf, initial_estimate_db=-8.0)
    return make_pipeline


class TestSweep:
    def cells(self):
        return sweep_counts(make_pipeline_factory(), reference_srt=-7.0,
                            train_counts=[60, 120], test_counts=[10, 20],
                            reps=3, darf_config=DarfConfig())

    def test_grid_shape(self):
        cells = self.cells()
        assert {(c.n_train, c.n_test) for c in cells} == \
            {(60, 10), (60, 20), (120, 10), (120, 20)}
        for c in cells:
            assert c.mean_duration_s > 0
            assert np.isfinite(c.ast)
            assert not c.low_confidence

    def test_duration_grows_with_counts(self):
        cells = {(c.n_train, c.n_test): c for c in self.cells()}
        assert cells[(120, 20)].mean_duration_s > cells[(60, 10)].mean_duration_s

    def test_two_reps_flagged_low_confidence(self):
        cells = sweep_counts(make_pipeline_factory(), reference_srt=-7.0,
                             train_counts=[60], test_counts=[10], reps=2)
        assert all(c.low_confidence for c in cells)

    def test_single_rep_rejected(self):
        with pytest.raises(BenchError, match="two repetitions"):
            sweep_counts(make_pipeline_factory(), -7.0, [60], [10], reps=1)

    def test_missing_reference_rejected(self):
        with pytest.raises(BenchError, match="reference"):
            sweep_counts(make_pipeline_factory(), float("nan"), [60], [10])

    def test_csv_round_trip(self, tmp_path):
        cells = self.cells()
        path = tmp_path / "sweep.csv"
        sweep_to_csv(cells, path)
        back = sweep_from_csv(path)
        assert len(back) == len(cells)
        for a, b in zip(back, cells):
            assert (a.n_train, a.n_test, a.reps, a.low_confidence) == \
                (b.n_train, b.n_test, b.reps, b.low_confidence)
            for name in ("srt_mean", "srt_sd", "bias", "mean_duration_s", "ast"):
                assert getattr(a, name) == pytest.approx(getattr(b, name),
                                                         abs=1e-3)

    def test_csv_rejects_foreign_table(self, tmp_path):
        path = tmp_path / "junk.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(BenchError):
            sweep_from_csv(path)

    def test_figure(self, tmp_path):
        out = tmp_path / "sweep.svg"
        sweep_to_figure(self.cells(), out)
        assert out.stat().st_size > 0

    def test_best_cell_minimizes_ast(self):
        cells = self.cells()
        assert best_cell(cells).ast == min(c.ast for c in cells)

    def test_best_cell_empty(self):
        with pytest.raises(BenchError):
            best_cell([])


class TestScenarioConfig:
    def test_reps_positive(self):
        with pytest.raises(BenchError):
            ScenarioConfig(reps=0)

    def test_to_scenario_names(self):
        sc = ScenarioConfig(masker_kind="fluctuating", layout="S0N90",
                            profile="n3", device="gain:20").to_scenario()
        assert sc.name == "fluctuating-S0N90-n3-gain:20"
        assert sc.layout.tag == "S0N90"
