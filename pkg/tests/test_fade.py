import numpy as np
import pytest

from srtlab.darf import OraclePipeline, OracleSurface
from srtlab.fade import (FadeError, GridConfig, RecognitionMap, SrtNotFound,
                         row_crossing, run_grid, srt_from_map)


class TestRowCrossing:
    def test_linear_interpolation(self):
        assert row_crossing([-5.0, 0.0], [0.32, 0.62]) == pytest.approx(-2.0)

    def test_all_above_not_found(self):
        assert row_crossing([-9, -6, -3], [1.0, 1.0, 1.0]) is None

    def test_exact_cell_wins(self):
        assert row_crossing([-12, -9, -6], [0.2, 0.5, 0.9]) == -9.0

    def test_lowest_crossing_selected(self):
        # two crossings (non-monotone row): the lower one is returned
        c = row_crossing([-12, -9, -6, -3], [0.2, 0.8, 0.4, 0.9])
        assert c == pytest.approx(-10.5)

    def test_empty_error(self):
        with pytest.raises(FadeError):
            row_crossing([], [])

    def test_crossing_monotone_in_rates(self, rng):
        tests = list(np.arange(-12.0, 0.1, 3.0))
        for _ in range(100):
            rates = sorted(rng.uniform(0, 1, len(tests)))
            c1 = row_crossing(tests, rates)
            if c1 is None:
                continue
            j = int(rng.integers(len(tests)))
            if rates[j] >= 0.5:
                continue
            bumped = list(rates)
            bumped[j] = min(1.0, bumped[j] + float(rng.uniform(0, 0.5 - rates[j])))
            c2 = row_crossing(tests, bumped)
            assert c2 is not None and c2 <= c1 + 1e-9


class TestRecognitionMap:
    def test_rate_bounds(self):
        m = RecognitionMap()
        with pytest.raises(FadeError):
            m.set_rate(0, 0, 1.2)

    def test_csv_round_trip_with_gaps(self, tmp_path):
        m = RecognitionMap()
        m.set_rate(0, -6, 0.4)
        m.set_rate(0, -3, 0.8)
        m.set_rate(6, -3, 0.9)  # (6, -6) left unevaluated
        path = tmp_path / "map.csv"
        m.to_csv(path)
        back = RecognitionMap.from_csv(path)
        assert back.rates == m.rates
        assert not back.evaluated(6, -6)

    def test_figure_export(self, tmp_path):
        m = RecognitionMap()
        for tr in (0.0, 3.0):
            for te in (-6.0, -3.0):
                m.set_rate(tr, te, 0.5)
        out = tmp_path / "map.svg"
        m.to_figure(out)
        assert out.stat().st_size > 0

    def test_row_ascending(self):
        m = RecognitionMap()
        m.set_rate(0, -3, 0.9)
        m.set_rate(0, -9, 0.1)
        m.set_rate(0, -6, 0.5)
        tests, rates = m.row(0)
        assert tests == [-9.0, -6.0, -3.0]
        assert rates == [0.1, 0.5, 0.9]


class TestSrtFromMap:
    def _map(self, rows):
        m = RecognitionMap()
        for tr, cells in rows.items():
            for te, r in cells.items():
                m.set_rate(tr, te, r)
        return m

    def test_minimum_over_rows(self):
        m = self._map({0: {-6: 0.3, -3: 0.7},   # crossing -4.5
                       6: {-6: 0.1, -3: 0.5}})  # crossing -3 (wait: exact)
        est = srt_from_map(m)
        assert est.srt == pytest.approx(-4.5)
        assert est.source_rows == (0.0,)

    def test_not_found(self):
        m = self._map({0: {-6: 0.9, -3: 0.95}})
        with pytest.raises(SrtNotFound):
            srt_from_map(m)

    def test_min_stability_under_worse_rows(self):
        m = self._map({0: {-6: 0.3, -3: 0.7}})
        base = srt_from_map(m).srt
        m.set_rate(12, -6, 0.1)
        m.set_rate(12, -3, 0.55)
        assert srt_from_map(m).srt == base

    def test_empty_map(self):
        with pytest.raises(FadeError):
            srt_from_map(RecognitionMap())


class TestRunGrid:
    def surface_pipeline(self, **kw):
        surf = OracleSurface(midpoint_db=-6.0, slope_db=1.0,
                             optimal_train_db=-6.0, mismatch_per_db=0.2, **kw)
        return OraclePipeline(surf, initial_estimate_db=-6.0)

    def test_two_by_two(self):
        p = self.surface_pipeline()
        m = run_grid(p, train_snrs=[-18.0, 0.0],
                     config=GridConfig(n_train_sentences=20, n_test_sentences=5,
                                       max_extensions=0))
        assert len(m.rates) == 4
        assert m.train_snrs == [-18.0, 0.0]

    def test_single_snr_matched_only(self):
        p = self.surface_pipeline()
        m = run_grid(p, train_snrs=[0.0],
                     config=GridConfig(n_train_sentences=20, n_test_sentences=5,
                                       max_extensions=0))
        assert list(m.rates) == [(0.0, 0.0)]

    def test_extension_reaches_floor_and_target(self):
        p = self.surface_pipeline()
        m = run_grid(p, center_snr=-6.0,
                     config=GridConfig(n_train_sentences=20, n_test_sentences=5,
                                       n_train_snrs=3))
        lowest = min(m.test_snrs)
        assert all(m.rate(tr, lowest) < 0.25 for tr in m.train_snrs)
        highest = max(m.test_snrs)
        assert any(m.rate(tr, highest) >= 0.5 for tr in m.train_snrs)
        est = srt_from_map(m)
        assert np.isfinite(est.srt)

    def test_deterministic(self):
        maps = [run_grid(self.surface_pipeline(), center_snr=-6.0,
                         config=GridConfig(n_train_sentences=20,
                                           n_test_sentences=5, n_train_snrs=3))
                for _ in range(2)]
        assert maps[0].rates == maps[1].rates

    def test_empty_grid_error(self):
        with pytest.raises(FadeError):
            run_grid(self.surface_pipeline(), train_snrs=[])
