import json
import math
from dataclasses import replace

import numpy as np
import pytest

from pvfc.harness import (CSV_COLUMNS, TRANSIENT_WINDOW, ScenarioConfig, TimeSeries, builtin_case, compute_metrics,
                          gains_from_file, resolve_gains, run_scenario, synth_gains)
from pvfc.plant import ConfigurationError, SagSpec


class TestBuiltinCases:
    def test_case1_irradiance_dip(self):
        c = builtin_case(1)
        assert c.irradiance == ((0.0, 1000.0), (6.0, 300.0), (8.0, 1000.0))
        assert [r[1] for r in c.demand] == [150e3, 220e3, 80e3, 150e3]

    def test_case2_reactive_schedule(self):
        assert [r[2] for r in builtin_case(2).demand] == [100e3, 150e3, 150e3, 100e3]

    def test_case3_sags(self):
        c = builtin_case(3)
        assert c.irradiance == ((0.0, 1000.0),)
        assert [(s.start, s.end, s.fractions) for s in c.sags] == [
            (1.0, 3.0, (0.7, 1.0, 1.0)), (4.0, 6.0, (0.65, 0.65, 1.0)), (7.0, 9.0, (0.6, 0.6, 0.6))]

    def test_case4_low_irradiance(self):
        c3, c4 = builtin_case(3), builtin_case(4)
        assert c4.sags == c3.sags and c4.irradiance == ((0.0, 300.0),)

    def test_unknown_case(self):
        with pytest.raises(ValueError):
            builtin_case(5)

    def test_common_settings(self):
        for k in range(1, 5):
            c = builtin_case(k)
            assert (c.duration, c.v_dc_ref, c.case_id) == (10.0, 800.0, k)


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        c = builtin_case(3).with_uncertainty(1.3)
        path = tmp_path / "c.json"
        c.to_json(path)
        assert ScenarioConfig.from_json(path) == c

    def test_unsorted_schedule(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(demand=((0.0, 1.0, 0.0), (2.0, 1.0, 0.0), (1.0, 1.0, 0.0)))

    def test_overlapping_sags(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(sags=(SagSpec(1.0, 3.0), SagSpec(2.0, 4.0)))

    def test_unknown_channel(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(channels=("time_s", "bogus"))

    def test_bad_document(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"duration": 1.0, "nonsense": 3}))
        with pytest.raises(ConfigurationError):
            ScenarioConfig.from_json(path)

    def test_uncertainty_range(self):
        with pytest.raises(ConfigurationError):
            builtin_case(1).with_uncertainty(1.5)


class TestGains:
    def test_file_round_trip(self, tmp_path, synthesis):
        path = tmp_path / "gains.txt"
        rep = synth_gains(path=path)
        g = gains_from_file(path)
        assert (g.k1, g.k2, g.k_dc, g.lam, g.omega_c) == pytest.approx(
            (rep.gains.k1, rep.gains.k2, 100.0, 500.0, 1000.0))
        assert g.K_dc.array == pytest.approx(rep.gains.K_dc.array)
        text = path.read_text()
        assert "k_dc = 100.0" in text and "lambda = 500.0" in text and "omega_c = 1000.0" in text

    def test_table_gains(self):
        g = resolve_gains(replace(builtin_case(1), gains="table"))
        assert (g.k1, g.k2) == (-0.1649, 1.2197e4)

    def test_missing_file(self, tmp_path):
        with pytest.raises((ConfigurationError, OSError)):
            resolve_gains(replace(builtin_case(1), gains=str(tmp_path / "missing.txt")))


def _synthetic_series(n=6001, dt=1e-4):
    t = np.arange(n) * dt
    ch = {c: np.zeros(n) for c in CSV_COLUMNS if c != "mode"}
    ch["time_s"] = t
    ch["v_dc_V"] = 800.0 + np.where(t < 0.3, 50.0, 1.0)
    ch["P_grid_W"] = np.where(t < 0.3, 0.0, 100e3)
    ch["mode"] = np.zeros(n, dtype=bool)
    return TimeSeries(ch, dt, "synthetic")


class TestMetrics:
    def test_transient_window_excluded(self):
        ts = _synthetic_series()
        rep = compute_metrics(ts, ScenarioConfig(duration=0.6))
        assert len(rep.intervals) == 1
        iv = rep.intervals[0]
        assert iv.steady_start == pytest.approx(TRANSIENT_WINDOW)
        assert iv.means["P_grid_W"] == pytest.approx(100e3)
        assert rep.v_dc_max_dev == pytest.approx(1.0)
        assert rep.v_dc_band == 1.0

    def test_csv_round_trip(self, tmp_path):
        ts = _synthetic_series(101)
        ts.channels["i_a_A"] = np.sin(np.arange(101) / 7.0) * 471.123456789
        ts.channels["mode"][50:] = True
        path = tmp_path / "x.csv"
        ts.to_csv(path)
        back = TimeSeries.from_csv(path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        for c in CSV_COLUMNS:
            assert np.allclose(back[c], ts[c], rtol=1e-8, atol=1e-7)
        assert back.sample_dt == pytest.approx(1e-4)


class TestShortRuns:
    def test_idle_plant(self):
        cfg = ScenarioConfig(name="idle", duration=0.5, irradiance=((0.0, 0.0),))
        ts, rep = run_scenario(cfg)
        assert rep.aborted is None
        for c in ("P_grid_W", "Q_grid_var", "P_pv_W", "P_fc_W", "P_dump_W"):
            assert np.abs(ts[c]).max() < 100.0
        assert np.abs(ts["v_dc_V"] - 800.0).max() < 0.1

    def test_pv_tracking_from_start(self):
        cfg = ScenarioConfig(name="pv", duration=1.0, demand=((0.0, 100e3, 0.0),))
        ts, _ = run_scenario(cfg)
        late = ts.t >= 0.5
        assert np.all(np.abs(ts["P_pv_W"][late] - 100e3) <= 0.02 * 100e3)

    def test_fuel_cell_settles(self):
        cfg = ScenarioConfig(name="fc", duration=1.0, demand=((0.0, 150e3, 0.0),))
        ts, _ = run_scenario(cfg)
        late = ts.t >= 0.5
        assert np.all(np.abs(ts["P_fc_W"][late] - 50e3) <= 0.02 * 50e3)

    def test_three_phase_sag_link_recovers(self):
        cfg = ScenarioConfig(name="sag", duration=1.5, demand=((0.0, 150e3, 0.0),),
                             sags=(SagSpec(0.5, 1.5, (0.6, 0.6, 0.6)),))
        ts, rep = run_scenario(cfg)
        assert rep.aborted is None
        after = ts.window(0.7, 1.5)
        assert np.all(np.abs(ts["v_dc_V"][after] - 800.0) <= 0.005 * 800.0)
        assert ts["mode"][ts.window(0.6, 1.5)].all()
        assert rep.sags[0].q_mean > 0

    def test_determinism(self):
        cfg = ScenarioConfig(name="det", duration=0.3, demand=((0.0, 150e3, 50e3),), noise_dc=5.0, noise_ac=50.0,
                             seed=7)
        a, _ = run_scenario(cfg)
        b, _ = run_scenario(cfg)
        assert a.csv_text() == b.csv_text()

    def test_seed_changes_noisy_run(self):
        cfg = ScenarioConfig(name="det", duration=0.1, noise_dc=5.0, noise_ac=50.0, seed=1)
        a, _ = run_scenario(cfg)
        b, _ = run_scenario(replace(cfg, seed=2))
        assert a.csv_text() != b.csv_text()

    def test_decimation_and_channels(self):
        cfg = ScenarioConfig(name="d", duration=0.05, decimation=60)
        ts, _ = run_scenario(cfg)
        assert ts.sample_dt == pytest.approx(1e-3)
        assert len(ts.t) == 51
        assert math.isclose(ts.t[-1], 0.05, abs_tol=1e-12)
