import datetime as dt

import numpy as np
import pandas as pd
import pytest

from meritcurve import (
    AggregatedCurve,
    FeatureVector,
    Side,
    SynthConfig,
    dst_fix,
    fuel_cost,
    load_curves,
    save_curves,
    synth_curves,
)
from meritcurve.errors import (
    EmptyHour,
    InvalidConfig,
    MalformedRow,
    MonotonicityViolation,
    NegativeInput,
    NonHourlySeries,
    OutOfRange,
)
from meritcurve.market_data import load_features, save_features
from meritcurve.parametric import reconstruct

DAY = dt.date(2024, 1, 1)


def make_curve(side=Side.DEMAND, prices=(0.0, 50.0, 100.0), volumes=(100.0, 60.0, 40.0)):
    return AggregatedCurve(side, DAY, 1, np.array(prices), np.array(volumes))


class TestAggregatedCurve:
    def test_valid_demand(self):
        c = make_curve()
        assert c.prices.size == 3

    def test_demand_increasing_volume_rejected(self):
        with pytest.raises(MonotonicityViolation):
            make_curve(volumes=(40.0, 60.0, 100.0))

    def test_supply_decreasing_volume_rejected(self):
        with pytest.raises(MonotonicityViolation):
            make_curve(side=Side.SUPPLY, volumes=(100.0, 60.0, 40.0))

    def test_unsorted_prices_rejected(self):
        with pytest.raises(MalformedRow):
            make_curve(prices=(0.0, 100.0, 50.0))

    def test_out_of_bounds_price_rejected(self):
        with pytest.raises(OutOfRange):
            make_curve(prices=(-400.0, 0.0, 100.0))

    def test_supply_bounds_wider(self):
        c = make_curve(side=Side.SUPPLY, prices=(-400.0, 0.0, 100.0),
                       volumes=(40.0, 60.0, 100.0))
        assert c.prices[0] == -400.0

    def test_negative_volume_rejected(self):
        with pytest.raises(MalformedRow):
            make_curve(volumes=(100.0, 60.0, -1.0))

    def test_empty_rejected(self):
        with pytest.raises(EmptyHour):
            make_curve(prices=(), volumes=())

    def test_immutable(self):
        c = make_curve()
        with pytest.raises(ValueError):
            c.prices[0] = 1.0

    def test_step_evaluation(self):
        c = make_curve()
        got = c.evaluate(np.array([-300.0, 0.0, 49.9, 50.0, 200.0]))
        assert got.tolist() == [100.0, 100.0, 100.0, 60.0, 40.0]


class TestCurveIO:
    def test_three_row_file(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("2024-01-01,1,50.0,60.0\n2024-01-01,1,0.0,100.0\n2024-01-01,1,100.0,40.0\n")
        curves = load_curves(f, Side.DEMAND)
        assert len(curves) == 1
        assert curves[0].prices.tolist() == [0.0, 50.0, 100.0]

    def test_monotonicity_violation_on_load(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("2024-01-01,1,0.0,40.0\n2024-01-01,1,50.0,100.0\n")
        with pytest.raises(MonotonicityViolation):
            load_curves(f, Side.DEMAND)

    def test_malformed_row(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("2024-01-01,1,0.0\n")
        with pytest.raises(MalformedRow):
            load_curves(f, Side.DEMAND)

    def test_bad_float(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("2024-01-01,1,zero,100.0\n")
        with pytest.raises(MalformedRow):
            load_curves(f, Side.DEMAND)

    def test_empty_file(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("")
        with pytest.raises(EmptyHour):
            load_curves(f, Side.DEMAND)

    def test_round_trip_bytes(self, tmp_path):
        curves, _ = synth_curves(SynthConfig(days=1, seed=3))
        f1 = tmp_path / "a.csv"
        f2 = tmp_path / "b.csv"
        save_curves(curves, f1)
        save_curves(load_curves(f1, Side.DEMAND), f2)
        assert f1.read_bytes() == f2.read_bytes()


class TestSynth:
    def test_noiseless_in_family(self):
        curves, truths = synth_curves(SynthConfig(days=1, seed=5))
        for c, t in zip(curves, truths):
            assert np.max(np.abs(reconstruct(t, c.prices) - c.volumes)) <= 1e-9

    def test_deterministic(self):
        a, ta = synth_curves(SynthConfig(days=1, seed=9, noise_frac=0.01))
        b, tb = synth_curves(SynthConfig(days=1, seed=9, noise_frac=0.01))
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.volumes, cb.volumes)
        for pa, pb in zip(ta, tb):
            assert np.array_equal(pa.coef, pb.coef)

    def test_zero_days(self):
        curves, truths = synth_curves(SynthConfig(days=0))
        assert curves == [] and truths == []

    def test_supply_side(self):
        cfg = SynthConfig(days=1, seed=2, side=Side.SUPPLY,
                          u_range=(400.0, 800.0), drop_range=(300.0, 700.0))
        curves, truths = synth_curves(cfg)
        for c in curves:
            assert np.all(np.diff(c.volumes) >= 0)
        for t in truths:
            assert t.L >= t.U >= 0

    def test_invalid_config(self):
        with pytest.raises(InvalidConfig):
            synth_curves(SynthConfig(days=-1))
        with pytest.raises(InvalidConfig):
            synth_curves(SynthConfig(days=1, drop_range=(3000.0, 4000.0)))
        with pytest.raises(InvalidConfig):
            synth_curves(SynthConfig(days=1, window_width_range=(150.0, 900.0)))
        with pytest.raises(InvalidConfig):
            synth_curves(SynthConfig(days=1, noise_frac=-0.1))

    def test_noisy_curves_valid(self):
        curves, _ = synth_curves(SynthConfig(days=1, seed=4, noise_frac=0.05))
        for c in curves:
            assert np.all(np.diff(c.volumes) <= 0)
            assert np.all(c.volumes >= 0)


def hourly_index(day, hours):
    return pd.DatetimeIndex([pd.Timestamp(day) + pd.Timedelta(hours=h) for h in hours])


class TestDstFix:
    def test_spring_forward_filled(self):
        hours = [h for h in range(24) if h != 2]
        s = pd.Series(np.arange(23.0), index=hourly_index("2024-03-31", hours))
        fixed = dst_fix(s)
        assert len(fixed) == 24
        # inserted hour 2 duplicates the subsequent theoretical hour (3)
        assert fixed.iloc[2] == fixed.iloc[3]

    def test_fall_back_dedup(self):
        hours = list(range(24))
        hours.insert(3, 2)  # duplicated hour 2
        vals = np.arange(25.0)
        s = pd.Series(vals, index=hourly_index("2024-10-27", hours))
        fixed = dst_fix(s)
        assert len(fixed) == 24
        assert fixed.iloc[2] == vals[2]  # first occurrence kept

    def test_normal_day_unchanged(self):
        s = pd.Series(np.arange(24.0), index=hourly_index("2024-06-01", range(24)))
        fixed = dst_fix(s)
        pd.testing.assert_series_equal(fixed, s)

    def test_multi_day_length(self):
        a = pd.Series(np.arange(24.0), index=hourly_index("2024-03-30", range(24)))
        b = pd.Series(np.arange(23.0), index=hourly_index("2024-03-31", [h for h in range(24) if h != 2]))
        fixed = dst_fix(pd.concat([a, b]))
        assert len(fixed) == 48

    def test_rejects_22_hours(self):
        s = pd.Series(np.arange(22.0), index=hourly_index("2024-06-01", range(22)))
        with pytest.raises(NonHourlySeries):
            dst_fix(s)

    def test_rejects_off_hour(self):
        idx = pd.DatetimeIndex([pd.Timestamp("2024-06-01 00:30")])
        with pytest.raises(NonHourlySeries):
            dst_fix(pd.Series([1.0], index=idx))


class TestFuelCost:
    def test_coal_example(self):
        # hand evaluation: 50*0.42 + 0.986*20 = 40.72
        assert fuel_cost(50.0, 0.42, 0.986, 20.0) == pytest.approx(40.72, abs=1e-12)

    def test_identity_when_tax_free(self):
        assert fuel_cost(37.5, 1.0, 0.5, 0.0) == 37.5

    def test_tax_only(self):
        assert fuel_cost(0.0, 0.42, 0.986, 100.0) == pytest.approx(98.6, abs=1e-12)

    def test_negative_input(self):
        with pytest.raises(NegativeInput):
            fuel_cost(-1.0, 0.42, 0.986, 20.0)
        with pytest.raises(NegativeInput):
            fuel_cost(50.0, 0.42, 0.986, -5.0)


class TestFeatureVector:
    def vec(self):
        return FeatureVector(47.1, 92.8, 46.9, 285.1, 281.3, 289.1,
                             149.4, 478.0, 0.0, 3.2, 2.5, 4.0)

    def test_round_trip_csv(self, tmp_path):
        table = {DAY: self.vec()}
        f = tmp_path / "features.csv"
        save_features(table, f)
        loaded = load_features(f)
        assert loaded[DAY] == self.vec()

    def test_negative_ghi_min_rejected(self):
        with pytest.raises(MalformedRow):
            FeatureVector(47.1, 92.8, 46.9, 285.1, 281.3, 289.1,
                          149.4, 478.0, -1.0, 3.2, 2.5, 4.0)

    def test_non_finite_rejected(self):
        with pytest.raises(MalformedRow):
            FeatureVector(np.nan, 92.8, 46.9, 285.1, 281.3, 289.1,
                          149.4, 478.0, 0.0, 3.2, 2.5, 4.0)
