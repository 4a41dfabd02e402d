import datetime as dt

import numpy as np
import pytest

from meritcurve import (
    AggregatedCurve,
    ParametricCurve,
    Side,
    SynthConfig,
    detect_elastic,
    extract_plateaus,
    fit_parametric,
    interpolate_uniform,
    mase,
    nmae,
    reconstruct,
    synth_curves,
)
from meritcurve.errors import (
    EmptyPlateau,
    MalformedRow,
    TooFewPoints,
    ZeroDenominator,
    ZeroNormalizer,
)
from meritcurve.parametric import DenseCurve, load_params, save_params

DAY = dt.date(2024, 1, 1)


# --- brute-force oracle for the elastic window detector -----------------------

def brute_force_elastic(x, y, pct):
    """Loop-based re-derivation: finite-difference slopes, manual percentile
    with linear interpolation, first/last index scan."""
    n = len(x)
    slopes = []
    for i in range(n):
        if i == 0:
            s = (y[1] - y[0]) / (x[1] - x[0])
        elif i == n - 1:
            s = (y[-1] - y[-2]) / (x[-1] - x[-2])
        else:
            s = (y[i + 1] - y[i - 1]) / (x[i + 1] - x[i - 1])
        slopes.append(abs(s))
    ordered = sorted(slopes)
    pos = pct / 100.0 * (n - 1)
    lo = int(np.floor(pos))
    frac = pos - lo
    thr = ordered[lo] if lo == n - 1 else ordered[lo] + frac * (ordered[lo + 1] - ordered[lo])
    idx = [i for i, s in enumerate(slopes) if s > thr]
    if not idx:
        return x[0], x[-1]
    return x[idx[0]], x[idx[-1]]


def ramp_fixture(rng):
    n = int(rng.integers(40, 160))
    x = np.sort(rng.uniform(0.0, 100.0, n))
    while np.any(np.diff(x) <= 0):
        x = np.sort(rng.uniform(0.0, 100.0, n))
    i0 = int(rng.integers(5, n // 2))
    i1 = int(rng.integers(i0 + 3, min(i0 + max(4, n // 5), n - 5)))
    top = rng.uniform(50.0, 150.0)
    bottom = rng.uniform(0.0, 40.0)
    y = np.empty(n)
    y[:i0 + 1] = top
    y[i1:] = bottom
    y[i0:i1 + 1] = np.linspace(top, bottom, i1 - i0 + 1)
    return x, y, i0, i1


class TestDetectElastic:
    def test_constant_returns_full_range(self):
        x = np.linspace(0, 10, 50)
        y = np.full(50, 7.0)
        assert detect_elastic(x, y) == (0.0, 10.0)

    def test_matches_brute_force_on_ramps(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            x, y, i0, i1 = ramp_fixture(rng)
            got = detect_elastic(x, y, pct=90.0)
            want = brute_force_elastic(x, y, 90.0)
            assert got == want
            # window sits inside the ramp support
            assert x[i0] <= got[0] <= got[1] <= x[i1]

    def test_mirrored_fixture(self):
        rng = np.random.default_rng(7)
        x, y, _, _ = ramp_fixture(rng)
        ps, pe = detect_elastic(x, y)
        mps, mpe = detect_elastic(-x[::-1], y[::-1])
        assert (mps, mpe) == (-pe, -ps)

    def test_window_within_range(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = np.sort(rng.uniform(0, 1, 30))
            if np.any(np.diff(x) <= 0):
                continue
            y = rng.normal(size=30)
            ps, pe = detect_elastic(x, y)
            assert x[0] <= ps <= pe <= x[-1]

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            detect_elastic(np.array([0.0, 1.0]), np.array([1.0, 2.0]))


class TestInterpolateUniform:
    def test_two_point_curve(self):
        c = AggregatedCurve(Side.DEMAND, DAY, 1, np.array([0.0, 100.0]),
                            np.array([100.0, 40.0]))
        dense = interpolate_uniform(c, 200)
        assert dense.grid.size == 200
        inside = (dense.grid >= 0) & (dense.grid <= 100)
        expect = 100.0 + (40.0 - 100.0) * dense.grid[inside] / 100.0
        assert np.allclose(dense.values[inside], expect, atol=1e-9)
        assert np.all(dense.values[dense.grid < 0] == 100.0)
        assert np.all(dense.values[dense.grid > 100] == 40.0)

    def test_constant_curve(self):
        c = AggregatedCurve(Side.DEMAND, DAY, 1, np.array([0.0, 100.0]),
                            np.array([70.0, 70.0]))
        dense = interpolate_uniform(c)
        assert np.all(dense.values == 70.0)

    def test_matches_family_at_nodes(self):
        curves, truths = synth_curves(SynthConfig(days=1, seed=12))
        c, t = curves[0], truths[0]
        dense = interpolate_uniform(c, c.prices.size)
        assert np.max(np.abs(dense.values - reconstruct(t, dense.grid))) <= 1e-6

    def test_single_point_rejected(self):
        c = AggregatedCurve(Side.DEMAND, DAY, 1, np.array([0.0]), np.array([1.0]))
        with pytest.raises(TooFewPoints):
            interpolate_uniform(c)


class TestExtractPlateaus:
    def grid_fixture(self, values):
        grid = np.linspace(0.0, 100.0, values.size)
        return DenseCurve(grid, values)

    def test_exact_two_plateau(self):
        vals = np.concatenate([np.full(100, 100.0), np.full(150, 40.0)])
        dense = self.grid_fixture(vals)
        cut = dense.grid[99]
        u, l = extract_plateaus(dense, cut, dense.grid[100])
        assert (u, l) == (100.0, 40.0)

    def test_noisy_plateau_clt_bound(self):
        rng = np.random.default_rng(2024)
        grid = np.linspace(0.0, 100.0, 250)
        vals = np.full(250, 40.0)
        vals[:50] = 100.0 + rng.normal(0.0, 1.0, 50)
        dense = DenseCurve(grid, vals)
        u, _ = extract_plateaus(dense, grid[49], grid[60])
        assert abs(u - 100.0) <= 3.0 / np.sqrt(50)

    def test_last_point_plateau(self):
        vals = np.linspace(100.0, 40.0, 200)
        dense = self.grid_fixture(vals)
        _, l = extract_plateaus(dense, dense.grid[10], dense.grid[-1])
        assert l == vals[-1]

    def test_empty_plateau(self):
        vals = np.linspace(100.0, 40.0, 200)
        dense = self.grid_fixture(vals)
        with pytest.raises(EmptyPlateau):
            extract_plateaus(dense, -10.0, 50.0)


def linear_elastic_curve(side=Side.DEMAND):
    """Curve whose elastic segment is an exact line between plateaus."""
    lo, hi = (-300.0, 3000.0)
    grid = np.linspace(lo, hi, 200)
    s, e = 30, 42
    vals = np.empty(200)
    vals[:s + 1] = 100.0
    vals[e:] = 40.0
    vals[s:e + 1] = np.linspace(100.0, 40.0, e - s + 1)
    return AggregatedCurve(side, DAY, 1, grid, vals)


class TestFitParametric:
    def test_recovers_synth_truth(self):
        curves, truths = synth_curves(SynthConfig(days=1, seed=21))
        for c, t in zip(curves, truths):
            fit = fit_parametric(c)
            for name in ("U", "L", "p_start", "p_end"):
                a, b = getattr(fit, name), getattr(t, name)
                assert abs(a - b) <= 1e-6 * max(1.0, abs(b))
            assert np.allclose(fit.coef, t.coef, rtol=1e-6, atol=1e-9)
            assert nmae(c.volumes, reconstruct(fit, c.prices), t.U, t.L) <= 1e-6

    def test_linear_elastic_has_zero_high_coefs(self):
        fit = fit_parametric(linear_elastic_curve())
        assert abs(fit.coef[2]) <= 1e-8
        assert abs(fit.coef[3]) <= 1e-8

    def test_nmae_finite_nonnegative(self):
        rng = np.random.default_rng(5)
        prices = np.sort(rng.uniform(-300, 3000, 40))
        prices += np.arange(40) * 1e-6  # ensure strict increase
        vols = np.sort(rng.uniform(0, 100, 40))[::-1].copy()
        c = AggregatedCurve(Side.DEMAND, DAY, 1, prices, vols)
        fit = fit_parametric(c)
        dense = interpolate_uniform(c)
        err = nmae(dense.values, reconstruct(fit, dense.grid), fit.U, fit.L)
        assert np.isfinite(err) and err >= 0


class TestReconstruct:
    def make_pc(self, side=Side.DEMAND):
        coef = np.zeros(4)
        coef[:2] = np.polynomial.chebyshev.poly2cheb([70.0, -30.0])
        u, l = (100.0, 40.0) if side is Side.DEMAND else (40.0, 100.0)
        return ParametricCurve(U=u, L=l, p_start=0.0, p_end=100.0, coef=coef, side=side)

    def test_constant_below_window(self):
        pc = self.make_pc()
        grid = np.linspace(-300.0, -1.0, 50)
        assert np.all(reconstruct(pc, grid) == 100.0)

    def test_demand_monotone_fuzz(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            u = rng.uniform(50, 200)
            l = rng.uniform(0, u)
            ps = rng.uniform(-200, 100)
            pe = ps + rng.uniform(1, 500)
            coef = rng.normal(0, 50, 4)
            pc = ParametricCurve(U=u, L=l, p_start=ps, p_end=pe, coef=coef,
                                 side=Side.DEMAND)
            grid = np.sort(rng.uniform(-300, 3000, 120))
            vals = reconstruct(pc, grid)
            assert np.all(np.diff(vals) <= 0)

    def test_supply_monotone_fuzz(self):
        rng = np.random.default_rng(100)
        for _ in range(200):
            u = rng.uniform(0, 100)
            l = u + rng.uniform(0, 200)
            pc = ParametricCurve(U=u, L=l, p_start=0.0, p_end=100.0,
                                 coef=rng.normal(0, 50, 4), side=Side.SUPPLY)
            grid = np.sort(rng.uniform(-500, 3000, 120))
            assert np.all(np.diff(reconstruct(pc, grid)) >= 0)

    def test_clamp_only_moves_down_for_demand(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            pc = ParametricCurve(U=100.0, L=40.0, p_start=0.0, p_end=100.0,
                                 coef=rng.normal(0, 80, 4), side=Side.DEMAND)
            grid = np.linspace(-300, 3000, 300)
            assert np.all(reconstruct(pc, grid) <= 100.0)

    def test_linear_window_matches_line(self):
        fit = fit_parametric(linear_elastic_curve())
        grid = np.linspace(fit.p_start, fit.p_end, 97)
        line = 100.0 + (40.0 - 100.0) * (grid - fit.p_start) / (fit.p_end - fit.p_start)
        inside = (grid > fit.p_start) & (grid < fit.p_end)
        assert np.max(np.abs(reconstruct(fit, grid)[inside] - line[inside])) <= 1e-8


class TestMetrics:
    def test_nmae_identity(self):
        y = np.array([10.0, 20.0])
        assert nmae(y, y, 15.0, 5.0) == 0.0

    def test_nmae_hand_value(self):
        real = np.array([10.0, 10.0])
        approx = np.array([12.0, 8.0])
        assert nmae(real, approx, 15.0, 5.0) == pytest.approx(0.2, abs=1e-15)

    def test_nmae_scale_invariant(self):
        rng = np.random.default_rng(1)
        real = rng.uniform(10, 20, 30)
        approx = real + rng.normal(0, 1, 30)
        base = nmae(real, approx, 15.0, 5.0)
        for c in (0.5, 3.0, 100.0):
            assert nmae(c * real, c * approx, c * 15.0, c * 5.0) == pytest.approx(base, rel=1e-12)

    def test_nmae_zero_normalizer(self):
        with pytest.raises(ZeroNormalizer):
            nmae(np.array([1.0]), np.array([1.0]), 0.0, 0.0)

    def test_mase(self):
        assert mase(2.0, 2.0) == 1.0
        assert mase(2.0, 4.0) == 0.5
        with pytest.raises(ZeroDenominator):
            mase(1.0, 0.0)


class TestParamIO:
    def test_round_trip(self, tmp_path):
        _, truths = synth_curves(SynthConfig(days=1, seed=8))
        entries = [(DAY, h + 1, pc) for h, pc in enumerate(truths)]
        f = tmp_path / "params.csv"
        save_params(entries, f)
        loaded = load_params(f)
        assert len(loaded) == len(entries)
        for (d1, h1, a), (d2, h2, b) in zip(entries, loaded):
            assert (d1, h1) == (d2, h2)
            assert a.U == b.U and a.L == b.L
            assert np.array_equal(a.coef, b.coef)

    def test_bad_header(self, tmp_path):
        f = tmp_path / "params.csv"
        f.write_text("nope\n")
        with pytest.raises(MalformedRow):
            load_params(f)
