"""Fast 8-parameter curve codec.

A curve is reduced to two plateau volumes (U at low prices, L at high
prices), the elastic price window [p_start, p_end], and four Chebyshev
coefficients of a degree-3 fit of the elastic segment on prices rescaled to
[-1, 1].  Reconstruction reassembles the pieces and enforces monotonicity
with a running extremum, so kinks at the window edges are tolerated but the
output is always a valid curve shape.

All functions are pure; per-hour fits are embarrassingly parallel.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import (
    EmptyPlateau,
    MalformedRow,
    TooFewPoints,
    ZeroDenominator,
    ZeroNormalizer,
)
from .market_data import AggregatedCurve, Side, price_bounds


@dataclass(frozen=True)
class ParametricCurve:
    """The 8-parameter codec output.

    U is always the low-price plateau volume and L the high-price one, so
    U >= L >= 0 for demand and L >= U >= 0 for supply.  `coef` are Chebyshev
    coefficients on the elastic window affinely rescaled to [-1, 1].
    """

    U: float
    L: float
    p_start: float
    p_end: float
    coef: np.ndarray
    side: Side

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        object.__setattr__(self, "coef", coef)
        if coef.shape != (4,) or not np.all(np.isfinite(coef)):
            raise MalformedRow("coef must be 4 finite Chebyshev coefficients")
        if not self.p_start < self.p_end:
            raise MalformedRow(f"p_start {self.p_start} must be < p_end {self.p_end}")
        if self.side is Side.DEMAND and not (self.U >= self.L >= 0):
            raise MalformedRow("demand plateaus must satisfy U >= L >= 0")
        if self.side is Side.SUPPLY and not (self.L >= self.U >= 0):
            raise MalformedRow("supply plateaus must satisfy L >= U >= 0")
        coef.flags.writeable = False

    def rescale(self, prices: np.ndarray) -> np.ndarray:
        """Affine map of the elastic window onto [-1, 1]."""
        return (2.0 * np.asarray(prices, dtype=float) - (self.p_start + self.p_end)) \
            / (self.p_end - self.p_start)


@dataclass(frozen=True)
class DenseCurve:
    """A curve resampled on >= 200 equally spaced prices."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.size < 200:
            raise TooFewPoints(f"dense grid needs >= 200 points, got {grid.size}")
        steps = np.diff(grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise MalformedRow("dense grid must be uniformly spaced")


def interpolate_uniform(curve: AggregatedCurve, n: int = 200,
                        bounds: tuple[float, float] | None = None) -> DenseCurve:
    """Linearly interpolate the step curve on n uniform prices spanning the
    side's full price range, extending constantly to the bounds."""
    if curve.prices.size < 2:
        raise TooFewPoints("need at least 2 points to interpolate")
    lo, hi = price_bounds(curve.side, bounds if bounds is not None else curve.bounds)
    grid = np.linspace(lo, hi, n)
    values = np.interp(grid, curve.prices, curve.volumes)
    return DenseCurve(grid, values)


def _slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Finite-difference slopes: central in the interior, one-sided at ends."""
    s = np.empty_like(y, dtype=float)
    s[1:-1] = (y[2:] - y[:-2]) / (x[2:] - x[:-2])
    s[0] = (y[1] - y[0]) / (x[1] - x[0])
    s[-1] = (y[-1] - y[-2]) / (x[-1] - x[-2])
    return s


def detect_elastic(x: np.ndarray, y: np.ndarray, pct: float = 90.0) -> tuple[float, float]:
    """Locate the elastic window from slope magnitudes.

    The threshold is the pct percentile of |slope|; the window runs from the
    first to the last point whose |slope| strictly exceeds it.  If no point
    qualifies (e.g. constant y) the full range (x_min, x_max) is returned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise TooFewPoints("detect_elastic needs aligned arrays of length >= 3")
    if np.any(np.diff(x) <= 0):
        raise MalformedRow("x must be strictly increasing")
    mag = np.abs(_slopes(x, y))
    thr = np.percentile(mag, pct)
    idx = np.flatnonzero(mag > thr)
    if idx.size == 0:
        return float(x[0]), float(x[-1])
    return float(x[idx[0]]), float(x[idx[-1]])


def extract_plateaus(dense: DenseCurve, p_start: float, p_end: float) -> tuple[float, float]:
    """Plateau volumes as means over grid points outside the elastic window.

    U averages grid values at prices <= p_start (the low-price plateau) and
    L at prices >= p_end; this holds for both sides since U is defined as
    the low-price plateau throughout.
    """
    if not p_start < p_end:
        raise MalformedRow("p_start must be < p_end")
    left = dense.grid <= p_start
    right = dense.grid >= p_end
    if not left.any():
        raise EmptyPlateau(f"no grid points at or below p_start={p_start}")
    if not right.any():
        raise EmptyPlateau(f"no grid points at or above p_end={p_end}")
    return float(dense.values[left].mean()), float(dense.values[right].mean())


def fit_parametric(curve: AggregatedCurve, pct: float = 90.0, n: int = 200,
                   bounds: tuple[float, float] | None = None) -> ParametricCurve:
    """Fit the 8-parameter representation of one curve.

    Pipeline: uniform interpolation, slope-percentile window detection,
    plateau means, then a least-squares degree-3 Chebyshev fit of the
    elastic grid points on the window rescaled to [-1, 1].  A window with
    fewer than 5 grid points falls back to a linear fit (coef_2 = coef_3 = 0)
    since the cubic system is rank-deficient there.
    """
    dense = interpolate_uniform(curve, n=n, bounds=bounds)
    p_start, p_end = detect_elastic(dense.grid, dense.values, pct=pct)
    if p_start == p_end:
        # single qualifying slope point: widen to its grid neighbours
        step = dense.grid[1] - dense.grid[0]
        p_start = max(dense.grid[0], p_start - step)
        p_end = min(dense.grid[-1], p_end + step)
    u_plateau, l_plateau = extract_plateaus(dense, p_start, p_end)
    window = (dense.grid >= p_start) & (dense.grid <= p_end)
    span = (2.0 * dense.grid[window] - (p_start + p_end)) / (p_end - p_start)
    vals = dense.values[window]
    if span.size < 5:
        c01 = cheb.chebfit(span, vals, 1) if span.size >= 2 else np.array([vals.mean(), 0.0])
        coef = np.array([c01[0], c01[1] if c01.size > 1 else 0.0, 0.0, 0.0])
    else:
        coef = cheb.chebfit(span, vals, 3)
    u_plateau = max(u_plateau, 0.0)
    l_plateau = max(l_plateau, 0.0)
    if curve.side is Side.DEMAND and l_plateau > u_plateau:
        u_plateau, l_plateau = l_plateau, u_plateau
    if curve.side is Side.SUPPLY and u_plateau > l_plateau:
        u_plateau, l_plateau = l_plateau, u_plateau
    return ParametricCurve(U=u_plateau, L=l_plateau, p_start=p_start, p_end=p_end,
                           coef=coef, side=curve.side)


def reconstruct(pc: ParametricCurve, grid: np.ndarray) -> np.ndarray:
    """Evaluate the codec on a sorted price grid.

    U below p_start, L above p_end, the Chebyshev polynomial in between,
    then a left-to-right running minimum (demand) or maximum (supply)
    applied to the assembled vector to guarantee monotonicity.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.empty_like(grid)
    left = grid <= pc.p_start
    right = grid >= pc.p_end
    mid = ~(left | right)
    values[left] = pc.U
    values[right] = pc.L
    if mid.any():
        values[mid] = cheb.chebval(pc.rescale(grid[mid]), pc.coef)
    if pc.side is Side.DEMAND:
        return np.minimum.accumulate(values)
    return np.maximum.accumulate(values)


def nmae(real: np.ndarray, approx: np.ndarray, u_plateau: float, l_plateau: float) -> float:
    """Mean absolute error normalized by the mid-plateau level (U+L)/2."""
    real = np.asarray(real, dtype=float)
    approx = np.asarray(approx, dtype=float)
    if real.shape != approx.shape or real.size == 0:
        raise MalformedRow("real and approx must be equal-length nonempty arrays")
    denom = (u_plateau + l_plateau) / 2.0
    if denom <= 0:
        raise ZeroNormalizer("(U+L)/2 must be positive")
    return float(np.mean(np.abs(real - approx)) / denom)


def mase(model_mae: float, naive_mae: float) -> float:
    """Model MAE over the previous-day-naive MAE."""
    if naive_mae <= 0:
        raise ZeroDenominator("naive MAE must be positive")
    return model_mae / naive_mae


# --- CSV codec ----------------------------------------------------------------

PARAM_FIELDS = ("U", "L", "p_start", "p_end", "coef_0", "coef_1", "coef_2", "coef_3")


def _param_row(pc: ParametricCurve) -> list[float]:
    return [pc.U, pc.L, pc.p_start, pc.p_end, *pc.coef]


def save_params(entries: list[tuple[dt.date, int, ParametricCurve]], path) -> None:
    """Write rows `day,hour,side,U,L,p_start,p_end,coef_0..coef_3`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("day", "hour", "side") + PARAM_FIELDS)
        for day, hour, pc in entries:
            w.writerow([day.isoformat(), hour, pc.side.value]
                       + [repr(float(v)) for v in _param_row(pc)])


def load_params(path) -> list[tuple[dt.date, int, ParametricCurve]]:
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or tuple(header) != ("day", "hour", "side") + PARAM_FIELDS:
            raise MalformedRow(f"{path}: bad parametric header")
        for i, row in enumerate(rows, start=2):
            if len(row) != 11:
                raise MalformedRow(f"{path}:{i}: expected 11 columns")
            try:
                day = dt.date.fromisoformat(row[0])
                hour = int(row[1])
                side = Side(row[2])
                vals = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise MalformedRow(f"{path}:{i}: {exc}") from None
            pc = ParametricCurve(U=vals[0], L=vals[1], p_start=vals[2], p_end=vals[3],
                                 coef=np.array(vals[4:]), side=side)
            out.append((day, hour, pc))
    return out
