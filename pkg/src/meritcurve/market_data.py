"""Data model, file I/O, synthetic curve generation and preprocessing.

Aggregated day-ahead curves are step functions of price: cumulative volume
non-increasing in price for demand, non-decreasing for supply.  All types are
immutable after construction and safe to share across threads; loading many
files in parallel needs no coordination.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import (
    EmptyHour,
    InvalidConfig,
    MalformedRow,
    MonotonicityViolation,
    NegativeInput,
    NonHourlySeries,
    OutOfRange,
)


class Side(enum.Enum):
    DEMAND = "demand"
    SUPPLY = "supply"


#: Default admissible price ranges per side, EUR/MWh.
DEFAULT_PRICE_BOUNDS: dict[Side, tuple[float, float]] = {
    Side.DEMAND: (-300.0, 3000.0),
    Side.SUPPLY: (-500.0, 3000.0),
}


def price_bounds(side: Side, bounds: tuple[float, float] | None = None) -> tuple[float, float]:
    return DEFAULT_PRICE_BOUNDS[side] if bounds is None else bounds


class CurvePoint(NamedTuple):
    price: float   # EUR/MWh
    volume: float  # MWh, cumulative


@dataclass(frozen=True)
class AggregatedCurve:
    """One delivery hour's aggregated bid curve as a sorted step function.

    Invariants are enforced on construction: strictly increasing finite
    prices inside the side's price bounds, nonnegative volumes, and volume
    monotonicity matching the side.  Violating input is rejected, never
    repaired.
    """

    side: Side
    day: dt.date
    hour: int  # 1..24
    prices: np.ndarray
    volumes: np.ndarray
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        volumes = np.asarray(self.volumes, dtype=float)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "volumes", volumes)
        if prices.ndim != 1 or volumes.shape != prices.shape:
            raise MalformedRow("prices and volumes must be 1-d arrays of equal length")
        if prices.size == 0:
            raise EmptyHour(f"{self.day} h{self.hour}: curve has no points")
        if not (1 <= self.hour <= 24):
            raise MalformedRow(f"hour must be in 1..24, got {self.hour}")
        if not np.all(np.isfinite(prices)):
            raise MalformedRow("non-finite price")
        if not np.all(np.isfinite(volumes)) or np.any(volumes < 0):
            raise MalformedRow("volumes must be finite and >= 0")
        if prices.size > 1 and not np.all(np.diff(prices) > 0):
            raise MalformedRow("prices must be strictly increasing")
        lo, hi = price_bounds(self.side, self.bounds)
        if prices[0] < lo or prices[-1] > hi:
            raise OutOfRange(
                f"prices outside {self.side.value} bounds [{lo}, {hi}]"
            )
        dv = np.diff(volumes)
        if self.side is Side.DEMAND and np.any(dv > 0):
            raise MonotonicityViolation(f"{self.day} h{self.hour}: demand volume increases with price")
        if self.side is Side.SUPPLY and np.any(dv < 0):
            raise MonotonicityViolation(f"{self.day} h{self.hour}: supply volume decreases with price")
        prices.flags.writeable = False
        volumes.flags.writeable = False

    @property
    def points(self) -> list[CurvePoint]:
        return [CurvePoint(p, v) for p, v in zip(self.prices, self.volumes)]

    def evaluate(self, at: np.ndarray) -> np.ndarray:
        """Step evaluation: volume of the last point with price <= at.

        Below the first point the curve extends constantly (the step value
        at the side's lower bound equals the first volume).
        """
        at = np.asarray(at, dtype=float)
        idx = np.searchsorted(self.prices, at, side="right") - 1
        return self.volumes[np.clip(idx, 0, self.prices.size - 1)]


# --- curve CSV codec ------------------------------------------------------
#
# Canonical file format: headerless CSV `day,hour,price,volume`, ISO dates,
# one file per side, floats written with shortest round-trip repr.

def _fmt(x: float) -> str:
    return repr(float(x))


def save_curves(curves: list[AggregatedCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for c in curves:
            for p, v in zip(c.prices, c.volumes):
                w.writerow([c.day.isoformat(), c.hour, _fmt(p), _fmt(v)])


def load_curves(path, side: Side, bounds: tuple[float, float] | None = None) -> list[AggregatedCurve]:
    """Load one side's curves from headerless CSV `day,hour,price,volume`.

    Returns one curve per (day, hour) with points sorted by price.  Side
    monotonicity is enforced; violating files raise MonotonicityViolation.
    """
    groups: dict[tuple[dt.date, int], list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(f"{path}:{i}: expected 4 columns, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0])
                hour = int(row[1])
                price = float(row[2])
                volume = float(row[3])
            except ValueError as exc:
                raise MalformedRow(f"{path}:{i}: {exc}") from None
            groups.setdefault((day, hour), []).append((price, volume))
    if not groups:
        raise EmptyHour(f"{path}: no rows")
    curves = []
    for (day, hour), pts in sorted(groups.items()):
        pts.sort()
        prices = np.array([p for p, _ in pts])
        volumes = np.array([v for _, v in pts])
        curves.append(AggregatedCurve(side, day, hour, prices, volumes, bounds=bounds))
    return curves


# --- external feature vector ----------------------------------------------

FEATURE_FIELDS = (
    "coal", "oil", "gas",
    "at_mean", "at_min", "at_max",
    "ghi_mean", "ghi_max", "ghi_min",
    "ws_mean", "ws_min", "ws_max",
)


@dataclass(frozen=True)
class FeatureVector:
    """Daily fuel-cost and weather drivers used as generative labels.

    Fuel entries are marginal costs in EUR/MWh, temperatures in Kelvin,
    irradiance in W/m2, wind speed in km/h.
    """

    coal: float
    oil: float
    gas: float
    at_mean: float
    at_min: float
    at_max: float
    ghi_mean: float
    ghi_max: float
    ghi_min: float
    ws_mean: float
    ws_min: float
    ws_max: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise MalformedRow("feature vector has non-finite entries")
        if self.ghi_min < 0:
            raise MalformedRow("ghi_min must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(FEATURE_FIELDS),):
            raise DimError(arr.shape)
        return cls(*arr)


class DimError(MalformedRow):
    pass


def save_features(table: dict[dt.date, FeatureVector], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("day",) + FEATURE_FIELDS)
        for day in sorted(table):
            w.writerow([day.isoformat()] + [_fmt(v) for v in table[day].as_array()])


def load_features(path) -> dict[dt.date, FeatureVector]:
    table = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or tuple(header[1:]) != FEATURE_FIELDS:
            raise MalformedRow(f"{path}: bad feature header")
        for i, row in enumerate(rows, start=2):
            if len(row) != 1 + len(FEATURE_FIELDS):
                raise MalformedRow(f"{path}:{i}: expected {1 + len(FEATURE_FIELDS)} columns")
            try:
                day = dt.date.fromisoformat(row[0])
                table[day] = FeatureVector(*[float(v) for v in row[1:]])
            except ValueError as exc:
                raise MalformedRow(f"{path}:{i}: {exc}") from None
    return table


# --- synthetic curve generator ---------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Synthetic curve family: two plateaus joined by a strictly monotone
    cubic elastic segment, optionally perturbed by step-noise.

    The elastic window is snapped onto the uniform interpolation grid and
    kept narrow enough (under ~9% of the grid) that slope-percentile
    detection recovers the window exactly on noiseless draws, which is what
    makes the generator usable as a fitting oracle.

    noise_frac is the std of additive volume noise as a fraction of |U-L|;
    noisy curves are re-monotonized cumulatively so they remain valid.
    """

    days: int
    side: Side = Side.DEMAND
    u_range: tuple[float, float] = (1200.0, 2000.0)
    drop_range: tuple[float, float] = (300.0, 800.0)
    window_start_range: tuple[float, float] = (-120.0, 120.0)
    window_width_range: tuple[float, float] = (150.0, 260.0)
    curvature_range: tuple[float, float] = (0.3, 1.0)
    skew_range: tuple[float, float] = (0.4, 0.9)
    noise_frac: float = 0.0
    n_grid: int = 200
    seed: int = 0
    bounds: tuple[float, float] | None = None
    start_day: dt.date = dt.date(2024, 1, 1)

    def validate(self) -> None:
        if self.days < 0:
            raise InvalidConfig("days must be >= 0")
        for name in ("u_range", "drop_range", "window_start_range",
                     "window_width_range", "curvature_range", "skew_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise InvalidConfig(f"bad range {name}={(lo, hi)}")
        if self.noise_frac < 0:
            raise InvalidConfig("noise_frac must be >= 0")
        if self.n_grid < 200:
            raise InvalidConfig("n_grid must be >= 200")
        if self.side is Side.DEMAND and self.u_range[0] - self.drop_range[1] < 0:
            raise InvalidConfig("demand L = U - drop may go negative")
        lo, hi = price_bounds(self.side, self.bounds)
        if self.window_start_range[0] <= lo or \
           self.window_start_range[1] + self.window_width_range[1] >= hi:
            raise InvalidConfig("elastic window must lie strictly inside the price bounds")
        step = (hi - lo) / (self.n_grid - 1)
        w_max = int(round(self.window_width_range[1] / step))
        # keep >90% of grid slopes exactly zero so the percentile threshold
        # vanishes and detection is exact on noiseless draws
        limit = self.n_grid - int(np.ceil(0.9 * (self.n_grid - 1))) - 2
        if w_max > limit:
            raise InvalidConfig(
                f"window width up to {w_max} grid steps exceeds the exact-detection "
                f"limit of {limit} for n_grid={self.n_grid}"
            )
        if int(round(self.window_width_range[0] / step)) < 5:
            raise InvalidConfig("window width must span at least 5 grid steps")


def _monotone_cubic(rng: np.random.Generator, cfg: SynthConfig, drop: float,
                    u_plateau: float, sign: float) -> np.ndarray:
    """Chebyshev coefficients of a strictly monotone cubic on [-1, 1] joining
    the plateaus: c(-1) = U, c(1) = U + sign*drop, |c'| > 0 throughout."""
    r = rng.uniform(*cfg.curvature_range)
    s = rng.uniform(*cfg.skew_range) * rng.choice([-1.0, 1.0])
    m = rng.uniform(0.2, 0.6)
    # derivative magnitude r*(1+s*u)^2 + m integrates to a cubic
    k1 = r + m
    k2 = r * s
    k3 = r * s * s / 3.0
    total = 2.0 * k1 + 2.0 * k3  # c(-1) - c(1) for the unit-scale cubic
    scale = drop / total
    mono = np.array([0.0, -sign * scale * k1, -sign * scale * k2, -sign * scale * k3])
    mono[0] = u_plateau - (-mono[1] + mono[2] - mono[3])
    coef = np.zeros(4)
    raw = np.polynomial.chebyshev.poly2cheb(mono)
    coef[:raw.size] = raw
    return coef


def synth_curves(cfg: SynthConfig):
    """Generate `cfg.days` x 24 synthetic curves with their ground truth.

    Returns (curves, truths): parallel lists of AggregatedCurve and the
    8-parameter ground truth each was generated from.  With noise_frac=0
    the curve points equal the parametric reconstruction exactly.
    """
    from .parametric import ParametricCurve, reconstruct

    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = price_bounds(cfg.side, cfg.bounds)
    grid = np.linspace(lo, hi, cfg.n_grid)
    step = (hi - lo) / (cfg.n_grid - 1)
    sign = 1.0 if cfg.side is Side.DEMAND else -1.0  # demand falls, supply rises

    curves: list[AggregatedCurve] = []
    truths: list[ParametricCurve] = []
    for d in range(cfg.days):
        day = cfg.start_day + dt.timedelta(days=d)
        for hour in range(1, 25):
            u_plateau = rng.uniform(*cfg.u_range)
            drop = rng.uniform(*cfg.drop_range)
            p_start = rng.uniform(*cfg.window_start_range)
            width = rng.uniform(*cfg.window_width_range)
            s_idx = int(round((p_start - lo) / step))
            w_nodes = max(5, int(round(width / step)))
            e_idx = s_idx + w_nodes
            coef = _monotone_cubic(rng, cfg, drop, u_plateau, sign)
            l_plateau = u_plateau - sign * drop
            pc = ParametricCurve(
                U=u_plateau, L=l_plateau,
                p_start=grid[s_idx], p_end=grid[e_idx],
                coef=coef, side=cfg.side,
            )
            values = reconstruct(pc, grid)
            if cfg.noise_frac > 0:
                values = values + rng.normal(0.0, cfg.noise_frac * drop, cfg.n_grid)
                if cfg.side is Side.DEMAND:
                    values = np.minimum.accumulate(values)
                else:
                    values = np.maximum.accumulate(values)
                values = np.clip(values, 0.0, None)
            curves.append(AggregatedCurve(cfg.side, day, hour, grid.copy(), values,
                                          bounds=cfg.bounds))
            truths.append(pc)
    return curves, truths


# --- calendar / DST preprocessing -------------------------------------------

def dst_fix(series: pd.Series) -> pd.Series:
    """Normalize an hourly local-time series to exactly 24 entries per day.

    The missing spring-forward hour is filled by duplicating the subsequent
    theoretical hour; the duplicated fall-back hour keeps its first
    occurrence only.
    """
    if not isinstance(series.index, pd.DatetimeIndex):
        raise NonHourlySeries("index must be a DatetimeIndex")
    idx = series.index
    if len(idx) == 0:
        return series.copy()
    if ((idx.minute != 0) | (idx.second != 0)).any():
        raise NonHourlySeries("timestamps must be on the hour")
    series = series.sort_index()

    out_index: list[pd.Timestamp] = []
    out_values: list = []
    for day, chunk in series.groupby(series.index.normalize()):
        hours = list(chunk.index.hour)
        n = len(hours)
        if n == 24 and hours == list(range(24)):
            out_index.extend(chunk.index)
            out_values.extend(chunk.values)
        elif n == 23:
            present = set(hours)
            missing = sorted(set(range(24)) - present)
            if len(missing) != 1:
                raise NonHourlySeries(f"{day.date()}: 23 rows but not a single missing hour")
            h = missing[0]
            if h == 23:
                raise NonHourlySeries(f"{day.date()}: missing hour 23 has no subsequent hour")
            fill = chunk[chunk.index.hour == h + 1].iloc[0]
            fixed = chunk.copy()
            fixed.loc[day + pd.Timedelta(hours=h)] = fill
            fixed = fixed.sort_index()
            out_index.extend(fixed.index)
            out_values.extend(fixed.values)
        elif n == 25:
            dedup = chunk[~chunk.index.duplicated(keep="first")]
            if len(dedup) != 24 or list(dedup.index.hour) != list(range(24)):
                raise NonHourlySeries(f"{day.date()}: 25 rows but not a single duplicated hour")
            out_index.extend(dedup.index)
            out_values.extend(dedup.values)
        else:
            raise NonHourlySeries(f"{day.date()}: {n} rows in day, expected 23/24/25")
    return pd.Series(out_values, index=pd.DatetimeIndex(out_index), name=series.name)


# --- fuel cost ---------------------------------------------------------------

#: Heat rates (fuel input per MWh out) for coal, oil, gas.
DEFAULT_HEAT_RATES = {"coal": 0.42, "oil": 1.5, "gas": 2.4}
#: CO2 emission factor of coal generation, tCO2/MWh.
COAL_EMISSION_FACTOR = 0.986


def fuel_cost(fuel_price: float, heat_rate: float, emission_factor: float,
              co2_tax: float) -> float:
    """Short-run marginal generation cost: price*heat_rate + emissions*tax."""
    for name, v in (("fuel_price", fuel_price), ("heat_rate", heat_rate),
                    ("emission_factor", emission_factor), ("co2_tax", co2_tax)):
        if v < 0:
            raise NegativeInput(f"{name} must be >= 0, got {v}")
    return fuel_price * heat_rate + emission_factor * co2_tax
