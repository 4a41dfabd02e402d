"""Feature pipeline for the 8-parameter curve forecaster.

Three feature families feed the per-parameter models: lagged parameter time
series (1 to 14 days at the same hour, plus the full previous-day hourly U
and L profiles), point-cloud statistics of the raw order cloud shifted by
24 hours, and external drivers (calendar flags, demand forecast, weather,
previous-day price).  Rows with incomplete lags are dropped, so a table
loses its leading `lags` days.
"""

from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConstantSeries, MisalignedSeries
from .gbt import DEMAND_HYPERPARAMS, SUPPLY_HYPERPARAMS, GbtHyperparams, GbtModel, train_gbt
from .market_data import AggregatedCurve, Side
from .parametric import ParametricCurve, interpolate_uniform, reconstruct

PARAM_COLUMNS = ("U", "L", "p_start", "p_end", "coef_0", "coef_1", "coef_2", "coef_3")
CLOUD_STAT_COLUMNS = ("skewness", "kurtosis", "max_order", "n_before", "n_after", "n_total")

NIGHT_HOURS = frozenset(range(1, 7))
PEAK_HOURS = frozenset(range(9, 21))


def params_table(entries: list[tuple[dt.date, int, ParametricCurve]]) -> pd.DataFrame:
    """Arrange fitted parameters as a (day, hour)-keyed table."""
    rows = []
    for day, hour, pc in entries:
        rows.append({"day": day, "hour": hour, "U": pc.U, "L": pc.L,
                     "p_start": pc.p_start, "p_end": pc.p_end,
                     "coef_0": pc.coef[0], "coef_1": pc.coef[1],
                     "coef_2": pc.coef[2], "coef_3": pc.coef[3]})
    return pd.DataFrame(rows).sort_values(["day", "hour"]).reset_index(drop=True)


def cloud_stats(curve: AggregatedCurve, p_start: float, p_end: float) -> dict[str, float]:
    """Order-cloud statistics of one hour: moments of the order sizes, the
    largest single order, and order counts before/after the elastic window."""
    sizes = np.abs(np.diff(curve.volumes))
    prices = curve.prices[1:]
    if sizes.size == 0:
        sizes = np.zeros(1)
        prices = curve.prices[:1]
    return {
        "skewness": float(stats.skew(sizes)) if sizes.size > 2 else 0.0,
        "kurtosis": float(stats.kurtosis(sizes)) if sizes.size > 3 else 0.0,
        "max_order": float(sizes.max()),
        "n_before": int(np.sum(prices < p_start)),
        "n_after": int(np.sum(prices > p_end)),
        "n_total": int(sizes.size),
    }


def calendar_flags(day: dt.date, hour: int,
                   holidays: frozenset = frozenset(),
                   school_holidays: frozenset = frozenset(),
                   special_events: frozenset = frozenset()) -> dict[str, float]:
    return {
        "hour_of_day": float(hour),
        "is_holiday": float(day in holidays),
        "is_school_holiday": float(day in school_holidays),
        "is_night": float(hour in NIGHT_HOURS),
        "is_peak": float(hour in PEAK_HOURS),
        "is_weekend": float(day.weekday() >= 5),
        "is_special_event": float(day in special_events),
    }


def build_features(params: pd.DataFrame,
                   cloud: pd.DataFrame | None = None,
                   external: pd.DataFrame | None = None,
                   lags: int = 14,
                   holidays: frozenset = frozenset(),
                   school_holidays: frozenset = frozenset(),
                   special_events: frozenset = frozenset()) -> pd.DataFrame:
    """Assemble the model table: one row per (day, hour) with complete lags.

    `params` carries day, hour and the 8 target columns.  `cloud` (optional)
    carries day, hour and the order-cloud statistics, joined at a 24-hour
    shift.  `external` (optional) carries day, hour and any driver columns;
    a `price` column is joined as the previous day's value (price_lag1d),
    all other columns as-is.  Target columns are kept alongside features.
    """
    for col in ("day", "hour"):
        if col not in params.columns:
            raise MisalignedSeries(f"params table lacks column {col!r}")
    df = params.sort_values(["day", "hour"]).reset_index(drop=True)
    if df.duplicated(["day", "hour"]).any():
        raise MisalignedSeries("duplicate (day, hour) rows in params")

    days = pd.Series(sorted(df["day"].unique()))
    day_rank = {d: i for i, d in enumerate(days)}
    if any((days.iloc[i + 1] - days.iloc[i]).days != 1 for i in range(len(days) - 1)):
        raise MisalignedSeries("params days must be consecutive")

    new_cols: dict[str, np.ndarray | pd.Series] = {}
    # per-parameter lags at the same hour
    key_rows = list(zip(df["day"], df["hour"]))
    for col in PARAM_COLUMNS:
        wide = df.pivot(index="day", columns="hour", values=col)
        for k in range(1, lags + 1):
            shifted = wide.shift(k)
            new_cols[f"lag{k}_{col}"] = np.array([
                shifted.at[d, h] if d in shifted.index else np.nan
                for d, h in key_rows
            ])
    # previous-day full hourly U and L profiles
    for col, tag in (("U", "u"), ("L", "l")):
        wide = df.pivot(index="day", columns="hour", values=col).shift(1)
        for h in range(1, 25):
            series = wide[h] if h in wide.columns else pd.Series(np.nan, index=wide.index)
            new_cols[f"{tag}_prev_h{h}"] = df["day"].map(series).to_numpy()
    out = pd.concat([df, pd.DataFrame(new_cols, index=df.index)], axis=1)

    if cloud is not None:
        missing = {"day", "hour"} - set(cloud.columns)
        if missing:
            raise MisalignedSeries(f"cloud table lacks {sorted(missing)}")
        shifted = cloud.copy()
        shifted["day"] = shifted["day"] + dt.timedelta(days=1)
        stat_cols = [c for c in cloud.columns if c not in ("day", "hour")]
        renamed = shifted.rename(columns={c: f"{c}_lag1d" for c in stat_cols})
        out = out.merge(renamed, on=["day", "hour"], how="left")

    if external is not None:
        missing = {"day", "hour"} - set(external.columns)
        if missing:
            raise MisalignedSeries(f"external table lacks {sorted(missing)}")
        ext_cols = [c for c in external.columns if c not in ("day", "hour")]
        direct = [c for c in ext_cols if c != "price"]
        if direct:
            out = out.merge(external[["day", "hour"] + direct], on=["day", "hour"], how="left")
        if "price" in ext_cols:
            shifted = external[["day", "hour", "price"]].copy()
            shifted["day"] = shifted["day"] + dt.timedelta(days=1)
            out = out.merge(shifted.rename(columns={"price": "price_lag1d"}),
                            on=["day", "hour"], how="left")

    cal = pd.DataFrame([
        calendar_flags(d, h, holidays, school_holidays, special_events)
        for d, h in zip(out["day"], out["hour"])
    ])
    out = pd.concat([out.reset_index(drop=True), cal.reset_index(drop=True)], axis=1)

    warm = out["day"].map(day_rank) >= lags
    complete = out.drop(columns=["day", "hour"]).notna().all(axis=1)
    if (warm & ~complete).any():
        bad = out.loc[warm & ~complete, ["day", "hour"]].iloc[0]
        raise MisalignedSeries(
            f"missing feature values at ({bad['day']}, h{int(bad['hour'])}) "
            "after the lag warm-up window")
    return out[warm & complete].reset_index(drop=True)


def feature_columns(table: pd.DataFrame) -> list[str]:
    """Model inputs: everything except keys and the 8 target columns."""
    return [c for c in table.columns
            if c not in ("day", "hour") and c not in PARAM_COLUMNS]


@dataclass(frozen=True)
class ScreenResult:
    selected: list[str]
    rho: dict[str, float]


def spearman_screen(features: pd.DataFrame, target: pd.Series,
                    threshold: float = 0.05) -> ScreenResult:
    """Keep features whose first-differenced Spearman correlation with the
    first-differenced target reaches |rho| >= threshold.

    Differencing removes common trends.  Constant differenced series have no
    rank correlation; they are dropped with a warning.
    """
    if len(features) != len(target) or len(target) < 3:
        raise MisalignedSeries("need >= 3 aligned observations")
    dy = pd.Series(target).diff().to_numpy()[1:]
    selected = []
    rho: dict[str, float] = {}
    for col in features.columns:
        dx = features[col].diff().to_numpy()[1:]
        if np.all(dx == dx[0]) or np.all(dy == dy[0]):
            warnings.warn(f"feature {col!r}: constant differenced series, dropped",
                          stacklevel=2)
            continue
        r = stats.spearmanr(dx, dy).statistic
        rho[col] = float(r)
        if abs(r) >= threshold:
            selected.append(col)
    return ScreenResult(selected, rho)


def forecast_curve(models: dict[str, GbtModel], row: np.ndarray, side: Side) -> ParametricCurve:
    """Assemble one ParametricCurve from the 8 per-parameter predictions.

    Predicted windows with p_start >= p_end are repaired by swapping and
    widening by 1 EUR; plateau levels are clipped at zero and reordered for
    the side, so the result is always a valid curve.
    """
    missing = set(PARAM_COLUMNS) - set(models)
    if missing:
        raise MisalignedSeries(f"missing models for {sorted(missing)}")
    row = np.atleast_2d(np.asarray(row, dtype=float))
    raw = {name: float(models[name].predict(row)[0]) for name in PARAM_COLUMNS}
    ps, pe = raw["p_start"], raw["p_end"]
    if ps >= pe:
        ps, pe = pe, ps
        ps -= 0.5
        pe += 0.5
    u, l = max(raw["U"], 0.0), max(raw["L"], 0.0)
    if side is Side.DEMAND and l > u:
        u, l = l, u
    if side is Side.SUPPLY and u > l:
        u, l = l, u
    coef = np.array([raw["coef_0"], raw["coef_1"], raw["coef_2"], raw["coef_3"]])
    return ParametricCurve(U=u, L=l, p_start=ps, p_end=pe, coef=coef, side=side)


def train_curve_models(table: pd.DataFrame, side: Side,
                       hyperparams: dict[str, GbtHyperparams] | None = None,
                       seed: int = 0) -> dict[str, GbtModel]:
    """Train the 8 per-parameter models on a built feature table."""
    if hyperparams is None:
        hyperparams = DEMAND_HYPERPARAMS if side is Side.DEMAND else SUPPLY_HYPERPARAMS
    cols = feature_columns(table)
    X = table[cols].to_numpy(dtype=float)
    models = {}
    for i, name in enumerate(PARAM_COLUMNS):
        hp = hyperparams[name]
        hp = GbtHyperparams(**{**{k: getattr(hp, k) for k in hp.__dataclass_fields__},
                               "seed": seed + i})
        models[name] = train_gbt(X, table[name].to_numpy(dtype=float), hp)
    return models


def predict_curves(models: dict[str, GbtModel], table: pd.DataFrame,
                   side: Side) -> list[tuple[dt.date, int, ParametricCurve]]:
    cols = feature_columns(table)
    X = table[cols].to_numpy(dtype=float)
    out = []
    for i, (day, hour) in enumerate(zip(table["day"], table["hour"])):
        out.append((day, int(hour), forecast_curve(models, X[i], side)))
    return out


def forecast_mase(predicted: list[tuple[dt.date, int, ParametricCurve]],
                  reference: list[tuple[dt.date, int, ParametricCurve]],
                  side: Side, n_grid: int = 2000) -> pd.DataFrame:
    """Per-hour MASE of dense-curve MAE against the previous-day naive.

    The naive forecast reuses the reference parameters from the same hour
    one day earlier.  Hours with no naive counterpart are skipped.
    """
    from .market_data import price_bounds

    lo, hi = price_bounds(side, None)
    grid = np.linspace(lo, hi, n_grid)
    ref = {(d, h): pc for d, h, pc in reference}
    rows = []
    for day, hour, pc in predicted:
        truth = ref.get((day, hour))
        naive = ref.get((day - dt.timedelta(days=1), hour))
        if truth is None or naive is None:
            continue
        truth_vals = reconstruct(truth, grid)
        rows.append({
            "day": day, "hour": hour,
            "model_mae": float(np.mean(np.abs(reconstruct(pc, grid) - truth_vals))),
            "naive_mae": float(np.mean(np.abs(reconstruct(naive, grid) - truth_vals))),
        })
    df = pd.DataFrame(rows)
    per_hour = df.groupby("hour")[["model_mae", "naive_mae"]].mean()
    per_hour["mase"] = per_hour["model_mae"] / per_hour["naive_mae"]
    return per_hour.reset_index()
