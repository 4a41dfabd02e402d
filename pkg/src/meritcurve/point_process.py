"""Marked point process view of a day's 24 hourly curves.

A day is encoded as one strictly increasing sequence of arrival prices (the
union of all hourly step prices) where each arrival carries a 24-entry mark
of volume increments, zero where the hour has no step at that price.  Curve
values are recovered by cumulating marks from the per-hour anchor volume at
the side's lower price bound, so encode/decode is lossless on the union grid.

Arrival prices, normalized to (0, 1], are modelled as an inhomogeneous
Poisson process with a piecewise-linear intensity on a fixed 30-node grid,
estimated by maximum likelihood and simulated by thinning.  Fits and
simulations are independent per day; RNG streams are injected per call.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import (
    DuplicateHour,
    MalformedRow,
    MissingHour,
    MonotonicityViolation,
    NoArrivals,
    OutOfRange,
    ZeroIntensityOnArrival,
)
from .market_data import AggregatedCurve, Side, price_bounds

#: Price range of the normalization map, EUR/MWh.
NORM_LO = -500.0
NORM_HI = 3000.0


def normalize_price(p, lo: float = NORM_LO, hi: float = NORM_HI):
    """Affine map of (lo, hi] onto (0, 1]."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= lo) or np.any(p > hi):
        raise OutOfRange(f"price outside ({lo}, {hi}]")
    u = (p - lo) / (hi - lo)
    return float(u) if u.ndim == 0 else u


def denormalize_price(u, lo: float = NORM_LO, hi: float = NORM_HI):
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u > 1):
        raise OutOfRange("normalized price outside (0, 1]")
    p = u * (hi - lo) + lo
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class DailyOrderBook:
    """Unified ascending arrivals with 24-dimensional volume-increment marks.

    Supply marks are all >= 0 and demand marks all <= 0; every arrival row
    has at least one nonzero entry.  `anchor` holds the 24 cumulative
    volumes at the side's lower price bound.
    """

    day: dt.date
    side: Side
    prices: np.ndarray          # (M,)
    marks: np.ndarray           # (M, 24)
    anchor: np.ndarray          # (24,)
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        marks = np.asarray(self.marks, dtype=float).reshape(prices.size, 24)
        anchor = np.asarray(self.anchor, dtype=float)
        for name, arr in (("prices", prices), ("marks", marks), ("anchor", anchor)):
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise MalformedRow(f"non-finite {name}")
        if anchor.shape != (24,):
            raise MalformedRow("anchor must have 24 entries")
        if prices.size > 1 and not np.all(np.diff(prices) > 0):
            raise MalformedRow("arrival prices must be strictly increasing")
        lo, hi = price_bounds(self.side, self.bounds)
        if prices.size and (prices[0] <= lo or prices[-1] > hi):
            raise OutOfRange(f"arrival prices must lie in ({lo}, {hi}]")
        if self.side is Side.SUPPLY and np.any(marks < 0):
            raise MonotonicityViolation("supply marks must be >= 0")
        if self.side is Side.DEMAND and np.any(marks > 0):
            raise MonotonicityViolation("demand marks must be <= 0")
        if prices.size and np.any(~np.any(marks != 0, axis=1)):
            raise MalformedRow("every arrival row needs a nonzero mark")
        for arr in (prices, marks, anchor):
            arr.flags.writeable = False

    @property
    def m(self) -> int:
        return self.prices.size


def encode_orderbook(curves: list[AggregatedCurve]) -> DailyOrderBook:
    """Encode 24 same-day, same-side curves into a DailyOrderBook.

    The anchor is each hour's step value at the lower price bound; marks are
    the volume increments at each union price, zero for hours without a step
    there.  Zero increments carry no curve information and are not stored.
    """
    if not curves:
        raise MissingHour("no curves given")
    side, day, bounds = curves[0].side, curves[0].day, curves[0].bounds
    seen: dict[int, AggregatedCurve] = {}
    for c in curves:
        if c.day != day or c.side is not side:
            raise MalformedRow("curves must share day and side")
        if c.hour in seen:
            raise DuplicateHour(f"hour {c.hour} appears twice")
        seen[c.hour] = c
    missing = set(range(1, 25)) - set(seen)
    if missing:
        raise MissingHour(f"missing hours {sorted(missing)}")

    lo, _ = price_bounds(side, bounds)
    anchor = np.empty(24)
    increments: dict[float, np.ndarray] = {}
    for hour in range(1, 25):
        c = seen[hour]
        anchor[hour - 1] = c.volumes[0]
        prev = c.volumes[0]
        for p, v in zip(c.prices, c.volumes):
            if p <= lo:
                continue
            d = v - prev
            if d != 0.0:
                increments.setdefault(p, np.zeros(24))[hour - 1] += d
            prev = v
    prices = np.array(sorted(increments))
    marks = np.array([increments[p] for p in prices]).reshape(prices.size, 24)
    return DailyOrderBook(day, side, prices, marks, anchor, bounds=bounds)


def decode_orderbook(book: DailyOrderBook) -> list[AggregatedCurve]:
    """Rebuild the 24 hourly curves by cumulating marks from the anchor."""
    lo, _ = price_bounds(book.side, book.bounds)
    curves = []
    for hour in range(1, 25):
        col = book.marks[:, hour - 1] if book.m else np.empty(0)
        nz = col != 0
        prices = np.concatenate([[lo], book.prices[nz]])
        volumes = np.concatenate([[book.anchor[hour - 1]],
                                  book.anchor[hour - 1] + np.cumsum(col[nz])])
        curves.append(AggregatedCurve(book.side, book.day, hour, prices, volumes,
                                      bounds=book.bounds))
    return curves


# --- piecewise-linear intensity ----------------------------------------------

def default_node_layout() -> np.ndarray:
    """30 nodes on (0, 1]: 5 inside (0, 0.1), 20 on [0.1, 0.3] where arrival
    prices concentrate, and 5 on (0.3, 1] ending at 1."""
    return np.concatenate([
        np.linspace(0.0, 0.1, 7)[1:-1],
        np.linspace(0.1, 0.3, 20),
        np.linspace(0.3, 1.0, 6)[1:],
    ])


@dataclass(frozen=True)
class PiecewiseLinearIntensity:
    """Nonnegative intensity, linear between nodes, constant from the first
    node down to 0+."""

    nodes: np.ndarray
    values: np.ndarray
    converged: bool = True

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise MalformedRow("nodes and values must be aligned 1-d arrays")
        if np.any(np.diff(nodes) <= 0) or nodes[0] <= 0 or nodes[-1] > 1:
            raise MalformedRow("nodes must be strictly increasing within (0, 1]")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise MalformedRow("intensity values must be finite and >= 0")
        nodes.flags.writeable = False
        values.flags.writeable = False

    def __call__(self, u) -> np.ndarray:
        return np.interp(np.asarray(u, dtype=float), self.nodes, self.values)

    def node_weights(self) -> np.ndarray:
        """Integral of each nodal hat over (0, 1]; weights sum to the domain
        length including the constant extension below the first node."""
        n = self.nodes
        w = np.zeros(n.size)
        w[0] = n[0] + (n[1] - n[0]) / 2.0
        w[-1] = (n[-1] - n[-2]) / 2.0
        w[1:-1] = (n[2:] - n[:-2]) / 2.0
        return w

    def integral(self) -> float:
        return float(self.node_weights() @ self.values)

    def compensator(self, u) -> np.ndarray:
        """Cumulative integral of the intensity from 0 to u, vectorized."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        n, v = self.nodes, self.values
        seg_int = np.concatenate([[v[0] * n[0]],
                                  (v[1:] + v[:-1]) / 2.0 * np.diff(n)])
        cum = np.concatenate([[0.0], np.cumsum(seg_int)])  # integral up to each node
        out = np.empty_like(u)
        below = u <= n[0]
        out[below] = v[0] * u[below]
        rest = ~below
        j = np.searchsorted(n, u[rest], side="right") - 1
        jp = np.minimum(j + 1, n.size - 1)
        du = u[rest] - n[j]
        slope = (v[jp] - v[j]) / np.where(jp > j, n[jp] - n[j], 1.0)
        out[rest] = cum[j + 1] + du * (v[j] + 0.5 * slope * du)
        return out


def fit_intensity(arrivals: np.ndarray, nodes: np.ndarray | None = None,
                  max_iter: int = 300) -> PiecewiseLinearIntensity:
    """Maximum-likelihood piecewise-linear intensity for observed arrivals.

    Maximizes sum(log lambda(u_m)) - integral(lambda) over nonnegative node
    values, parametrized as exponentials of free variables so positivity
    needs no projection.  Starts from the best constant intensity (value =
    arrival count), so the returned fit never scores below it.  If the
    iteration cap is hit the best iterate is returned with converged=False.
    """
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.size == 0:
        raise NoArrivals("no arrivals to fit")
    if np.any(arrivals <= 0) or np.any(arrivals > 1):
        raise OutOfRange("arrivals must lie in (0, 1]")
    if nodes is None:
        nodes = default_node_layout()
    n_nodes = nodes.size

    # hat weights of each arrival on the two bracketing nodes
    W = np.zeros((arrivals.size, n_nodes))
    below = arrivals <= nodes[0]
    W[below, 0] = 1.0
    rest = np.flatnonzero(~below)
    j = np.searchsorted(nodes, arrivals[rest], side="right") - 1
    j = np.minimum(j, n_nodes - 2)
    h = nodes[j + 1] - nodes[j]
    t = (arrivals[rest] - nodes[j]) / h
    W[rest, j] = 1.0 - t
    W[rest, j + 1] = t

    ref = PiecewiseLinearIntensity(nodes, np.ones(n_nodes))
    w_int = ref.node_weights()

    def neg_ll(v):
        lam = np.exp(v)
        at = W @ lam
        return -(np.sum(np.log(at)) - w_int @ lam)

    def grad(v):
        lam = np.exp(v)
        at = W @ lam
        return -(W.T @ (1.0 / at) - w_int) * lam

    x0 = np.full(n_nodes, np.log(arrivals.size))
    res = optimize.minimize(neg_ll, x0, jac=grad, method="L-BFGS-B",
                            options={"maxiter": max_iter})
    return PiecewiseLinearIntensity(nodes, np.exp(res.x), converged=bool(res.success))


def log_likelihood(lam: PiecewiseLinearIntensity, arrivals: np.ndarray) -> float:
    at = lam(arrivals)
    if np.any(at <= 0):
        return -np.inf
    return float(np.sum(np.log(at)) - lam.integral())


@dataclass(frozen=True)
class RescalingDiagnostics:
    scores: np.ndarray
    ks_stat: float
    ks_pvalue: float


def rescaling_diag(arrivals: np.ndarray, lam: PiecewiseLinearIntensity) -> RescalingDiagnostics:
    """Time-rescaling goodness of fit.

    Compensator gaps between consecutive arrivals are Exp(1) under the true
    intensity; mapping them through 1 - exp(-gap) gives scores that should
    be U[0, 1], tested with Kolmogorov-Smirnov.
    """
    arrivals = np.sort(np.asarray(arrivals, dtype=float))
    if arrivals.size == 0:
        raise NoArrivals("no arrivals to diagnose")
    if np.any(lam(arrivals) <= 0):
        raise ZeroIntensityOnArrival("intensity vanishes at an arrival")
    comp = lam.compensator(arrivals)
    gaps = np.diff(np.concatenate([[0.0], comp]))
    scores = 1.0 - np.exp(-gaps)
    res = stats.kstest(scores, "uniform")
    return RescalingDiagnostics(scores, float(res.statistic), float(res.pvalue))


def thin_sample(lam: PiecewiseLinearIntensity, rng: np.random.Generator) -> np.ndarray:
    """Simulate arrivals on (0, 1] by thinning a homogeneous process at the
    dominating rate max(lambda); returns sorted accepted points."""
    lam_max = float(np.max(lam.values))
    if lam_max == 0.0:
        return np.empty(0)
    n = rng.poisson(lam_max)
    u = rng.uniform(0.0, 1.0, n)
    keep = rng.uniform(0.0, 1.0, n) * lam_max < lam(u)
    return np.sort(u[keep])


# --- CSV codecs -----------------------------------------------------------------

def save_orderbooks(books: list[DailyOrderBook], path) -> None:
    """Rows `day,side,m,price,ds_1..ds_24`; m=0 is the anchor row whose price
    is the side's lower bound and whose marks are the anchor volumes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "side", "m", "price"] + [f"ds_{h}" for h in range(1, 25)])
        for book in books:
            lo, _ = price_bounds(book.side, book.bounds)
            w.writerow([book.day.isoformat(), book.side.value, 0, repr(lo)]
                       + [repr(float(v)) for v in book.anchor])
            for m in range(book.m):
                w.writerow([book.day.isoformat(), book.side.value, m + 1,
                            repr(float(book.prices[m]))]
                           + [repr(float(v)) for v in book.marks[m]])


def load_orderbooks(path, bounds: tuple[float, float] | None = None) -> list[DailyOrderBook]:
    rows_by_day: dict[tuple[dt.date, Side], list[tuple[int, float, np.ndarray]]] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or header[:4] != ["day", "side", "m", "price"]:
            raise MalformedRow(f"{path}: bad order-book header")
        for i, row in enumerate(rows, start=2):
            if len(row) != 28:
                raise MalformedRow(f"{path}:{i}: expected 28 columns")
            try:
                key = (dt.date.fromisoformat(row[0]), Side(row[1]))
                m = int(row[2])
                price = float(row[3])
                ds = np.array([float(v) for v in row[4:]])
            except ValueError as exc:
                raise MalformedRow(f"{path}:{i}: {exc}") from None
            rows_by_day.setdefault(key, []).append((m, price, ds))
    books = []
    for (day, side), entries in sorted(rows_by_day.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        entries.sort(key=lambda e: e[0])
        ms = [e[0] for e in entries]
        if len(set(ms)) != len(ms):
            raise MalformedRow(f"{path}: {day} {side.value} has duplicate arrival indices")
        if not entries or entries[0][0] != 0:
            raise MalformedRow(f"{path}: {day} {side.value} lacks the m=0 anchor row")
        anchor = entries[0][2]
        prices = np.array([e[1] for e in entries[1:]])
        marks = np.array([e[2] for e in entries[1:]]).reshape(prices.size, 24)
        books.append(DailyOrderBook(day, side, prices, marks, anchor, bounds=bounds))
    return books


def save_intensity(lam: PiecewiseLinearIntensity, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_u", "value"])
        for u, v in zip(lam.nodes, lam.values):
            w.writerow([repr(float(u)), repr(float(v))])


def load_intensity(path) -> PiecewiseLinearIntensity:
    nodes, values = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["node_u", "value"]:
            raise MalformedRow(f"{path}: bad intensity header")
        for row in rows:
            nodes.append(float(row[0]))
            values.append(float(row[1]))
    return PiecewiseLinearIntensity(np.array(nodes), np.array(values))
