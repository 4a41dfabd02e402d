"""Conditional denoising diffusion for order-level curve generation.

Stage 1 learns daily 30-node intensity surrogates given fuel/weather labels;
stage 2 learns 24-dimensional volume marks given the arrival price and
labels, split into a low/high size-class pair of models.  Zeros introduced
by the union-grid encoding form a Dirac mass that diffusion cannot fit, so
they are randomized into small-variance Gaussians on the opposite sign of
genuine marks before training and truncated away after generation.

The denoiser is a small fully connected net trained to predict the injected
noise from (noised data, label, diffusion time); sampling runs the learned
reverse chain from pure noise.  Everything is plain float64 numpy with an
injected RNG, so training and sampling are bitwise reproducible per seed.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatch,
    InvalidRange,
    MalformedRow,
    NonFiniteLoss,
    OutOfRange,
)
from .market_data import AggregatedCurve, FeatureVector, Side, price_bounds
from .point_process import (
    DailyOrderBook,
    PiecewiseLinearIntensity,
    decode_orderbook,
    default_node_layout,
    denormalize_price,
    normalize_price,
    thin_sample,
)


# --- noise schedule ---------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cumulative signal coefficients b.

    b(t) is the running product of (1 - beta) up to step k = round(t*K);
    alpha scales the noise injected between reverse steps.
    """

    K: int
    beta: np.ndarray
    b: np.ndarray
    alpha: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "b", b)
        if beta.shape != (self.K,) or b.shape != (self.K,):
            raise InvalidRange("beta and b must have K entries")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidRange("beta values must lie in (0, 1)")
        if np.any(np.diff(b) >= 0) or not (0.0 < b[-1] < 1.0):
            raise InvalidRange("b must be strictly decreasing into (0, 1)")
        if self.alpha < 0:
            raise InvalidRange("alpha must be >= 0")
        beta.flags.writeable = False
        b.flags.writeable = False

    def step_index(self, t: float) -> int:
        k = int(round(t * self.K))
        if not 1 <= k <= self.K:
            raise OutOfRange(f"diffusion time {t} outside (0, 1]")
        return k - 1

    def beta_at(self, t: float) -> float:
        return float(self.beta[self.step_index(t)])

    def b_at(self, t: float) -> float:
        return float(self.b[self.step_index(t)])


def make_schedule(K: int = 501, beta1: float = 1e-4, beta2: float = 0.02,
                  alpha: float = 1.0 / 3.0) -> NoiseSchedule:
    if K < 2:
        raise InvalidRange("K must be >= 2")
    if not 0.0 < beta1 < beta2 < 1.0:
        raise InvalidRange("need 0 < beta1 < beta2 < 1")
    beta = np.linspace(beta1, beta2, K)
    return NoiseSchedule(K=K, beta=beta, b=np.cumprod(1.0 - beta), alpha=alpha)


def forward_noise(x: np.ndarray, t: float, z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noised data sqrt(b(t))*x + sqrt(1-b(t))*z (variance-preserving)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise DimMismatch(f"x {x.shape} vs z {z.shape}")
    b = sched.b_at(t)
    return np.sqrt(b) * x + np.sqrt(1.0 - b) * z


# --- denoiser network ---------------------------------------------------------

def _silu(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return a * s


def _silu_grad(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return s * (1.0 + a * (1.0 - s))


class DenoiserNet:
    """Fully connected noise predictor: (x', label, t) -> zhat.

    Hidden layers use SiLU; the diffusion time enters as one raw scalar
    input.  Standardization constants for data and label dimensions are
    stored on the net so sampling can invert them.
    """

    def __init__(self, d_data: int, d_label: int, hidden: tuple[int, ...],
                 rng: np.random.Generator):
        self.d_data = d_data
        self.d_label = d_label
        self.hidden = tuple(hidden)
        dims = [d_data + d_label + 1, *hidden, d_data]
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(2.0 / fan_in) if i < len(dims) - 2 else np.sqrt(1.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.x_mean = np.zeros(d_data)
        self.x_std = np.ones(d_data)
        self.label_mean = np.zeros(d_label)
        self.label_std = np.ones(d_label)

    def forward(self, inp: np.ndarray) -> np.ndarray:
        h = inp
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = _silu(h @ W + b)
        return h @ self.weights[-1] + self.biases[-1]

    def _forward_backward(self, inp: np.ndarray, target: np.ndarray):
        acts = [inp]
        pre = []
        h = inp
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ W + b
            pre.append(a)
            h = _silu(a)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        diff = out - target
        loss = float(np.mean(diff * diff))
        grad_out = 2.0 * diff / diff.size
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        gw[-1] = acts[-1].T @ grad_out
        gb[-1] = grad_out.sum(axis=0)
        delta = grad_out @ self.weights[-1].T
        for i in range(len(self.weights) - 2, -1, -1):
            delta = delta * _silu_grad(pre[i])
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
        return loss, gw, gb

    def params(self):
        return self.weights + self.biases

    def standardize_x(self, x):
        return (x - self.x_mean) / self.x_std

    def destandardize_x(self, x):
        return x * self.x_std + self.x_mean

    def standardize_label(self, lab):
        return (lab - self.label_mean) / self.label_std

    # --- persistence (versioned binary with embedded standardization) ---

    def save(self, path) -> None:
        meta = {"format_version": 1, "d_data": self.d_data,
                "d_label": self.d_label, "hidden": list(self.hidden)}
        arrays = {f"W{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        np.savez(path, meta=json.dumps(meta, sort_keys=True),
                 x_mean=self.x_mean, x_std=self.x_std,
                 label_mean=self.label_mean, label_std=self.label_std, **arrays)

    @classmethod
    def load(cls, path) -> "DenoiserNet":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format_version") != 1:
                raise MalformedRow(f"unknown net format {meta.get('format_version')!r}")
            net = cls.__new__(cls)
            net.d_data = int(meta["d_data"])
            net.d_label = int(meta["d_label"])
            net.hidden = tuple(meta["hidden"])
            n_layers = len(net.hidden) + 1
            net.weights = [data[f"W{i}"].copy() for i in range(n_layers)]
            net.biases = [data[f"b{i}"].copy() for i in range(n_layers)]
            net.x_mean = data["x_mean"].copy()
            net.x_std = data["x_std"].copy()
            net.label_mean = data["label_mean"].copy()
            net.label_std = data["label_std"].copy()
        return net


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch: int = 256
    width: int = 128
    depth: int = 3
    lr: float = 1e-3
    seed: int = 0

    def validate(self):
        if self.epochs < 0 or self.batch < 1 or self.width < 1 or self.depth < 1:
            raise InvalidRange("epochs/batch/width/depth must be positive")
        if self.lr <= 0:
            raise InvalidRange("lr must be positive")


@dataclass
class TrainResult:
    net: DenoiserNet
    losses: list[float] = field(default_factory=list)


def train_denoiser(x: np.ndarray, labels: np.ndarray, sched: NoiseSchedule,
                   cfg: TrainConfig) -> TrainResult:
    """Fit the noise predictor by minimizing (zhat - z)^2.

    Each sample in each batch draws a fresh uniform diffusion step and fresh
    Gaussian noise.  Data and label dimensions are standardized per
    dimension (constants stored on the net).  Training is seeded and
    single-threaded, so the loss trace is bitwise reproducible.
    """
    cfg.validate()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels, dtype=float)
    if labels.ndim == 1:
        labels = labels.reshape(x.shape[0], -1)
    if labels.shape[0] != x.shape[0]:
        raise DimMismatch("x and labels must have the same number of rows")
    n, d = x.shape

    rng = np.random.default_rng(cfg.seed)
    net = DenoiserNet(d, labels.shape[1], (cfg.width,) * cfg.depth, rng)
    net.x_mean = x.mean(axis=0)
    net.x_std = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
    net.label_mean = labels.mean(axis=0)
    net.label_std = np.where(labels.std(axis=0) > 0, labels.std(axis=0), 1.0)
    xs = net.standardize_x(x)
    ls = net.standardize_label(labels)

    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses: list[float] = []
    sqrt_b = np.sqrt(net_b := sched.b)
    sqrt_1mb = np.sqrt(1.0 - net_b)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            k = rng.integers(1, sched.K + 1, idx.size)
            z = rng.standard_normal((idx.size, d))
            noised = sqrt_b[k - 1, None] * xs[idx] + sqrt_1mb[k - 1, None] * z
            t_col = (k / sched.K)[:, None]
            inp = np.concatenate([noised, ls[idx], t_col], axis=1)
            loss, gw, gb = net._forward_backward(inp, z)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {_epoch}, batch {n_batches}")
            step += 1
            grads = gw + gb
            for j, (p, gr) in enumerate(zip(params, grads)):
                m[j] = beta1 * m[j] + (1 - beta1) * gr
                v[j] = beta2 * v[j] + (1 - beta2) * gr * gr
                mh = m[j] / (1 - beta1 ** step)
                vh = v[j] / (1 - beta2 ** step)
                p -= cfg.lr * mh / (np.sqrt(vh) + eps)
            epoch_loss += loss
            n_batches += 1
        losses.append(epoch_loss / n_batches)
    return TrainResult(net=net, losses=losses)


def sample_batch(labels: np.ndarray, net: DenoiserNet, sched: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """Reverse-chain sampling for a batch of labels.

    Starts from pure noise at the deepest step and walks the chain down,
    each step removing the predicted noise and, for alpha > 0, injecting
    sqrt(alpha*beta) fresh noise.  With alpha = 0 the output is a
    deterministic function of the label and the initial draw.
    """
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if labels.shape[1] != net.d_label:
        raise DimMismatch(f"label dim {labels.shape[1]} != net {net.d_label}")
    n = labels.shape[0]
    ls = net.standardize_label(labels)
    x = rng.standard_normal((n, net.d_data))
    for k in range(sched.K, 0, -1):
        t = k / sched.K
        beta = sched.beta[k - 1]
        b = sched.b[k - 1]
        inp = np.concatenate([x, ls, np.full((n, 1), t)], axis=1)
        zhat = net.forward(inp)
        x = (x - beta / np.sqrt(1.0 - b) * zhat) / np.sqrt(1.0 - beta)
        if sched.alpha > 0:
            x = x + np.sqrt(sched.alpha * beta) * rng.standard_normal((n, net.d_data))
    return net.destandardize_x(x)


def sample(label: np.ndarray, net: DenoiserNet, sched: NoiseSchedule,
           rng: np.random.Generator) -> np.ndarray:
    """One de-standardized sample conditioned on a single label."""
    return sample_batch(np.atleast_2d(label), net, sched, rng)[0]


# --- zero randomization / truncation -------------------------------------------

#: Mark-size threshold separating the low and high stage-2 models, MWh.
SIZE_THRESHOLDS = {Side.SUPPLY: 200.0, Side.DEMAND: 450.0}

_FAKE_ZERO = {
    (Side.SUPPLY, "low"): (-50.0, 5.0),
    (Side.SUPPLY, "high"): (-250.0, 25.0),
    (Side.DEMAND, "low"): (50.0, 5.0),
    (Side.DEMAND, "high"): (250.0, 25.0),
}


@dataclass(frozen=True)
class ZeroMaskConfig:
    """Fake-zero randomization parameters for one side and size class.

    The Gaussian sits on the opposite sign of genuine marks (supply marks
    are >= 0, demand <= 0), so truncation after generation separates fake
    zeros from real volume.  The second parameter is a standard deviation.
    """

    side: Side
    size_class: str
    threshold: float
    mean: float
    std: float

    def __post_init__(self):
        if self.size_class not in ("low", "high"):
            raise InvalidRange("size_class must be 'low' or 'high'")
        if self.std <= 0:
            raise InvalidRange("std must be positive")
        genuine_sign = 1.0 if self.side is Side.SUPPLY else -1.0
        if self.mean * genuine_sign >= 0:
            raise InvalidRange("fake-zero mean must lie on the opposite sign "
                               "of genuine marks")

    @classmethod
    def standard(cls, side: Side, size_class: str) -> "ZeroMaskConfig":
        mean, std = _FAKE_ZERO[(side, size_class)]
        return cls(side=side, size_class=size_class,
                   threshold=SIZE_THRESHOLDS[side], mean=mean, std=std)


def randomize_zeros(row: np.ndarray, cfg: ZeroMaskConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Replace exact zeros with draws from the class's fake-zero Gaussian."""
    row = np.asarray(row, dtype=float).copy()
    mask = row == 0.0
    row[mask] = rng.normal(cfg.mean, cfg.std, int(mask.sum()))
    return row


def truncate_marks(row: np.ndarray, side: Side) -> np.ndarray:
    """Zero out entries on the fake-zero side of the axis: negatives for
    supply, positives for demand."""
    row = np.asarray(row, dtype=float)
    if side is Side.SUPPLY:
        return np.where(row < 0.0, 0.0, row)
    return np.where(row > 0.0, 0.0, row)


def row_size_class(row: np.ndarray, threshold: float) -> str:
    """A mark row is 'high' when its largest absolute entry exceeds the
    side's split threshold."""
    row = np.asarray(row, dtype=float)
    nz = row[row != 0.0]
    if nz.size == 0:
        return "low"
    return "high" if np.max(np.abs(nz)) > threshold else "low"


@dataclass(frozen=True)
class SizeClassModel:
    """Empirical probability of the high size class per normalized-price bin."""

    bin_edges: np.ndarray
    p_high: np.ndarray

    @classmethod
    def fit(cls, prices_u: np.ndarray, classes: list[str], n_bins: int = 20) -> "SizeClassModel":
        prices_u = np.asarray(prices_u, dtype=float)
        if prices_u.size != len(classes):
            raise DimMismatch("prices and classes must align")
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        is_high = np.array([c == "high" for c in classes], dtype=float)
        overall = float(is_high.mean()) if is_high.size else 0.0
        idx = np.clip(np.searchsorted(edges, prices_u, side="left") - 1, 0, n_bins - 1)
        p = np.full(n_bins, overall)
        for b in range(n_bins):
            sel = idx == b
            if sel.any():
                p[b] = float(is_high[sel].mean())
        return cls(bin_edges=edges, p_high=p)

    def draw(self, u: float, rng: np.random.Generator) -> str:
        b = int(np.clip(np.searchsorted(self.bin_edges, u, side="left") - 1,
                        0, self.p_high.size - 1))
        return "high" if rng.uniform() < self.p_high[b] else "low"


# --- training-set builders (Fig. 6 wiring) -------------------------------------

def build_intensity_dataset(books: list[DailyOrderBook],
                            features_by_day: dict[dt.date, FeatureVector],
                            nodes: np.ndarray | None = None):
    """Per-day intensity surrogates (by MLE) paired with daily labels."""
    from .point_process import fit_intensity

    xs, labels = [], []
    for book in books:
        arrivals = normalize_price(book.prices)
        lam = fit_intensity(np.atleast_1d(arrivals), nodes=nodes)
        xs.append(lam.values)
        labels.append(features_by_day[book.day].as_array())
    return np.array(xs), np.array(labels)


def stage2_label_indices(side: Side) -> np.ndarray:
    """Feature entries used as stage-2 labels: fuel prices for supply,
    temperature statistics for demand."""
    if side is Side.SUPPLY:
        return np.arange(12)
    return np.array([3, 4, 5])


def build_marks_dataset(books: list[DailyOrderBook],
                        features_by_day: dict[dt.date, FeatureVector],
                        rng: np.random.Generator,
                        label_idx: np.ndarray | None = None):
    """Stage-2 training rows: zero-randomized marks with (price, label) rows.

    Returns ((x_low, lab_low), (x_high, lab_high), class_model).  Rows are
    assigned to the low/high model by their largest absolute mark; zeros are
    replaced per the class's fake-zero Gaussian.
    """
    if not books:
        raise MalformedRow("no order books given")
    side = books[0].side
    if label_idx is None:
        label_idx = stage2_label_indices(side)
    cfg = {c: ZeroMaskConfig.standard(side, c) for c in ("low", "high")}
    xs = {"low": [], "high": []}
    labels = {"low": [], "high": []}
    all_u, all_cls = [], []
    for book in books:
        feats = features_by_day[book.day].as_array()[label_idx]
        u = np.atleast_1d(normalize_price(book.prices))
        for m in range(book.m):
            klass = row_size_class(book.marks[m], cfg["low"].threshold)
            row = randomize_zeros(book.marks[m], cfg[klass], rng)
            xs[klass].append(row)
            labels[klass].append(np.concatenate([[u[m]], feats]))
            all_u.append(u[m])
            all_cls.append(klass)
    out = {}
    for klass in ("low", "high"):
        out[klass] = (np.array(xs[klass]).reshape(len(xs[klass]), 24),
                      np.array(labels[klass]).reshape(len(labels[klass]), 1 + label_idx.size))
    class_model = SizeClassModel.fit(np.array(all_u), all_cls)
    return out["low"], out["high"], class_model


# --- end-to-end daily generation ------------------------------------------------

@dataclass
class GeneratedDay:
    curves: list[AggregatedCurve]
    book: DailyOrderBook
    empty: bool


def generate_day(features: FeatureVector, anchor: np.ndarray,
                 nets: dict[str, DenoiserNet], class_model: SizeClassModel,
                 sched: NoiseSchedule, rng: np.random.Generator,
                 side: Side = Side.SUPPLY, day: dt.date = dt.date(2024, 1, 1),
                 bounds: tuple[float, float] | None = None,
                 nodes: np.ndarray | None = None,
                 label_idx: np.ndarray | None = None) -> GeneratedDay:
    """Sample one day of curves: intensity, thinning, marks, cumulation.

    nets holds 'intensity', 'marks_low' and 'marks_high'.  Negative sampled
    intensity nodes are clipped at zero before thinning; arrivals falling
    outside the side's price bounds are dropped; mark rows that truncate to
    all zeros contribute no arrival.  With no arrivals at all, the 24
    constant anchor curves are returned flagged empty.
    """
    if nodes is None:
        nodes = default_node_layout()
    if label_idx is None:
        label_idx = stage2_label_indices(side)
    anchor = np.asarray(anchor, dtype=float)
    label_p = features.as_array()

    lam_vals = np.clip(sample(label_p, nets["intensity"], sched, rng), 0.0, None)
    lam = PiecewiseLinearIntensity(nodes, lam_vals)
    arrivals = thin_sample(lam, rng)
    lo, hi = price_bounds(side, bounds)
    if arrivals.size:
        prices_eur = denormalize_price(arrivals)
        keep = (prices_eur > lo) & (prices_eur <= hi)
        arrivals = arrivals[keep]

    rows = []
    kept_u = []
    if arrivals.size:
        feats2 = label_p[label_idx]
        classes = [class_model.draw(u, rng) for u in arrivals]
        for u, klass in zip(arrivals, classes):
            label2 = np.concatenate([[u], feats2])
            row = sample(label2, nets[f"marks_{klass}"], sched, rng)
            row = truncate_marks(row, side)
            if np.any(row != 0.0):
                rows.append(row)
                kept_u.append(u)

    if not rows:
        book = DailyOrderBook(day, side, np.empty(0), np.empty((0, 24)), anchor,
                              bounds=bounds)
        return GeneratedDay(curves=decode_orderbook(book), book=book, empty=True)

    prices = denormalize_price(np.array(kept_u))
    order = np.argsort(prices)
    prices = prices[order]
    marks = np.array(rows)[order]
    uniq, inv = np.unique(prices, return_inverse=True)
    if uniq.size != prices.size:
        merged = np.zeros((uniq.size, 24))
        np.add.at(merged, inv, marks)
        prices, marks = uniq, merged
    book = DailyOrderBook(day, side, prices, marks, anchor, bounds=bounds)
    return GeneratedDay(curves=decode_orderbook(book), book=book, empty=False)
