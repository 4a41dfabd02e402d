"""Gradient-boosted regression trees with quantile (pinball) loss.

A deliberately small reimplementation of the histogram-based boosting
recipe: per round, rows are subsampled and a per-tree feature subset drawn,
trees grow greedily on 256-quantile-bin histograms maximizing the
regularized gain, and leaf values are shrunk by the learning rate.  Pinball
loss has zero curvature, so splits use gradients only with a unit hessian
surrogate per sample and terminal regions are refit with the in-bag
residual quantile, the common quantile-boosting practice.

Training is deterministic under a fixed seed; the 8 per-parameter models
train independently and may run in parallel.  Prediction is pure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfig, MalformedRow, MissingFeature

#: Hyperparameter column names of the per-target configuration tables.
HYPERPARAM_COLUMNS = (
    "quantile_alpha", "learning_rate", "max_depth", "min_child_weight",
    "subsample", "colsample_bytree", "reg_lambda", "reg_alpha", "gamma",
)


@dataclass(frozen=True)
class GbtHyperparams:
    quantile_alpha: float = 0.5
    learning_rate: float = 0.03
    max_depth: int = 5
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    gamma: float = 0.0
    n_rounds: int = 500
    early_stopping_rounds: int | None = 50
    validation_fraction: float = 0.1
    n_bins: int = 256
    seed: int = 0
    objective: str = "quantile"  # "quantile" or "l1"

    def validate(self) -> None:
        if not 0.0 < self.quantile_alpha < 1.0:
            raise InvalidConfig("quantile_alpha must be in (0, 1)")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.max_depth < 1:
            raise InvalidConfig("max_depth must be >= 1")
        if self.min_child_weight < 0 or self.reg_lambda < 0 or self.reg_alpha < 0 \
                or self.gamma < 0:
            raise InvalidConfig("regularization terms must be >= 0")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.colsample_bytree <= 1.0:
            raise InvalidConfig("subsample and colsample_bytree must be in (0, 1]")
        if self.n_rounds < 0 or self.n_bins < 2:
            raise InvalidConfig("n_rounds must be >= 0 and n_bins >= 2")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidConfig("validation_fraction must be in [0, 1)")
        if self.objective not in ("quantile", "l1"):
            raise InvalidConfig(f"unknown objective {self.objective!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "GbtHyperparams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown hyperparameters: {sorted(unknown)}")
        hp = cls(**d)
        hp.validate()
        return hp


#: Per-target hyperparameters selected for the demand forecast.
DEMAND_HYPERPARAMS: dict[str, GbtHyperparams] = {
    "coef_0": GbtHyperparams(0.5, 0.030, 3, 3, 0.6, 1.0, 1.0, 1.0, 0.3),
    "coef_1": GbtHyperparams(0.5, 0.005, 3, 7, 0.4, 0.8, 10.0, 1.0, 0.5),
    "coef_2": GbtHyperparams(0.5, 0.030, 5, 5, 0.6, 0.6, 10.0, 1.0, 0.3),
    "coef_3": GbtHyperparams(0.5, 0.010, 3, 1, 0.7, 0.8, 1.0, 0.0, 0.0),
    "U": GbtHyperparams(0.5, 0.030, 5, 1, 0.7, 1.0, 1.0, 0.0, 0.0),
    "L": GbtHyperparams(0.8, 0.030, 5, 1, 0.7, 1.0, 1.0, 0.0, 0.0),
    "p_start": GbtHyperparams(0.4, 0.010, 3, 1, 0.7, 0.8, 1.0, 0.0, 0.0),
    "p_end": GbtHyperparams(0.5, 0.010, 3, 1, 0.7, 0.8, 1.0, 0.0, 0.0),
}

#: Per-target hyperparameters selected for the supply forecast.
SUPPLY_HYPERPARAMS: dict[str, GbtHyperparams] = {
    "coef_0": GbtHyperparams(0.7, 0.03, 3, 6, 0.6, 1.0, 0.5, 0.8, 0.0),
    "coef_1": GbtHyperparams(0.5, 0.01, 3, 8, 0.5, 0.8, 8.7, 0.8, 0.9),
    "coef_2": GbtHyperparams(0.3, 0.02, 6, 15, 0.5, 0.6, 15.1, 1.3, 0.4),
    "coef_3": GbtHyperparams(0.7, 0.01, 5, 2, 0.7, 0.7, 1.3, 0.0, 0.0),
    "U": GbtHyperparams(0.5, 0.05, 3, 2, 0.5, 1.0, 1.5, 0.0, 0.5),
    "L": GbtHyperparams(0.5, 0.04, 3, 6, 0.8, 1.0, 1.0, 0.0, 0.0),
    "p_end": GbtHyperparams(0.5, 0.01, 5, 10, 0.5, 0.7, 0.4, 0.0, 0.2),
    "p_start": GbtHyperparams(0.7, 0.01, 2, 6, 0.6, 0.7, 1.4, 0.0, 0.0),
}


def pinball_loss(y: np.ndarray, pred: np.ndarray, alpha: float) -> float:
    """Mean quantile loss L_a(r) = max(a*r, (a-1)*r) on residuals r = y - pred."""
    r = np.asarray(y, dtype=float) - np.asarray(pred, dtype=float)
    return float(np.mean(np.maximum(alpha * r, (alpha - 1.0) * r)))


def _gradient(y: np.ndarray, pred: np.ndarray, hp: GbtHyperparams) -> np.ndarray:
    r = y - pred
    if hp.objective == "l1":
        return -np.sign(r)
    alpha = hp.quantile_alpha
    return np.where(r > 0, -alpha, np.where(r < 0, 1.0 - alpha, 0.0))


def _soft_threshold(g: np.ndarray, reg_alpha: float):
    return np.sign(g) * np.maximum(np.abs(g) - reg_alpha, 0.0)


@dataclass
class Tree:
    """Flat array representation; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        cur = np.zeros(n, dtype=np.int64)
        while True:
            feat = self.feature[cur]
            internal = feat >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            f = feat[rows]
            go_left = X[rows, f] < self.threshold[cur[rows]]
            cur[rows] = np.where(go_left, self.left[cur[rows]], self.right[cur[rows]])
        return self.value[cur]

    def max_depth(self) -> int:
        depth = {0: 0}
        out = 0
        for i in range(self.feature.size):
            d = depth[i]
            if self.feature[i] >= 0:
                depth[self.left[i]] = d + 1
                depth[self.right[i]] = d + 1
            else:
                out = max(out, d)
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float))


@dataclass
class GbtModel:
    base_score: float
    trees: list[Tree]
    n_features: int
    hyperparams: GbtHyperparams
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < self.n_features:
            raise MissingFeature(
                f"model expects {self.n_features} features, row has {X.shape[1]}")
        if not np.all(np.isfinite(X[:, :self.n_features])):
            raise MissingFeature("prediction rows contain non-finite features")
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def to_dict(self) -> dict:
        hp = {k: getattr(self.hyperparams, k) for k in self.hyperparams.__dataclass_fields__}
        return {
            "format_version": 1,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "hyperparams": hp,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("format_version") != 1:
            raise MalformedRow(f"unknown model format {d.get('format_version')!r}")
        return cls(base_score=float(d["base_score"]),
                   trees=[Tree.from_dict(t) for t in d["trees"]],
                   n_features=int(d["n_features"]),
                   hyperparams=GbtHyperparams(**d["hyperparams"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GbtModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def _bin_features(X: np.ndarray, n_bins: int):
    """Quantile bin edges per feature; bin b holds x with edges[b-1] <= x < edges[b]."""
    edges = []
    binned = np.empty(X.shape, dtype=np.int32)
    probes = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    for f in range(X.shape[1]):
        e = np.unique(np.quantile(X[:, f], probes))
        binned[:, f] = np.searchsorted(e, X[:, f], side="right")
        edges.append(e)
    return binned, edges


def _best_split_numpy(hg, hh, split_ok, lam, ra, gamma, mcw):
    def score(G, H):
        t = _soft_threshold(G, ra)
        return t * t / (H + lam)

    cg = np.cumsum(hg, axis=1)[:, :-1]
    ch = np.cumsum(hh, axis=1)[:, :-1]
    G = hg[0].sum()
    H = hh[0].sum()
    gains = 0.5 * (score(cg, ch) + score(G - cg, H - ch) - score(G, H)) - gamma
    gains[(ch < mcw) | (H - ch < mcw) | ~split_ok] = -np.inf
    flat = int(np.argmax(gains))
    fi, c = divmod(flat, gains.shape[1])
    return fi, c, float(gains[fi, c])


try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _hist_kernel(binned, rows, feats, g, out_g, out_h):  # pragma: no cover - jitted
        for i in range(rows.size):
            r = rows[i]
            for k in range(feats.size):
                b = binned[r, feats[k]]
                out_g[k, b] += g[r]
                out_h[k, b] += 1.0

    @_njit(cache=True)
    def _hist_kernel_all(binned, rows, g, out_g, out_h):  # pragma: no cover - jitted
        for i in range(rows.size):
            r = rows[i]
            gv = g[r]
            for f in range(binned.shape[1]):
                b = binned[r, f]
                out_g[f, b] += gv
                out_h[f, b] += 1.0

    @_njit(cache=True)
    def _best_split_kernel(hg, hh, split_ok, lam, ra, gamma, mcw):  # pragma: no cover
        F, B = hg.shape
        G = 0.0
        H = 0.0
        for b in range(B):
            G += hg[0, b]
            H += hh[0, b]
        tg = abs(G) - ra
        base = (tg * tg / (H + lam)) if tg > 0 else 0.0
        best_gain = -np.inf
        best_f = -1
        best_c = -1
        for f in range(F):
            cg = 0.0
            ch = 0.0
            for c in range(B - 1):
                cg += hg[f, c]
                ch += hh[f, c]
                if not split_ok[f, c] or ch < mcw or H - ch < mcw:
                    continue
                tl = abs(cg) - ra
                sl = (tl * tl / (ch + lam)) if tl > 0 else 0.0
                tr = abs(G - cg) - ra
                sr = (tr * tr / (H - ch + lam)) if tr > 0 else 0.0
                gain = 0.5 * (sl + sr - base) - gamma
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_c = c
        return best_f, best_c, best_gain

    def _node_hist(binned, rows, feats, g, n_bins):
        out_g = np.zeros((feats.size, n_bins))
        out_h = np.zeros((feats.size, n_bins))
        if feats.size == binned.shape[1]:
            _hist_kernel_all(binned, rows, g, out_g, out_h)
        else:
            _hist_kernel(binned, rows, feats, g, out_g, out_h)
        return out_g, out_h

    def _best_split(hg, hh, split_ok, lam, ra, gamma, mcw):
        fi, c, gain = _best_split_kernel(hg, hh, split_ok, lam, ra, gamma, mcw)
        return int(fi), int(c), float(gain)
except ImportError:  # pragma: no cover - numba is an optional accelerator
    def _node_hist(binned, rows, feats, g, n_bins):
        F = feats.size
        flat = (binned[np.ix_(rows, feats)]
                + (np.arange(F, dtype=np.int32) * n_bins)[None, :]).ravel()
        out_g = np.bincount(flat, weights=np.repeat(g[rows], F),
                            minlength=F * n_bins).reshape(F, n_bins)
        out_h = np.bincount(flat, minlength=F * n_bins).reshape(F, n_bins).astype(float)
        return out_g, out_h

    _best_split = _best_split_numpy


def _grow_tree(binned, edges, g, resid, rows, feats, hp: GbtHyperparams):
    """Level-order greedy growth on gradient histograms with unit hessians.

    Each frontier node scores all candidate (feature, bin) splits from its
    histogram; only the smaller child of a split is re-histogrammed, the
    sibling comes by subtraction from the parent.  Terminal regions are then
    refit with the in-bag residual quantile (the pinball argmin), shrunk by
    the learning rate; that step can only lower the training loss since a
    zero leaf is always feasible.
    """
    lam, ra = hp.reg_lambda, hp.reg_alpha
    leaf_q = hp.quantile_alpha if hp.objective == "quantile" else 0.5
    mcw = max(hp.min_child_weight, 1.0)

    rows = np.asarray(rows, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.int64)
    F = feats.size
    n_bins = max(edges[f].size for f in feats) + 1
    split_ok = np.zeros((F, max(n_bins - 1, 1)), dtype=bool)
    for fi, f in enumerate(feats):
        split_ok[fi, :edges[f].size] = True

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    root_hist = _node_hist(binned, rows, feats, g, n_bins)
    frontier = [(0, rows, root_hist)]
    leaf_rows: list[tuple[int, np.ndarray]] = []
    for depth in range(hp.max_depth + 1):
        if not frontier:
            break
        if depth == hp.max_depth or n_bins < 2:
            leaf_rows += [(node, nrows) for node, nrows, _ in frontier]
            break
        next_frontier = []
        for node, nrows, (hg, hh) in frontier:
            fi, c, gain = _best_split(hg, hh, split_ok, lam, ra, hp.gamma, mcw)
            if nrows.size < 2 * mcw or gain <= 0:
                leaf_rows.append((node, nrows))
                continue
            lid, rid = len(feature), len(feature) + 1
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            feature[node] = int(feats[fi])
            threshold[node] = float(edges[feats[fi]][c])
            left[node], right[node] = lid, rid
            go_left = binned[nrows, feats[fi]] <= c
            lrows, rrows = nrows[go_left], nrows[~go_left]
            if lrows.size <= rrows.size:
                lhist = _node_hist(binned, lrows, feats, g, n_bins)
                rhist = (hg - lhist[0], hh - lhist[1])
            else:
                rhist = _node_hist(binned, rrows, feats, g, n_bins)
                lhist = (hg - rhist[0], hh - rhist[1])
            next_frontier.append((lid, lrows, lhist))
            next_frontier.append((rid, rrows, rhist))
        frontier = next_frontier

    value = np.zeros(len(feature))
    for node, nrows in leaf_rows:
        value[node] = hp.learning_rate * float(np.quantile(resid[nrows], leaf_q))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                value)


def train_gbt(X: np.ndarray, y: np.ndarray, hp: GbtHyperparams) -> GbtModel:
    """Boost trees on pinball (or absolute) loss.

    The base score is the target's empirical alpha-quantile.  When a
    validation fraction and patience are configured, the last fraction of
    rows (a time-ordered tail) monitors early stopping and the ensemble is
    truncated to the best round.  A constant target yields the base score
    alone with no trees.
    """
    hp.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size or y.size < 2:
        raise MalformedRow("X must be (n, p) with n == len(y) >= 2")

    alpha = hp.quantile_alpha if hp.objective == "quantile" else 0.5
    base = float(np.quantile(y, alpha))
    if np.all(y == y[0]):
        return GbtModel(base_score=float(y[0]), trees=[], n_features=X.shape[1],
                        hyperparams=hp)

    use_val = hp.early_stopping_rounds is not None and hp.validation_fraction > 0
    n_val = int(round(X.shape[0] * hp.validation_fraction)) if use_val else 0
    if n_val < 1:
        use_val, n_val = False, 0
    n_train = X.shape[0] - n_val
    Xt, yt = X[:n_train], y[:n_train]
    Xv, yv = X[n_train:], y[n_train:]

    rng = np.random.default_rng(hp.seed)
    binned, edges = _bin_features(Xt, hp.n_bins)
    n, p = Xt.shape

    def loss(yy, pp):
        if hp.objective == "l1":
            return float(np.mean(np.abs(yy - pp)))
        return pinball_loss(yy, pp, alpha)

    pred_t = np.full(n, base)
    pred_v = np.full(n_val, base)
    trees: list[Tree] = []
    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = np.inf
    best_round = 0
    for _ in range(hp.n_rounds):
        g = _gradient(yt, pred_t, hp)
        if hp.subsample < 1.0:
            rows = np.sort(rng.permutation(n)[:max(1, int(round(hp.subsample * n)))])
        else:
            rows = np.arange(n)
        if hp.colsample_bytree < 1.0:
            feats = np.sort(rng.permutation(p)[:max(1, int(round(hp.colsample_bytree * p)))])
        else:
            feats = np.arange(p)
        tree = _grow_tree(binned, edges, g, yt - pred_t, rows, feats, hp)
        trees.append(tree)
        pred_t += tree.predict(Xt)
        train_losses.append(loss(yt, pred_t))
        if use_val:
            pred_v += tree.predict(Xv)
            val_losses.append(loss(yv, pred_v))
            if val_losses[-1] < best_val - 1e-12:
                best_val = val_losses[-1]
                best_round = len(trees)
            elif len(trees) - best_round >= hp.early_stopping_rounds:
                trees = trees[:best_round]
                break
    model = GbtModel(base_score=base, trees=trees, n_features=X.shape[1],
                     hyperparams=hp, train_losses=train_losses,
                     val_losses=val_losses)
    return model


def predict(model: GbtModel, X: np.ndarray) -> np.ndarray:
    """Base score plus the sum of leaf values over all trees."""
    return model.predict(X)
