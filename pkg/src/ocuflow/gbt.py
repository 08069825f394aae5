"""Gradient-boosted regression trees, implemented from scratch.

Second-order boosting on squared-error loss (per-row gradient
g = prediction - target, hessian 1): each round subsamples rows and
features, grows one exact-greedy binary tree level by level, and stores
raw leaf weights w = -soft_alpha(G) / (H + reg_lambda), where soft_alpha
is the L1 soft-threshold.  Predictions apply the learning rate at read
time: prediction = base_score + learning_rate * sum of leaf weights.

Split search is exact greedy over midpoints between consecutive distinct
sorted feature values, vectorized across all frontier nodes of a level
with one argsort per (level, feature).  Gain for a candidate split is

    0.5 * [S(G_L, H_L) + S(G_R, H_R) - S(G, H)] - gamma,
    S(G, H) = soft_alpha(G)^2 / (H + reg_lambda)

and a node splits only when its best gain is strictly positive.  Ties
are broken deterministically: per feature the smallest best-gain
threshold wins, across features the lowest feature index wins.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .base import ParamsMixin
from .validation import as_float_array, check_X_y

__all__ = [
    "GbtHyperparams",
    "Tree",
    "TreeEnsemble",
    "FitReport",
    "GbtRegressor",
    "train",
    "predict",
    "split_80_20",
    "random_search",
    "permutation_importance",
    "r2_score",
    "rmse",
]


@dataclasses.dataclass(frozen=True)
class GbtHyperparams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 6
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    gamma: float = 0.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0

    def __post_init__(self):
        if int(self.n_estimators) != self.n_estimators or self.n_estimators < 0:
            raise ValueError("n_estimators must be a count >= 0")
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise ValueError("max_depth must be a count >= 0")
        object.__setattr__(self, "n_estimators", int(self.n_estimators))
        object.__setattr__(self, "max_depth", int(self.max_depth))
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ValueError("learning_rate must be finite and > 0")
        for name in ("subsample", "colsample_bytree"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1]")
        for name in ("gamma", "reg_alpha", "reg_lambda"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbtHyperparams":
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class Tree:
    """One regression tree as flat node arrays (node 0 is the root).

    Leaves carry their own index in ``left``/``right`` and a -inf
    threshold, so a fixed number of masked traversal steps lands every
    row on its leaf.
    """

    feature: np.ndarray    # int32, 0 for leaves
    threshold: np.ndarray  # float64, -inf for leaves
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    weight: np.ndarray     # float64, raw leaf weights (0 for internal)
    is_leaf: np.ndarray    # bool

    def leaf_weights(self, X: np.ndarray, n_steps: int) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        for _ in range(n_steps):
            xv = np.take_along_axis(X, self.feature[node][:, None], axis=1)[:, 0]
            node = np.where(xv < self.threshold[node], self.left[node], self.right[node])
        return self.weight[node]

    def depth(self) -> int:
        depths = np.zeros(self.feature.size, dtype=np.int64)
        for i in range(self.feature.size):
            if not self.is_leaf[i]:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if depths.size else 0

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "weight": self.weight.tolist(),
            "is_leaf": [int(v) for v in self.is_leaf],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            weight=np.asarray(d["weight"], dtype=np.float64),
            is_leaf=np.asarray(d["is_leaf"], dtype=bool),
        )


@dataclasses.dataclass(frozen=True)
class TreeEnsemble:
    base_score: float
    trees: tuple
    hyperparams: GbtHyperparams
    feature_names: tuple

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X) -> np.ndarray | float:
        X, single = _as_matrix(X, self.n_features, self.feature_names)
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        steps = self.hyperparams.max_depth
        for tree in self.trees:
            out += self.hyperparams.learning_rate * tree.leaf_weights(X, steps)
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "hyperparams": self.hyperparams.to_dict(),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls(
            base_score=float(d["base_score"]),
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            hyperparams=GbtHyperparams.from_dict(d["hyperparams"]),
            feature_names=tuple(d["feature_names"]),
        )


@dataclasses.dataclass(frozen=True)
class FitReport:
    r2: float
    rmse: float
    split_seed: int
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(r2=float(d["r2"]), rmse=float(d["rmse"]),
                   split_seed=int(d["split_seed"]),
                   n_train=int(d["n_train"]), n_test=int(d["n_test"]))


def _as_matrix(X, n_features: int, feature_names) -> tuple[np.ndarray, bool]:
    """Coerce a row (1-D, dict) or batch (2-D) to a validated matrix."""
    if isinstance(X, dict):
        missing = [n for n in feature_names if n not in X]
        if missing:
            raise ValueError(f"row is missing features: {missing}")
        extra = [k for k in X if k not in feature_names]
        if extra:
            raise ValueError(f"row has unknown features: {extra}")
        X = [float(X[n]) for n in feature_names]
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    return X, single


def _soft(g: np.ndarray, alpha: float) -> np.ndarray:
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


def _leaf_score(g, h, alpha: float, lam: float) -> np.ndarray:
    s = _soft(g, alpha)
    return s * s / (h + lam)


def _grow_tree(Xs: np.ndarray, g: np.ndarray, hp: GbtHyperparams,
               feats: np.ndarray) -> Tree:
    """Grow one tree level-wise on the (already subsampled) rows."""
    n = g.size
    lam, alpha = hp.reg_lambda, hp.reg_alpha
    feature = [0]
    threshold = [-np.inf]
    left = [0]
    right = [0]
    weight = [0.0]
    is_leaf = [True]

    node_of = np.zeros(n, dtype=np.int64)
    frontier = [0]
    node_g = np.array([g.sum()])
    node_h = np.array([float(n)])

    def finalize(nid: int):
        weight[nid] = float(-_soft(node_g[nid], alpha) / (node_h[nid] + lam))

    for _level in range(hp.max_depth):
        if not frontier:
            break
        n_nodes = len(feature)
        best_gain = np.full(n_nodes, -np.inf)
        best_feat = np.zeros(n_nodes, dtype=np.int64)
        best_thr = np.zeros(n_nodes, dtype=np.float64)
        for j in feats:
            xj = Xs[:, j]
            order = np.lexsort((xj, node_of))
            ns = node_of[order]
            xs = xj[order]
            cg = np.concatenate([[0.0], np.cumsum(g[order])])
            # candidate boundary after position i: same node, strictly larger x
            cand = np.nonzero((ns[1:] == ns[:-1]) & (xs[1:] > xs[:-1]))[0]
            if cand.size == 0:
                continue
            starts = np.concatenate([[0], np.nonzero(ns[1:] != ns[:-1])[0] + 1])
            start_of = np.zeros(n_nodes, dtype=np.int64)
            start_of[ns[starts]] = starts
            nid = ns[cand]
            gl = cg[cand + 1] - cg[start_of[nid]]
            hl = (cand + 1 - start_of[nid]).astype(np.float64)
            gr = node_g[nid] - gl
            hr = node_h[nid] - hl
            gain = 0.5 * (_leaf_score(gl, hl, alpha, lam)
                          + _leaf_score(gr, hr, alpha, lam)
                          - _leaf_score(node_g[nid], node_h[nid], alpha, lam)) - hp.gamma
            a, b = xs[cand], xs[cand + 1]
            thr = a + 0.5 * (b - a)
            thr = np.where(thr <= a, b, thr)  # keep threshold strictly above a
            # per node: max gain, ties -> smallest threshold (take block last)
            o2 = np.lexsort((-thr, gain, nid))
            nid_s = nid[o2]
            last = np.concatenate([np.nonzero(nid_s[1:] != nid_s[:-1])[0],
                                   [nid_s.size - 1]])
            pick = o2[last]
            upd = gain[pick] > best_gain[nid[pick]]
            tgt = nid[pick][upd]
            best_gain[tgt] = gain[pick][upd]
            best_thr[tgt] = thr[pick][upd]
            best_feat[tgt] = j

        split_ids = [nid for nid in frontier if best_gain[nid] > 0.0]
        for nid in frontier:
            if best_gain[nid] <= 0.0:
                finalize(nid)
        if not split_ids:
            frontier = []
            break
        children = []
        child_left = np.zeros(n_nodes, dtype=np.int64)
        child_right = np.zeros(n_nodes, dtype=np.int64)
        for nid in split_ids:
            lid, rid = len(feature), len(feature) + 1
            feature[nid] = int(best_feat[nid])
            threshold[nid] = float(best_thr[nid])
            left[nid], right[nid] = lid, rid
            is_leaf[nid] = False
            for _ in range(2):
                feature.append(0)
                threshold.append(-np.inf)
                left.append(len(feature) - 1)
                right.append(len(feature) - 1)
                weight.append(0.0)
                is_leaf.append(True)
            child_left[nid], child_right[nid] = lid, rid
            children.extend([lid, rid])
        split_set = np.zeros(n_nodes, dtype=bool)
        split_set[split_ids] = True
        moving = split_set[node_of]
        mv_nodes = node_of[moving]
        fidx = np.asarray(best_feat)[mv_nodes]
        xv = np.take_along_axis(Xs[moving], fidx[:, None], axis=1)[:, 0]
        go_left = xv < best_thr[mv_nodes]
        node_of[moving] = np.where(go_left, child_left[mv_nodes], child_right[mv_nodes])
        node_g = np.bincount(node_of, weights=g, minlength=len(feature))
        node_h = np.bincount(node_of, minlength=len(feature)).astype(np.float64)
        frontier = children

    for nid in frontier:
        finalize(nid)

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        weight=np.asarray(weight, dtype=np.float64),
        is_leaf=np.asarray(is_leaf, dtype=bool),
    )


def _subsample_rows(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    if rate == 1.0:
        return np.arange(n)
    m = min(n, max(1, int(round(rate * n))))
    return rng.permutation(n)[:m]


def _subsample_features(d: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    if rate == 1.0:
        return np.arange(d)
    m = min(d, max(1, int(math.ceil(rate * d))))
    return np.sort(rng.permutation(d)[:m])


def train(X, y, hp: GbtHyperparams, rng: np.random.Generator,
          feature_names=None) -> TreeEnsemble:
    """Fit a boosted ensemble; deterministic for a given generator state."""
    X, y = check_X_y(X, y, min_rows=2)
    n, d = X.shape
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(d))
    else:
        feature_names = tuple(str(nm) for nm in feature_names)
        if len(feature_names) != d:
            raise ValueError(f"{len(feature_names)} feature names for {d} columns")
    base = float(y.mean())
    pred = np.full(n, base, dtype=np.float64)
    trees = []
    for _ in range(hp.n_estimators):
        g = pred - y
        rows = _subsample_rows(n, hp.subsample, rng)
        feats = _subsample_features(d, hp.colsample_bytree, rng)
        tree = _grow_tree(X[rows], g[rows], hp, feats)
        trees.append(tree)
        pred += hp.learning_rate * tree.leaf_weights(X, hp.max_depth)
    return TreeEnsemble(base_score=base, trees=tuple(trees),
                        hyperparams=hp, feature_names=feature_names)


def predict(model: TreeEnsemble, row):
    """Predict one row (1-D array or feature dict) or a 2-D batch."""
    return model.predict(row)


def split_80_20(rows, rng: np.random.Generator):
    """Shuffle rows into disjoint (train, test) with |test| = round(0.2 n)."""
    rows = np.asarray(rows)
    n = rows.shape[0]
    if n < 5:
        raise ValueError("need at least 5 rows for an 80/20 split")
    n_test = int(round(0.2 * n))
    perm = rng.permutation(n)
    return rows[perm[n_test:]], rows[perm[:n_test]]


def rmse(y_true, y_pred) -> float:
    y_true = as_float_array(y_true, "y_true", min_len=1)
    y_pred = as_float_array(y_pred, "y_pred", min_len=1)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def r2_score(y_true, y_pred) -> float:
    y_true = as_float_array(y_true, "y_true", min_len=2)
    y_pred = as_float_array(y_pred, "y_pred", min_len=2)
    sse = float(((y_true - y_pred) ** 2).sum())
    sst = float(((y_true - y_true.mean()) ** 2).sum())
    if sst == 0.0:
        return 1.0 if sse == 0.0 else -math.inf
    return 1.0 - sse / sst


def _sample_space(space: dict, rng: np.random.Generator) -> dict:
    draw = {}
    for name, spec in space.items():
        if isinstance(spec, tuple) and len(spec) == 3 and spec[0] in ("uniform", "loguniform"):
            kind, lo, hi = spec
            if kind == "uniform":
                draw[name] = float(rng.uniform(lo, hi))
            else:
                draw[name] = float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi)))
        else:
            values = list(spec)
            draw[name] = values[int(rng.integers(0, len(values)))]
    return draw


def random_search(X, y, space: dict, n_iter: int, rng: np.random.Generator,
                  k_folds: int = 5) -> GbtHyperparams:
    """Randomized hyperparameter search by k-fold cross-validated RMSE.

    ``space`` maps hyperparameter names to either a sequence of discrete
    candidates or ``("uniform", lo, hi)`` / ``("loguniform", lo, hi)``.
    Returns the draw with the lowest mean fold RMSE; ties keep the
    earlier draw.
    """
    X, y = check_X_y(X, y, min_rows=k_folds)
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    unknown = set(space) - {f.name for f in dataclasses.fields(GbtHyperparams)}
    if unknown:
        raise ValueError(f"unknown hyperparameters in space: {sorted(unknown)}")
    folds = np.array_split(rng.permutation(X.shape[0]), k_folds)
    best_hp, best_rmse = None, math.inf
    for _ in range(n_iter):
        hp = GbtHyperparams(**_sample_space(space, rng))
        fold_rmse = []
        for i in range(k_folds):
            test_idx = folds[i]
            train_idx = np.concatenate([folds[j] for j in range(k_folds) if j != i])
            model = train(X[train_idx], y[train_idx], hp, rng)
            fold_rmse.append(rmse(y[test_idx], model.predict(X[test_idx])))
        mean_rmse = float(np.mean(fold_rmse))
        if mean_rmse < best_rmse:
            best_hp, best_rmse = hp, mean_rmse
    return best_hp


def permutation_importance(model: TreeEnsemble, X, y,
                           rng: np.random.Generator,
                           n_repeats: int = 10) -> dict[str, float]:
    """Mean RMSE increase when one feature column is shuffled.

    The same ``n_repeats`` permutations are reused for every feature so
    the comparisons are paired and an unused feature scores exactly 0.
    """
    X, y = check_X_y(X, y, min_rows=1)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    baseline = rmse(y, model.predict(X))
    perms = [rng.permutation(X.shape[0]) for _ in range(n_repeats)]
    out = {}
    for j, name in enumerate(model.feature_names):
        deltas = []
        for perm in perms:
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            deltas.append(rmse(y, model.predict(Xp)) - baseline)
        out[name] = float(np.mean(deltas))
    return out


class GbtRegressor(ParamsMixin):
    """Boosted-tree regressor with a fit/predict estimator interface."""

    def __init__(self, n_estimators: int = 100, learning_rate: float = 0.1,
                 max_depth: int = 6, subsample: float = 1.0,
                 colsample_bytree: float = 1.0, gamma: float = 0.0,
                 reg_alpha: float = 0.0, reg_lambda: float = 1.0,
                 random_state: int | None = None):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.subsample = subsample
        self.colsample_bytree = colsample_bytree
        self.gamma = gamma
        self.reg_alpha = reg_alpha
        self.reg_lambda = reg_lambda
        self.random_state = random_state

    def hyperparams(self) -> GbtHyperparams:
        params = {k: v for k, v in self.get_params().items() if k != "random_state"}
        return GbtHyperparams(**params)

    def fit(self, X, y, feature_names=None, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(self.random_state)
        self.ensemble_ = train(X, y, self.hyperparams(), rng, feature_names=feature_names)
        return self

    def predict(self, X):
        if not hasattr(self, "ensemble_"):
            raise ValueError("estimator is not fitted; call fit first")
        return self.ensemble_.predict(X)

    @classmethod
    def from_ensemble(cls, ensemble: TreeEnsemble) -> "GbtRegressor":
        est = cls(**ensemble.hyperparams.to_dict())
        est.ensemble_ = ensemble
        return est
