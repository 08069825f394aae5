"""Boosted-tree engine against a brute-force reference implementation.

The oracle re-derives every greedy split by exhaustive search over all
(feature, midpoint) candidates with the same gain formula, tie rules
(larger gain wins; within a feature, equal gain keeps the smallest
threshold; across features, the earlier feature wins ties), and leaf
weights.  Fixtures use dyadic-rational data so both implementations sum
without rounding and must agree bit-for-bit.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocuflow.core import substream
from ocuflow.gbt import (FitReport, GbtHyperparams, GbtRegressor, TreeEnsemble,
                         permutation_importance, predict, r2_score,
                         random_search, rmse, split_80_20, train)

STAGE1_DEFAULTS = dict(n_estimators=425, learning_rate=0.0851, max_depth=12,
                       subsample=0.7307, colsample_bytree=0.9356,
                       gamma=0.4302, reg_alpha=0.3033, reg_lambda=0.5371)
STAGE2_DEFAULTS = dict(n_estimators=491, learning_rate=0.1731, max_depth=3,
                       subsample=0.8645, colsample_bytree=0.5994,
                       gamma=0.0028, reg_alpha=0.0, reg_lambda=1.0)


def _soft(g: float, alpha: float) -> float:
    return np.sign(g) * max(abs(g) - alpha, 0.0)


def _score(g: float, h: float, alpha: float, lam: float) -> float:
    s = _soft(g, alpha)
    return s * s / (h + lam)


def _oracle_best_split(X, g, hp):
    """Exhaustive greedy split search over all features and midpoints."""
    n, d = X.shape
    G, H = g.sum(), float(n)
    parent = _score(G, H, hp.reg_alpha, hp.reg_lambda)
    best = None  # (gain, feature, threshold)
    for j in range(d):
        xj = X[:, j]
        values = np.unique(xj)
        for a, b in zip(values[:-1], values[1:]):
            thr = a + 0.5 * (b - a)
            if thr <= a:
                thr = b
            mask = xj < thr
            gl, hl = g[mask].sum(), float(mask.sum())
            gain = 0.5 * (_score(gl, hl, hp.reg_alpha, hp.reg_lambda)
                          + _score(G - gl, H - hl, hp.reg_alpha, hp.reg_lambda)
                          - parent) - hp.gamma
            # within a feature ties keep the smaller threshold,
            # across features the earlier feature wins ties
            if best is None or gain > best[0]:
                best = (gain, j, thr)
    return best


def _oracle_tree_predict(X_node, g_node, hp, depth, X_query, node_mask):
    """Recursive greedy tree; returns leaf weights for X_query rows."""
    out = np.zeros(X_query.shape[0])
    G, H = g_node.sum(), float(g_node.size)
    best = _oracle_best_split(X_node, g_node, hp) if depth > 0 else None
    if best is None or best[0] <= 0.0 or len(np.unique(X_node, axis=0)) == 1:
        out[node_mask] = -_soft(G, hp.reg_alpha) / (H + hp.reg_lambda)
        return out
    _, j, thr = best
    left = X_node[:, j] < thr
    q_left = node_mask & (X_query[:, j] < thr)
    q_right = node_mask & ~(X_query[:, j] < thr)
    out += _oracle_tree_predict(X_node[left], g_node[left], hp, depth - 1,
                                X_query, q_left)
    out += _oracle_tree_predict(X_node[~left], g_node[~left], hp, depth - 1,
                                X_query, q_right)
    return out


def _oracle_boost(X, y, hp, X_query):
    base = float(y.mean())
    pred_train = np.full(y.size, base)
    pred_query = np.full(X_query.shape[0], base)
    for _ in range(hp.n_estimators):
        g = pred_train - y
        all_rows = np.ones(X.shape[0], dtype=bool)
        pred_train = pred_train + hp.learning_rate * _oracle_tree_predict(
            X, g, hp, hp.max_depth, X, all_rows)
        pred_query = pred_query + hp.learning_rate * _oracle_tree_predict(
            X, g, hp, hp.max_depth, X_query,
            np.ones(X_query.shape[0], dtype=bool))
    return pred_query


def _dyadic(rng, n, d, denom=8):
    """Random matrix of dyadic rationals; sums are exact in binary."""
    return rng.integers(-2 * denom, 2 * denom, size=(n, d)) / denom


class TestAgainstOracle:
    @pytest.mark.parametrize("seed", range(12))
    def test_single_depth1_tree(self, seed):
        rng = substream(seed, "gbt-oracle-d1")
        X = _dyadic(rng, 14, 2)
        y = _dyadic(rng, 14, 1)[:, 0]
        hp = GbtHyperparams(n_estimators=1, learning_rate=0.5, max_depth=1,
                            gamma=0.0, reg_alpha=0.0, reg_lambda=1.0)
        model = train(X, y, hp, substream(seed, "fit"))
        assert np.allclose(model.predict(X), _oracle_boost(X, y, hp, X),
                           atol=1e-12)

    @pytest.mark.parametrize("seed", range(12))
    def test_deeper_regularized_trees(self, seed):
        rng = substream(seed, "gbt-oracle-d3")
        X = _dyadic(rng, 24, 3)
        y = (X[:, 0] - 0.25 * X[:, 1] ** 2 + _dyadic(rng, 24, 1)[:, 0] / 4)
        hp = GbtHyperparams(n_estimators=3, learning_rate=0.25, max_depth=3,
                            gamma=0.125, reg_alpha=0.5, reg_lambda=2.0)
        model = train(X, y, hp, substream(seed, "fit"))
        X_query = _dyadic(substream(seed, "q"), 40, 3)
        assert np.allclose(model.predict(X_query),
                           _oracle_boost(X, y, hp, X_query), atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_gamma_can_prune_to_stump(self, seed):
        rng = substream(seed, "gbt-oracle-gamma")
        X = _dyadic(rng, 12, 2)
        y = _dyadic(rng, 12, 1)[:, 0]
        hp = GbtHyperparams(n_estimators=2, learning_rate=1.0, max_depth=2,
                            gamma=50.0, reg_lambda=1.0)
        model = train(X, y, hp, substream(seed, "fit"))
        # a gamma this large forbids every split: prediction is the mean
        assert np.allclose(model.predict(X), np.full(12, y.mean()),
                           atol=1e-12)
        assert np.allclose(model.predict(X), _oracle_boost(X, y, hp, X),
                           atol=1e-12)


class TestDegenerateCases:
    def test_constant_target(self):
        rng = substream(30, "gbt-const")
        X = rng.normal(size=(50, 4))
        y = np.full(50, 3.25)
        for hp in (GbtHyperparams(), GbtHyperparams(n_estimators=7,
                                                    max_depth=2,
                                                    reg_alpha=1.0)):
            model = train(X, y, hp, substream(30, "fit"))
            assert np.allclose(model.predict(X), 3.25, atol=1e-12)

    def test_depth_zero_predicts_mean(self):
        rng = substream(31, "gbt-stump")
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        hp = GbtHyperparams(n_estimators=1, max_depth=0)
        model = train(X, y, hp, substream(31, "fit"))
        assert np.allclose(model.predict(X), y.mean(), atol=1e-12)

    def test_empty_ensemble_is_base_score(self):
        rng = substream(32, "gbt-empty")
        X = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        model = train(X, y, GbtHyperparams(n_estimators=0), substream(32, "f"))
        assert np.allclose(model.predict(X), y.mean(), atol=1e-15)

    def test_monotone_function_high_r2(self):
        rng = substream(33, "gbt-mono")
        x = rng.uniform(0.0, 1.0, size=200)
        X = x[:, None]
        hp = GbtHyperparams(**STAGE2_DEFAULTS)
        train_idx, test_idx = split_80_20(np.arange(200), substream(33, "sp"))
        model = train(X[train_idx], x[train_idx], hp, substream(33, "fit"))
        held_out = r2_score(x[test_idx], model.predict(X[test_idx]))
        assert held_out >= 0.99
        assert model.predict(np.array([0.5])) == pytest.approx(0.5, abs=0.05)


class TestPredictContract:
    def _model(self):
        rng = substream(34, "gbt-pred")
        X = rng.normal(size=(60, 3))
        y = X @ np.array([1.0, -2.0, 0.5])
        return X, y, train(X, y, GbtHyperparams(n_estimators=20, max_depth=3),
                           substream(34, "fit"), feature_names=("a", "b", "c"))

    def test_batch_equals_rowwise(self):
        X, _, model = self._model()
        batch = model.predict(X)
        rows = np.array([model.predict(X[i]) for i in range(X.shape[0])])
        assert np.array_equal(batch, rows)

    def test_dict_row(self):
        X, _, model = self._model()
        row = {"a": X[0, 0], "b": X[0, 1], "c": X[0, 2]}
        assert predict(model, row) == model.predict(X[0])
        with pytest.raises(ValueError, match="missing"):
            model.predict({"a": 1.0, "b": 2.0})
        with pytest.raises(ValueError, match="unknown"):
            model.predict({"a": 1.0, "b": 2.0, "c": 3.0, "d": 4.0})

    def test_wrong_width_rejected(self):
        _, _, model = self._model()
        with pytest.raises(ValueError, match="features"):
            model.predict(np.ones((4, 5)))

    def test_serialization_round_trip(self):
        X, _, model = self._model()
        clone = TreeEnsemble.from_dict(model.to_dict())
        assert np.array_equal(clone.predict(X), model.predict(X))
        assert clone.feature_names == model.feature_names

    def test_nonfinite_rejected(self):
        _, _, model = self._model()
        with pytest.raises(ValueError, match="finite"):
            model.predict(np.array([1.0, np.nan, 2.0]))


class TestSplit8020:
    def test_counts(self):
        train_idx, test_idx = split_80_20(np.arange(10), substream(35, "s"))
        assert (len(train_idx), len(test_idx)) == (8, 2)

    def test_union_is_input(self):
        rows = np.arange(37)
        a, b = split_80_20(rows, substream(36, "s"))
        assert sorted(np.concatenate([a, b]).tolist()) == rows.tolist()

    def test_determinism(self):
        a1, b1 = split_80_20(np.arange(50), substream(37, "s"))
        a2, b2 = split_80_20(np.arange(50), substream(37, "s"))
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="at least 5"):
            split_80_20(np.arange(4), substream(38, "s"))

    @given(st.integers(min_value=5, max_value=200))
    @settings(max_examples=40)
    def test_sizes_property(self, n):
        a, b = split_80_20(np.arange(n), np.random.default_rng(n))
        assert len(b) == int(round(0.2 * n))
        assert len(a) + len(b) == n


class TestRandomSearch:
    def _data(self):
        rng = substream(39, "gbt-search")
        X = rng.normal(size=(80, 2))
        y = X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 0.1, size=80)
        return X, y

    def test_single_iteration_returns_single_draw(self):
        X, y = self._data()
        space = {"n_estimators": [10], "max_depth": [2],
                 "learning_rate": ("uniform", 0.2, 0.3)}
        hp = random_search(X, y, space, n_iter=1, rng=substream(39, "rs"))
        assert hp.n_estimators == 10
        assert hp.max_depth == 2
        assert 0.2 <= hp.learning_rate <= 0.3

    def test_singleton_space_returns_stage1_defaults(self):
        X, y = self._data()
        space = {k: [v] for k, v in STAGE1_DEFAULTS.items()}
        hp = random_search(X, y, space, n_iter=3, rng=substream(40, "rs"))
        assert hp == GbtHyperparams(**STAGE1_DEFAULTS)

    def test_best_has_lowest_cv_rmse(self):
        X, y = self._data()
        space = {"n_estimators": [2, 40], "max_depth": [1, 3]}
        # replicate the search loop to collect every candidate's score
        rng = substream(41, "rs")
        folds = np.array_split(rng.permutation(X.shape[0]), 5)
        scores = {}
        for _ in range(4):
            hp = GbtHyperparams(
                n_estimators=[2, 40][int(rng.integers(0, 2))],
                max_depth=[1, 3][int(rng.integers(0, 2))])
            fold_rmse = []
            for i in range(5):
                test_idx = folds[i]
                tr = np.concatenate([folds[j] for j in range(5) if j != i])
                m = train(X[tr], y[tr], hp, rng)
                fold_rmse.append(rmse(y[test_idx], m.predict(X[test_idx])))
            scores.setdefault((hp.n_estimators, hp.max_depth),
                              float(np.mean(fold_rmse)))
        best = random_search(X, y, space, n_iter=4, rng=substream(41, "rs"))
        assert scores[(best.n_estimators, best.max_depth)] == min(scores.values())

    def test_unknown_hyperparameter_rejected(self):
        X, y = self._data()
        with pytest.raises(ValueError, match="unknown"):
            random_search(X, y, {"depth": [2]}, n_iter=1,
                          rng=substream(42, "rs"))


class TestPermutationImportance:
    def test_unused_feature_scores_zero(self):
        rng = substream(43, "gbt-imp")
        X = rng.normal(size=(100, 3))
        y = 2.0 * X[:, 0]  # feature 2 never used
        model = train(X[:, :2], y, GbtHyperparams(n_estimators=30,
                                                  max_depth=3),
                      substream(43, "fit"))
        # retrain on all 3 columns; the third stays irrelevant
        model3 = train(X, y, GbtHyperparams(n_estimators=30, max_depth=3),
                       substream(43, "fit3"))
        imp = permutation_importance(model3, X, y, substream(43, "perm"))
        assert imp["f0"] > 0.1
        # the target ignores f2; shared shuffles make its delta tiny
        assert abs(imp["f2"]) < 1e-2
        unused = train(X, np.zeros(100), GbtHyperparams(n_estimators=2),
                       substream(43, "z"))
        imp0 = permutation_importance(unused, X, np.zeros(100),
                                      substream(43, "perm0"))
        assert all(abs(v) < 1e-9 for v in imp0.values())


class TestEstimatorApi:
    def test_fit_predict_get_params(self):
        rng = substream(44, "gbt-est")
        X = rng.normal(size=(60, 2))
        y = X[:, 0] - X[:, 1]
        est = GbtRegressor(n_estimators=25, max_depth=3, random_state=7)
        assert est.get_params()["n_estimators"] == 25
        est.fit(X, y)
        assert est.ensemble_ is not None
        pred = est.predict(X)
        assert r2_score(y, pred) > 0.9

    def test_set_params_chains(self):
        est = GbtRegressor().set_params(max_depth=2, learning_rate=0.3)
        assert est.get_params()["max_depth"] == 2
        assert est.get_params()["learning_rate"] == 0.3

    def test_predict_before_fit_raises(self):
        with pytest.raises((RuntimeError, ValueError, AttributeError)):
            GbtRegressor().predict(np.ones((2, 2)))

    def test_same_random_state_reproduces(self):
        rng = substream(45, "gbt-est2")
        X = rng.normal(size=(50, 2))
        y = X[:, 0]
        p1 = GbtRegressor(random_state=11).fit(X, y).predict(X)
        p2 = GbtRegressor(random_state=11).fit(X, y).predict(X)
        assert np.array_equal(p1, p2)


class TestMetrics:
    def test_rmse(self):
        assert rmse([1.0, 2.0], [2.0, 4.0]) == pytest.approx(
            np.sqrt((1 + 4) / 2))

    def test_r2_perfect(self):
        assert r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_r2_mean_predictor_zero(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2_score(y, np.full(3, 2.0)) == pytest.approx(0.0)

    def test_fit_report_round_trip(self):
        r = FitReport(r2=0.9, rmse=0.1, split_seed=123, n_train=80, n_test=20)
        assert FitReport.from_dict(r.to_dict()) == r
