"""Nonparametric and agreement statistics.

Every test computes its statistic from scratch (ranking via
scipy.stats.rankdata with average ties; distribution tail functions via
scipy.stats) and reports which p-value route was taken in
``TestResult.method``:

* ``exact``         — full enumeration of the permutation null
* ``t-approx``      — Student-t approximation (Spearman)
* ``normal-approx`` — tie-corrected Gaussian approximation
* ``chi2-approx``   — chi-square approximation (Kruskal-Wallis)

Exact routes: Wilcoxon signed-rank enumerates all 2^n sign assignments
(n <= 20) through an integer convolution over doubled ranks;
Mann-Whitney enumerates all C(n1+n2, n1) group assignments
(min(n1, n2) <= 10) through a subset-count convolution, which remains
exact under ties.
"""

from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np
from scipy import stats as _sps

from .validation import as_float_array, check_consistent_length

__all__ = [
    "TestResult",
    "BlandAltman",
    "OlsFit",
    "spearman_rho",
    "wilcoxon_signed_rank",
    "kruskal_wallis",
    "mann_whitney_u",
    "mann_whitney_bonferroni",
    "bland_altman",
    "icc_2_1",
    "bootstrap_ci",
    "cohens_kappa",
    "ols_fit",
    "deming_fit",
]

WILCOXON_EXACT_MAX_N = 20
MWU_EXACT_MAX_MIN_N = 10


@dataclasses.dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # "exact" | "t-approx" | "normal-approx" | "chi2-approx"
    label: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError(f"p_value out of [0,1]: {self.p_value!r}")


@dataclasses.dataclass(frozen=True)
class BlandAltman:
    bias: float
    sd_diff: float
    loa_lower: float
    loa_upper: float


@dataclasses.dataclass(frozen=True)
class OlsFit:
    intercept: float
    slope: float
    p_slope: float
    r2_adj: float
    se_slope: float
    se_intercept: float
    n: int


def _ranks(x: np.ndarray) -> np.ndarray:
    return _sps.rankdata(x, method="average")


def _tie_term(values: np.ndarray) -> float:
    """sum over tie groups of (t^3 - t)."""
    _, counts = np.unique(values, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def spearman_rho(x, y) -> TestResult:
    """Spearman rank correlation with average ranks; p by t-approximation."""
    x = as_float_array(x, "x", min_len=3)
    y = as_float_array(y, "y", min_len=3)
    n = check_consistent_length(x, y)
    rx, ry = _ranks(x), _ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        raise ValueError("undefined correlation: an input vector is constant")
    rho = float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * _sps.t.sf(abs(t), df=n - 2))
    return TestResult(statistic=rho, p_value=min(1.0, p), method="t-approx")


def _signed_rank_exact_p(ranks2: np.ndarray, w2_obs: int) -> float:
    """Two-sided exact p for the signed-rank statistic.

    ``ranks2`` are the doubled (hence integer) ranks of |diff|; the null
    assigns each rank to + or - with probability 1/2.  Returns
    2 * P(W2 <= w2_obs) for the doubled statistic, capped at 1; by the
    symmetry of the null this equals the usual two-sided definition.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    upper = 0
    for r in ranks2:
        r = int(r)
        upper += r
        counts[r:upper + 1] += counts[0:upper + 1 - r].copy()
    cdf = counts[: w2_obs + 1].sum() / counts.sum()
    return min(1.0, 2.0 * cdf)


def wilcoxon_signed_rank(diffs) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zeros are dropped first.  The statistic is min(W+, W-).  Exact
    enumeration for n <= 20; tie-corrected normal approximation (no
    continuity correction) above.
    """
    d = as_float_array(diffs, "diffs", min_len=1)
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise ValueError("degenerate input: all differences are zero")
    r = _ranks(np.abs(d))
    w_plus = float(r[d > 0.0].sum())
    w_minus = float(r.sum()) - w_plus
    stat = min(w_plus, w_minus)
    if n <= WILCOXON_EXACT_MAX_N:
        ranks2 = np.rint(2.0 * r).astype(np.int64)
        p = _signed_rank_exact_p(ranks2, int(round(2.0 * stat)))
        return TestResult(statistic=stat, p_value=p, method="exact")
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(d)) / 48.0
    if var <= 0.0:
        raise ValueError("degenerate input: zero variance under the null")
    z = (w_plus - mu) / math.sqrt(var)
    p = min(1.0, float(2.0 * _sps.norm.sf(abs(z))))
    return TestResult(statistic=stat, p_value=p, method="normal-approx")


def kruskal_wallis(groups) -> TestResult:
    """Kruskal-Wallis H with tie correction; p via chi-square (df = k-1)."""
    gs = [as_float_array(g, f"group {i}", min_len=1) for i, g in enumerate(groups)]
    if len(gs) < 2:
        raise ValueError("need at least 2 groups")
    pooled = np.concatenate(gs)
    if np.all(pooled == pooled[0]):
        raise ValueError("degenerate input: all values identical")
    n_total = pooled.size
    r = _ranks(pooled)
    h = 0.0
    offset = 0
    for g in gs:
        ri = r[offset:offset + g.size]
        h += ri.sum() ** 2 / g.size
        offset += g.size
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)
    correction = 1.0 - _tie_term(pooled) / (n_total**3 - n_total)
    h /= correction
    p = min(1.0, float(_sps.chi2.sf(h, df=len(gs) - 1)))
    return TestResult(statistic=float(h), p_value=p, method="chi2-approx")


def _mwu_exact_p(ranks: np.ndarray, n1: int, u1_obs: float) -> float:
    """Exact two-sided p via subset-count convolution over doubled ranks.

    Counts, for every achievable rank sum, the number of size-``n1``
    subsets of the pooled ranks attaining it — the full enumeration of
    group assignments, valid with ties.
    """
    ranks2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(ranks2.sum())
    # counts[c, s]: subsets of size c with doubled-rank sum s
    counts = np.zeros((n1 + 1, total + 1), dtype=float)
    counts[0, 0] = 1.0
    for r in ranks2:
        r = int(r)
        # descending subset size keeps each pooled value single-use
        for c in range(n1, 0, -1):
            counts[c, r:] += counts[c - 1, : total + 1 - r]
    dist = counts[n1]
    n_subsets = dist.sum()
    # R1 = s/2, U1 = R1 - n1(n1+1)/2; compare on the doubled scale
    u2 = np.arange(total + 1) - n1 * (n1 + 1)
    u2_obs = int(round(2.0 * u1_obs))
    p_le = dist[u2 <= u2_obs].sum() / n_subsets
    p_ge = dist[u2 >= u2_obs].sum() / n_subsets
    return min(1.0, 2.0 * min(p_le, p_ge))


def mann_whitney_u(x, y) -> TestResult:
    """Two-sided Mann-Whitney U test (statistic = min(U1, U2)).

    Exact enumeration when min(n1, n2) <= 10, otherwise tie-corrected
    normal approximation (no continuity correction).
    """
    x = as_float_array(x, "x", min_len=1)
    y = as_float_array(y, "y", min_len=1)
    n1, n2 = x.size, y.size
    pooled = np.concatenate([x, y])
    r = _ranks(pooled)
    r1 = float(r[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1
    stat = min(u1, u2)
    if min(n1, n2) <= MWU_EXACT_MAX_MIN_N:
        p = _mwu_exact_p(r, n1, u1)
        return TestResult(statistic=stat, p_value=p, method="exact")
    n_total = n1 + n2
    mu = n1 * n2 / 2.0
    var = (n1 * n2 / 12.0) * (n_total + 1 - _tie_term(pooled) / (n_total * (n_total - 1)))
    if var <= 0.0:
        raise ValueError("degenerate input: zero variance under the null")
    z = (u1 - mu) / math.sqrt(var)
    p = min(1.0, float(2.0 * _sps.norm.sf(abs(z))))
    return TestResult(statistic=stat, p_value=p, method="normal-approx")


def mann_whitney_bonferroni(groups) -> list[TestResult]:
    """All pairwise Mann-Whitney tests, Bonferroni-corrected.

    Results come in pair order (0,1), (0,2), ..., each labeled
    ``"i-j"``; p-values are multiplied by the number of pairs and capped
    at 1.
    """
    gs = list(groups)
    if len(gs) < 2:
        raise ValueError("need at least 2 groups")
    pairs = list(itertools.combinations(range(len(gs)), 2))
    out = []
    for i, j in pairs:
        res = mann_whitney_u(gs[i], gs[j])
        out.append(
            TestResult(
                statistic=res.statistic,
                p_value=min(1.0, res.p_value * len(pairs)),
                method=res.method,
                label=f"{i}-{j}",
            )
        )
    return out


def bland_altman(est, meas) -> BlandAltman:
    """Agreement of paired measurements: bias and 95% limits of agreement.

    diffs = est - meas; bias = mean(diffs); LoA = bias +/- 1.96 * sd
    (sample sd, ddof=1).
    """
    est = as_float_array(est, "est", min_len=2)
    meas = as_float_array(meas, "meas", min_len=2)
    check_consistent_length(est, meas)
    diffs = est - meas
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    return BlandAltman(bias=bias, sd_diff=sd,
                       loa_lower=bias - 1.96 * sd, loa_upper=bias + 1.96 * sd)


def icc_2_1(ratings) -> float:
    """ICC(2,1): two-way random effects, absolute agreement, single rater.

    ``ratings`` is an (n_subjects, n_raters) matrix (n >= 3, raters >= 2);
    computed from the standard ANOVA mean squares.
    """
    m = np.asarray(ratings, dtype=float)
    if m.ndim != 2 or m.shape[1] < 2:
        raise ValueError("ratings must be (n_subjects, n_raters>=2)")
    n, k = m.shape
    if n < 3:
        raise ValueError("need at least 3 subjects")
    if not np.all(np.isfinite(m)):
        raise ValueError("ratings contain non-finite values")
    grand = m.mean()
    subj_means = m.mean(axis=1)
    rater_means = m.mean(axis=0)
    if np.allclose(subj_means, subj_means[0], rtol=0.0, atol=0.0):
        raise ValueError("degenerate input: zero between-subject variance")
    ss_total = float(((m - grand) ** 2).sum())
    ss_rows = k * float(((subj_means - grand) ** 2).sum())
    ss_cols = n * float(((rater_means - grand) ** 2).sum())
    ss_err = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    return float((msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n))


def bootstrap_ci(data, statistic_fn, n_resamples: int = 1000,
                 rng: np.random.Generator | None = None,
                 confidence: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap CI for ``statistic_fn`` over 1-D data.

    Resamples with replacement; deterministic for a given generator.
    """
    data = np.asarray(data)
    n = data.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    if rng is None:
        raise ValueError("rng is required for reproducible resampling")
    idx = rng.integers(0, n, size=(n_resamples, n))
    vals = np.array([float(statistic_fn(data[row])) for row in idx])
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def cohens_kappa(labels_true, labels_pred) -> float:
    """Cohen's kappa; defined as 1 when both agreement terms are perfect."""
    t = list(labels_true)
    p = list(labels_pred)
    if len(t) != len(p):
        raise ValueError("label sequences must have equal length")
    if not t:
        raise ValueError("need at least one label")
    n = len(t)
    alphabet = sorted(set(t) | set(p), key=str)
    index = {a: i for i, a in enumerate(alphabet)}
    confusion = np.zeros((len(alphabet), len(alphabet)), dtype=float)
    for a, b in zip(t, p):
        confusion[index[a], index[b]] += 1.0
    p_o = float(np.trace(confusion)) / n
    p_e = float((confusion.sum(axis=1) * confusion.sum(axis=0)).sum()) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def ols_fit(x, y) -> OlsFit:
    """Ordinary least squares line with slope t-test and adjusted R^2."""
    x = as_float_array(x, "x", min_len=3)
    y = as_float_array(y, "y", min_len=3)
    n = check_consistent_length(x, y)
    xc = x - x.mean()
    sxx = float((xc**2).sum())
    if sxx == 0.0:
        raise ValueError("zero x-variance")
    slope = float((xc * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    sse = float((resid**2).sum())
    sst = float(((y - y.mean()) ** 2).sum())
    df = n - 2
    s2 = sse / df
    se_slope = math.sqrt(s2 / sxx)
    se_intercept = math.sqrt(s2 * (1.0 / n + x.mean() ** 2 / sxx))
    if se_slope == 0.0:
        p_slope = 1.0 if slope == 0.0 else 0.0
    else:
        p_slope = float(2.0 * _sps.t.sf(abs(slope / se_slope), df=df))
    if sst == 0.0:
        r2 = 1.0
    else:
        r2 = 1.0 - sse / sst
    r2_adj = 1.0 - (1.0 - r2) * (n - 1) / df
    return OlsFit(intercept=intercept, slope=slope, p_slope=min(1.0, p_slope),
                  r2_adj=r2_adj, se_slope=se_slope, se_intercept=se_intercept, n=n)


def deming_fit(x, y, variance_ratio: float = 1.0) -> tuple[float, float]:
    """Errors-in-variables line (intercept, slope).

    ``variance_ratio`` is the y-error to x-error variance ratio
    (lambda = sigma_y^2 / sigma_x^2); 1 treats both sides symmetrically,
    so swapping x and y inverts the slope.
    """
    x = as_float_array(x, "x", min_len=3)
    y = as_float_array(y, "y", min_len=3)
    check_consistent_length(x, y)
    if variance_ratio <= 0.0 or not math.isfinite(variance_ratio):
        raise ValueError("variance_ratio must be finite and > 0")
    lam = variance_ratio
    sxx = float(np.var(x, ddof=1))
    syy = float(np.var(y, ddof=1))
    sxy = float(np.cov(x, y, ddof=1)[0, 1])
    if sxy == 0.0:
        raise ValueError("degenerate covariance: x and y are uncorrelated")
    slope = (syy - lam * sxx + math.sqrt((syy - lam * sxx) ** 2 + 4.0 * lam * sxy**2)) / (
        2.0 * sxy
    )
    intercept = float(y.mean() - slope * x.mean())
    return intercept, float(slope)
