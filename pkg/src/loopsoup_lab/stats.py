"""Decision-rule statistics used by the experiment harness.

Everything here is standard: a two-sided one-proportion z-test, a
two-sample Kolmogorov-Smirnov wrapper, chi-square goodness-of-fit with
small-expected-bucket merging, a two-sample chi-square on category
counts, an energy-distance permutation test for multivariate two-sample
equality, and a Bonferroni helper.  The experiments module owns the
thresholds; these functions just compute statistics and p-values.
"""

import math

import numpy as np
import scipy.spatial.distance
import scipy.stats


def prop_ztest(hits, n, p0):
    """Two-sided z-test of a binomial proportion against p0.

    Returns (z, p_value) with z = (hits - n*p0) / sqrt(n*p0*(1-p0)).
    """
    if n < 1:
        raise ValueError("need at least one trial")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be strictly between 0 and 1")
    se = math.sqrt(n * p0 * (1.0 - p0))
    z = (hits - n * p0) / se
    return z, math.erfc(abs(z) / math.sqrt(2.0))


def ks_two_sample(xs, ys):
    """Two-sample KS test; returns (statistic, p_value)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 0 or ys.size == 0:
        raise ValueError("both samples must be nonempty")
    res = scipy.stats.ks_2samp(xs, ys)
    return float(res.statistic), float(res.pvalue)


def merge_small_expected(observed, expected, min_expected=5.0):
    """Merge adjacent buckets left to right until every expected >= cutoff.

    A group is closed as soon as its accumulated expected count reaches
    the cutoff; a deficient trailing group is folded into its neighbour.
    Returns (observed', expected') as float arrays.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if observed.shape != expected.shape or observed.ndim != 1:
        raise ValueError("observed and expected must be 1-d and same length")
    obs_groups, exp_groups = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_groups.append(acc_o)
            exp_groups.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0.0 or acc_o > 0.0:
        if obs_groups:
            obs_groups[-1] += acc_o
            exp_groups[-1] += acc_e
        else:
            obs_groups.append(acc_o)
            exp_groups.append(acc_e)
    return np.array(obs_groups), np.array(exp_groups)


def chi_square_gof(observed, expected, min_expected=5.0):
    """Chi-square goodness of fit after small-bucket merging.

    ``expected`` is rescaled to the observed total, buckets with expected
    count below the cutoff are merged (adjacent, left to right), and the
    statistic is computed with len-1 degrees of freedom.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if np.any(expected < 0) or expected.sum() <= 0:
        raise ValueError("expected counts must be nonnegative, not all zero")
    expected = expected * (observed.sum() / expected.sum())
    observed, expected = merge_small_expected(observed, expected, min_expected)
    if len(observed) < 2:
        raise ValueError("fewer than two buckets after merging")
    stat = float(np.sum((observed - expected) ** 2 / expected))
    df = len(observed) - 1
    return stat, float(scipy.stats.chi2.sf(stat, df))


def chi_square_two_sample(counts_a, counts_b, min_total=10.0):
    """Two-sample chi-square on parallel category counts.

    Categories whose pooled count falls below ``min_total`` are merged
    (adjacent, left to right) before a 2 x k contingency test.
    Returns (statistic, p_value).
    """
    counts_a = np.asarray(counts_a, dtype=float)
    counts_b = np.asarray(counts_b, dtype=float)
    if counts_a.shape != counts_b.shape or counts_a.ndim != 1:
        raise ValueError("count vectors must be 1-d and same length")
    pooled = counts_a + counts_b
    merged_a, _ = merge_small_expected(counts_a, pooled, min_total)
    merged_b, _ = merge_small_expected(counts_b, pooled, min_total)
    table = np.vstack([merged_a, merged_b])
    if table.shape[1] < 2:
        raise ValueError("fewer than two categories after merging")
    stat, p, _, _ = scipy.stats.chi2_contingency(table)
    return float(stat), float(p)


def energy_statistic(xs, ys):
    """Energy-distance statistic 2*E|X-Y| - E|X-X'| - E|Y-Y'|.

    V-statistic convention (self-pairs included in the averages), so for
    one-dimensional samples this equals scipy's energy_distance squared.
    Samples are (m,) or (m, d) arrays.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float).T).T
    ys = np.atleast_2d(np.asarray(ys, dtype=float).T).T
    dxy = scipy.spatial.distance.cdist(xs, ys)
    dxx = scipy.spatial.distance.cdist(xs, xs)
    dyy = scipy.spatial.distance.cdist(ys, ys)
    return float(2.0 * dxy.mean() - dxx.mean() - dyy.mean())


def energy_distance_test(xs, ys, rng, n_permutations=300):
    """Permutation test of equal distribution via the energy statistic.

    The pooled pairwise-distance matrix is built once; each permutation
    needs a single matrix-vector product.  Returns (statistic, p_value)
    with p = (1 + #{permuted >= observed}) / (1 + n_permutations).
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float).T).T
    ys = np.atleast_2d(np.asarray(ys, dtype=float).T).T
    m, n = len(xs), len(ys)
    if m < 2 or n < 2:
        raise ValueError("need at least two samples per class")
    pooled = np.vstack([xs, ys])
    D = scipy.spatial.distance.cdist(pooled, pooled)
    rowsum = D.sum(axis=1)
    total = float(rowsum.sum())

    def stat_for(idx_x):
        s = np.zeros(m + n)
        s[idx_x] = 1.0
        t = D @ s
        s1 = float(s @ t)            # sum_{x,x'} |x - x'|
        sr = float(s @ rowsum)       # sum_{x, all} |x - z|
        s12 = sr - s1                # sum_{x,y} |x - y|
        s2 = total - 2.0 * sr + s1   # sum_{y,y'} |y - y'|
        return 2.0 * s12 / (m * n) - s1 / (m * m) - s2 / (n * n)

    observed = stat_for(np.arange(m))
    hits = 0
    for _ in range(n_permutations):
        perm = rng.permutation(m + n)[:m]
        if stat_for(perm) >= observed:
            hits += 1
    return observed, (1.0 + hits) / (1.0 + n_permutations)


def bonferroni_verdict(p_values, level):
    """True iff every p-value clears the Bonferroni-adjusted level."""
    p_values = list(p_values)
    if not p_values:
        raise ValueError("no p-values supplied")
    cutoff = level / len(p_values)
    return all(p >= cutoff for p in p_values)
