"""Two-sample realism tests comparing generated (T, Y) pairs against real ones.

Univariate: Kolmogorov-Smirnov (permutation null: binary/discrete data breaks
the classic asymptotics) and Epps-Singleton (asymptotic chi-square null).
Multivariate: Friedman-Rafsky (minimum spanning tree), k-nearest-neighbor,
energy distance, and exact-assignment Wasserstein-1/2, all with permutation
nulls. Every permutation p-value uses the +1 correction
p = (1 + #{stat_perm at least as extreme}) / (1 + n_perm).

MST and kNN are ill-defined under the massive ties that binary variables
produce, so those two tests add deterministic seeded U(0, 1e-6) jitter per
coordinate to the pooled points before building their graphs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sp_stats
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DataError, DegenerateInputError
from .rng import stream

JITTER = 1e-6
ASSIGNMENT_CAP = 512
SUITE_ROWS = ("T KS", "T ES", "Y KS", "Y ES", "(T,Y) Wass1", "(T,Y) Wass2",
              "(T,Y) FR", "(T,Y) kNN", "(T,Y) Energy")
PASS_LEVEL = 0.1


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    n_permutations: int  # 0 when the p-value is asymptotic

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


@dataclass
class TestSuiteReport:
    rows: list[TestResult]

    def passes(self, level: float = PASS_LEVEL) -> dict[str, bool]:
        return {r.name: r.p_value > level for r in self.rows}

    def to_csv(self) -> str:
        lines = ["test,statistic,p_value,n_permutations,pass"]
        for r in self.rows:
            ok = "true" if r.p_value > PASS_LEVEL else "false"
            lines.append(f"{r.name},{r.statistic!r},{r.p_value!r},{r.n_permutations},{ok}")
        return "\n".join(lines) + "\n"


def _key(seed) -> tuple:
    return seed if isinstance(seed, tuple) else (seed,)


def _perm_labels(key: tuple, n_total: int, n_a: int, n_perm: int) -> np.ndarray:
    """(n_perm, n_total) boolean matrix; each row has exactly n_a True."""
    gen = stream(*key, "labels")
    order = np.argsort(gen.random((n_perm, n_total)), axis=1)
    labels = np.zeros((n_perm, n_total), dtype=bool)
    labels[np.arange(n_perm)[:, None], order[:, :n_a]] = True
    return labels


def _pvalue(observed: float, perm_stats: np.ndarray, large_is_extreme: bool) -> float:
    if large_is_extreme:
        count = int(np.sum(perm_stats >= observed))
    else:
        count = int(np.sum(perm_stats <= observed))
    return (1 + count) / (1 + len(perm_stats))


def _as_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _jittered_pool(a: np.ndarray, b: np.ndarray, key: tuple) -> np.ndarray:
    pool = np.vstack([a, b])
    gen = stream(*key, "jitter")
    return pool + gen.random(pool.shape) * JITTER


# ---------------------------------------------------------------------------
# univariate tests


def ks_test(a, b, n_perm: int = 1000, seed=0) -> TestResult:
    """Two-sample KS with a permutation null (valid for discrete data)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise DataError("ks_test needs non-empty samples")
    na, nb = len(a), len(b)
    pooled = np.concatenate([a, b])
    order = np.argsort(pooled, kind="stable")
    v = pooled[order]
    # ECDFs may only be compared at the end of each tied run
    valid = np.append(v[:-1] < v[1:], True)

    def stat(labels: np.ndarray) -> np.ndarray:
        # labels: (..., n) boolean in sorted order; True = sample a
        fa = np.cumsum(labels, axis=-1) / na
        fb = np.cumsum(~labels, axis=-1) / nb
        return np.max(np.abs(fa - fb)[..., valid], axis=-1)

    obs_labels = np.zeros(na + nb, dtype=bool)
    obs_labels[:na] = True
    observed = float(stat(obs_labels[order][None, :])[0])
    perms = stat(_perm_labels(_key(seed), na + nb, na, n_perm))
    return TestResult("ks", observed, _pvalue(observed, perms, True), n_perm)


def es_test(a, b) -> TestResult:
    """Epps-Singleton via the empirical characteristic function at
    t = (0.4, 0.8) scaled by the pooled semi-interquartile range; asymptotic
    chi-square p-value with 4 degrees of freedom (scipy backend)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) < 5 or len(b) < 5:
        raise DataError("es_test needs at least 5 points per sample")
    q25, q75 = np.percentile(np.concatenate([a, b]), [25, 75])
    if (q75 - q25) / 2.0 == 0.0:
        raise DegenerateInputError("es_test: pooled semi-interquartile range is zero")
    try:
        with warnings.catch_warnings():
            # binary data gives a rank-deficient ECF covariance; scipy falls
            # back to a pseudo-inverse, which is the intended regime here
            warnings.simplefilter("ignore", UserWarning)
            statistic, p = sp_stats.epps_singleton_2samp(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError(f"es_test: degenerate input ({exc})") from exc
    return TestResult("es", float(statistic), float(p), 0)


# ---------------------------------------------------------------------------
# multivariate tests


def fr_test(a, b, n_perm: int = 1000, seed=0) -> TestResult:
    """Friedman-Rafsky: cross-label edge count on the Euclidean MST of the
    jittered pooled points; few cross edges is evidence of difference."""
    a, b = _as_points(a), _as_points(b)
    na, nb = len(a), len(b)
    if na < 5 or nb < 5:
        raise DataError("fr_test needs at least 5 points per sample")
    key = _key(seed)
    pool = _jittered_pool(a, b, key)
    mst = minimum_spanning_tree(cdist(pool, pool)).tocoo()
    e0, e1 = mst.row, mst.col

    labels_obs = np.zeros(na + nb, dtype=bool)
    labels_obs[:na] = True
    observed = int(np.sum(labels_obs[e0] != labels_obs[e1]))
    labels = _perm_labels(key, na + nb, na, n_perm)
    perms = np.sum(labels[:, e0] != labels[:, e1], axis=1)
    return TestResult("fr", float(observed), _pvalue(observed, perms, False), n_perm)


def knn_test(a, b, k: int = 5, n_perm: int = 1000, seed=0) -> TestResult:
    """Mean fraction of each pooled point's k nearest neighbors sharing its
    label; large values indicate different distributions."""
    a, b = _as_points(a), _as_points(b)
    na, nb = len(a), len(b)
    if na + nb <= k + 1:
        raise DataError(f"knn_test needs n + m > k + 1 = {k + 1}")
    key = _key(seed)
    pool = _jittered_pool(a, b, key)
    _, idx = cKDTree(pool).query(pool, k=k + 1)
    neighbors = idx[:, 1:]  # drop self (jitter makes all points distinct)

    labels_obs = np.zeros(na + nb, dtype=bool)
    labels_obs[:na] = True
    observed = float(np.mean(labels_obs[neighbors] == labels_obs[:, None]))
    labels = _perm_labels(key, na + nb, na, n_perm)
    same = labels[:, neighbors] == labels[:, :, None]
    perms = same.mean(axis=(1, 2))
    return TestResult("knn", observed, _pvalue(observed, perms, True), n_perm)


def _energy_from_sums(s_a, s_cross, s_b, na, nb):
    return 2.0 * s_cross / (na * nb) - s_a / (na * na) - s_b / (nb * nb)


def energy_test(a, b, n_perm: int = 1000, seed=0) -> TestResult:
    """Energy statistic E = 2 mean d(a,b) - mean d(a,a') - mean d(b,b').

    Within-sample means run over all ordered pairs including the zero
    diagonal (the V-statistic convention), so identical multisets give
    exactly 0 and E is always nonnegative."""
    a, b = _as_points(a), _as_points(b)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise DataError("energy_test needs non-empty samples")
    pool = np.vstack([a, b])
    d = cdist(pool, pool)
    total = d.sum()

    def stat(labels: np.ndarray) -> np.ndarray:
        lab = labels.astype(float)
        ld = lab @ d
        s_a = np.einsum("pi,pi->p", ld, lab)
        row_a = ld.sum(axis=1)                 # sum over i in A, all j
        s_cross = row_a - s_a
        s_b = total - s_a - 2.0 * s_cross
        return _energy_from_sums(s_a, s_cross, s_b, na, nb)

    labels_obs = np.zeros(na + nb, dtype=bool)
    labels_obs[:na] = True
    observed = float(stat(labels_obs[None, :])[0])
    perms = stat(_perm_labels(_key(seed), na + nb, na, n_perm))
    return TestResult("energy", observed, _pvalue(observed, perms, True), n_perm)


def _assignment_distance(x: np.ndarray, y: np.ndarray, order: int) -> float:
    """Exact optimal-assignment Wasserstein between equal-size point sets."""
    n = len(x)
    if x.shape[1] == 1:
        cost = np.abs(np.sort(x[:, 0]) - np.sort(y[:, 0])) ** order
        return float((cost.sum() / n) ** (1.0 / order))
    costs = cdist(x, y) ** order
    rows, cols = linear_sum_assignment(costs)
    return float((costs[rows, cols].sum() / n) ** (1.0 / order))


def wasserstein_perm_test(a, b, order: int = 1, n_perm: int = 1000, seed=0,
                          cap: int = ASSIGNMENT_CAP) -> TestResult:
    """Permutation test on the exact-assignment Wasserstein distance.

    Unequal samples are seeded-subsampled to the smaller size; above ``cap``
    points per side both are subsampled to ``cap`` to keep matching exact yet
    affordable. In one dimension the assignment reduces to sorting.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    a, b = _as_points(a), _as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise DataError("wasserstein_perm_test needs non-empty samples")
    key = _key(seed)
    n = min(len(a), len(b), cap)
    if len(a) > n:
        a = a[stream(*key, "subsample_a").choice(len(a), n, replace=False)]
    if len(b) > n:
        b = b[stream(*key, "subsample_b").choice(len(b), n, replace=False)]

    observed = _assignment_distance(a, b, order)
    pool = np.vstack([a, b])
    labels = _perm_labels(key, 2 * n, n, n_perm)
    perms = np.empty(n_perm)
    for p in range(n_perm):
        perms[p] = _assignment_distance(pool[labels[p]], pool[~labels[p]], order)
    return TestResult(f"wass{order}", observed, _pvalue(observed, perms, True), n_perm)


# ---------------------------------------------------------------------------
# the nine-row realism grid


def _standardize_pairs(real: np.ndarray, gen: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pool = np.vstack([real, gen])
    mean = pool.mean(axis=0)
    std = pool.std(axis=0)
    std[std == 0.0] = 1.0
    return (real - mean) / std, (gen - mean) / std


def realism_suite(real_pairs, gen_pairs, seed=0, n_perm: int = 1000) -> TestSuiteReport:
    """Run the nine-row grid on observed vs generated (T, Y) pairs.

    Pairs are (treatment, outcome) rows. The multivariate tests receive
    jointly standardized pairs so neither coordinate's scale dominates the
    Euclidean geometry. A row passes at p > 0.1.
    """
    real = np.asarray(real_pairs, dtype=float)
    gen = np.asarray(gen_pairs, dtype=float)
    if real.ndim != 2 or real.shape[1] != 2 or gen.ndim != 2 or gen.shape[1] != 2:
        raise DataError("realism_suite expects (n, 2) arrays of (T, Y) pairs")
    if len(real) == 0 or len(gen) == 0:
        raise DataError("realism_suite needs non-empty pair lists")
    key = _key(seed)
    real_std, gen_std = _standardize_pairs(real, gen)

    def run(name, fn, *args, **kwargs):
        try:
            result = fn(*args, **kwargs)
        except DataError as exc:
            raise type(exc)(f"{name}: {exc}") from exc
        return TestResult(name, result.statistic, result.p_value, result.n_permutations)

    rows = [
        run("T KS", ks_test, real[:, 0], gen[:, 0], n_perm, (*key, "T KS")),
        run("T ES", es_test, real[:, 0], gen[:, 0]),
        run("Y KS", ks_test, real[:, 1], gen[:, 1], n_perm, (*key, "Y KS")),
        run("Y ES", es_test, real[:, 1], gen[:, 1]),
        run("(T,Y) Wass1", wasserstein_perm_test, real_std, gen_std, 1, n_perm,
            (*key, "wass1")),
        run("(T,Y) Wass2", wasserstein_perm_test, real_std, gen_std, 2, n_perm,
            (*key, "wass2")),
        run("(T,Y) FR", fr_test, real_std, gen_std, n_perm, (*key, "fr")),
        run("(T,Y) kNN", knn_test, real_std, gen_std, 5, n_perm, (*key, "knn")),
        run("(T,Y) Energy", energy_test, real_std, gen_std, n_perm, (*key, "energy")),
    ]
    assert [r.name for r in rows] == list(SUITE_ROWS)
    return TestSuiteReport(rows)
