import numpy as np
import pytest
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist

from cfeval import stattests as st
from cfeval.errors import DataError, DegenerateInputError
from cfeval.rng import stream


def test_ks_identical_multisets():
    a = [1.0, 2.0, 2.0, 5.0]
    r = st.ks_test(a, list(reversed(a)), n_perm=200)
    assert r.statistic == 0.0
    assert r.p_value == 1.0


def test_ks_disjoint_supports():
    r = st.ks_test(np.zeros(100), np.ones(100), n_perm=1000)
    assert r.statistic == 1.0
    assert r.p_value == pytest.approx(1 / 1001)


def test_ks_matches_naive_recomputation():
    gen = stream("ksnaive")
    a = np.round(gen.normal(size=12), 1)  # rounded -> ties exercised
    b = np.round(gen.normal(size=9), 1)

    def naive_d(a, b):
        points = np.unique(np.concatenate([a, b]))
        fa = np.searchsorted(np.sort(a), points, side="right") / len(a)
        fb = np.searchsorted(np.sort(b), points, side="right") / len(b)
        return np.max(np.abs(fa - fb))

    r = st.ks_test(a, b, n_perm=50)
    assert r.statistic == pytest.approx(naive_d(a, b), abs=1e-12)


def test_ks_null_is_roughly_uniform():
    gen = stream("ksnull")
    pvals = [st.ks_test(gen.normal(size=60), gen.normal(size=60), n_perm=400,
                        seed=("ks", i)).p_value for i in range(40)]
    assert 0.3 <= np.mean(pvals) <= 0.7


def test_es_separates_bernoullis():
    gen = stream("esbern")
    a = (gen.random(200) < 0.1).astype(float)
    b = (gen.random(200) < 0.9).astype(float)
    assert st.es_test(a, b).p_value <= 0.001


def test_es_degenerate_input():
    with pytest.raises(DegenerateInputError):
        st.es_test(np.ones(30), np.ones(30))


def test_es_is_asymptotic():
    gen = stream("esasym")
    r = st.es_test(gen.normal(size=100), gen.normal(size=100))
    assert r.n_permutations == 0


def test_fr_hand_computed_mst():
    # pooled points 0, 1 (sample a) and 10, 11 (sample b) on a line:
    # MST edges (0-1), (1-10), (10-11) -> exactly one cross edge
    pool = np.array([[0.0], [1.0], [10.0], [11.0]])
    mst = minimum_spanning_tree(cdist(pool, pool)).tocoo()
    labels = np.array([True, True, False, False])
    cross = int(np.sum(labels[mst.row] != labels[mst.col]))
    assert mst.nnz == 3
    assert cross == 1


def test_fr_identical_samples_pass():
    gen = stream("frsame")
    a = gen.normal(size=(40, 2))
    r = st.fr_test(a, a.copy(), n_perm=400)
    assert r.p_value >= 0.5


def test_fr_jitter_seed_invariance_when_separated():
    gen = stream("frsep")
    a = gen.normal(size=(20, 2))
    b = gen.normal(size=(20, 2)) + 50.0
    s1 = st.fr_test(a, b, n_perm=50, seed=1).statistic
    s2 = st.fr_test(a, b, n_perm=50, seed=2).statistic
    assert s1 == s2 == 1.0  # clusters joined by a single bridge edge


def test_fr_needs_five_points():
    with pytest.raises(DataError):
        st.fr_test(np.zeros((2, 1)), np.ones((8, 1)))


def test_knn_separated_clusters():
    gen = stream("knnsep")
    a = gen.normal(size=(50, 2))
    b = gen.normal(size=(50, 2)) + 100.0
    r = st.knn_test(a, b, n_perm=500)
    assert r.statistic > 0.99
    assert r.p_value == pytest.approx(1 / 501)


def test_knn_coin_flip_labels_near_null_mean():
    gen = stream("knncoin")
    cloud = gen.normal(size=(120, 2))
    flip = gen.random(120) < 0.5
    r = st.knn_test(cloud[flip], cloud[~flip], n_perm=300)
    n = len(cloud)
    assert abs(r.statistic - (n / 2 - 1) / (n - 1)) < 0.15
    assert r.p_value > 0.01


def test_knn_k_too_large():
    with pytest.raises(DataError):
        st.knn_test(np.zeros((3, 1)), np.ones((3, 1)), k=6)


def test_energy_identity_and_closed_form():
    gen = stream("energyid")
    a = gen.normal(size=(30, 2))
    assert st.energy_test(a, a.copy(), n_perm=100).statistic == pytest.approx(0.0)

    a = np.tile([0.0, 0.0], (50, 1))
    b = np.tile([3.0, 4.0], (50, 1))
    r = st.energy_test(a, b, n_perm=100)
    assert r.statistic == pytest.approx(10.0)
    assert r.p_value == pytest.approx(1 / 101)


def test_energy_perm_stats_match_naive():
    gen = stream("energynaive")
    a = gen.normal(size=(9, 2))
    b = gen.normal(size=(7, 2)) + 0.3

    def naive(a, b):
        dab = cdist(a, b).mean()
        daa = cdist(a, a).mean()
        dbb = cdist(b, b).mean()
        return 2 * dab - daa - dbb

    r = st.energy_test(a, b, n_perm=50)
    assert r.statistic == pytest.approx(naive(a, b), abs=1e-10)


def test_wasserstein_identity():
    a = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    r = st.wasserstein_perm_test(a, a.copy(), order=1, n_perm=100)
    assert r.statistic == 0.0
    assert r.p_value == 1.0


@pytest.mark.parametrize("order", [1, 2])
def test_wasserstein_sorted_formula_1d(order):
    r = st.wasserstein_perm_test([1.0, 2.0, 3.0], [2.0, 3.0, 4.0], order=order,
                                 n_perm=50)
    assert r.statistic == pytest.approx(1.0)


def test_wasserstein_1d_fast_path_matches_assignment():
    gen = stream("wsagree")
    a = gen.normal(size=20)
    b = gen.normal(size=20) + 0.5
    fast = st._assignment_distance(a[:, None], b[:, None], 1)
    costs = cdist(a[:, None], b[:, None])
    from scipy.optimize import linear_sum_assignment
    rows, cols = linear_sum_assignment(costs)
    assert fast == pytest.approx(costs[rows, cols].sum() / 20, abs=1e-12)


def test_wasserstein_subsamples_to_cap():
    gen = stream("wscap")
    a = gen.normal(size=(40, 2))
    b = gen.normal(size=(70, 2))
    r = st.wasserstein_perm_test(a, b, order=1, n_perm=20, cap=16)
    assert r.n_permutations == 20
    assert r.p_value > 0.0


def make_pairs(gen, n, p=0.5, flip=False):
    t = (gen.random(n) < p).astype(float)
    y = gen.normal(size=n) + 0.5 * t
    if flip:
        t = 1.0 - t
    return np.column_stack([t, y])


def test_realism_suite_identity_passes_all_rows():
    gen = stream("suiteid")
    real = make_pairs(gen, 300)
    report = st.realism_suite(real, real.copy(), seed=0, n_perm=300)
    assert [r.name for r in report.rows] == list(st.SUITE_ROWS)
    assert all(r.p_value >= 0.5 for r in report.rows)
    assert all(report.passes().values())


def test_realism_suite_detects_flipped_treatment():
    gen = stream("suiteflip")
    t = (gen.random(400) < 0.85).astype(float)
    y = gen.normal(size=400)
    real = np.column_stack([t, y])
    flipped = np.column_stack([1.0 - t, y])
    report = st.realism_suite(real, flipped, seed=0, n_perm=500)
    by_name = {r.name: r for r in report.rows}
    assert by_name["T KS"].p_value <= 0.01
    assert by_name["T ES"].p_value <= 0.01


def test_realism_suite_csv_has_nine_rows():
    gen = stream("suitecsv")
    real = make_pairs(gen, 120)
    other = make_pairs(stream("suitecsv2"), 120)
    report = st.realism_suite(real, other, seed=3, n_perm=100)
    lines = report.to_csv().strip().split("\n")
    assert len(lines) == 10
    assert lines[0] == "test,statistic,p_value,n_permutations,pass"
    assert lines[1].startswith("T KS,")


def test_permutation_pvalues_in_valid_range():
    gen = stream("prange")
    for i in range(5):
        a = gen.normal(size=30)
        b = gen.normal(size=30) + i
        for fn in (st.ks_test, st.energy_test,
                   lambda x, y, n_perm, seed: st.fr_test(x, y, n_perm, seed)):
            r = fn(a, b, n_perm=100, seed=i)
            assert 1 / 101 <= r.p_value <= 1.0
