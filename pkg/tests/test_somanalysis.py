import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecosom.features import FeatureVector, FeatureWindow, Scaler
from ecosom.somanalysis import (Cluster, ClusterMap, ClusteringError, classify_windows, count_clusters,
                                driver_distribution, find_threshold, hit_histogram, label_clusters,
                                threshold_candidates, threshold_clusters, u_matrix)
from ecosom.somcore import SomModel, hex_neighbors

IDENTITY = Scaler((0.0, 0.0, 0.0, 0.0), (255 / 256,) * 4)


def plateau_model(rows=4, cols=6):
    # left half near 0.1, right half near 0.8: a single ridge between columns 2 and 3
    w = np.zeros((rows * cols, 4))
    for i in range(rows * cols):
        w[i] = 0.1 if i % cols < cols // 2 else 0.8
    return SomModel(rows, cols, w, IDENTITY)


def win(vec, fuel, driver="d"):
    return FeatureWindow(driver, 0, 8.0, FeatureVector(*vec), 80.0, fuel)


def is_connected(members, nbrs):
    members = set(members)
    start = next(iter(members))
    seen, q = {start}, deque([start])
    while q:
        i = q.popleft()
        for j in nbrs[i]:
            if j in members and j not in seen:
                seen.add(j)
                q.append(j)
    return seen == members


def test_u_matrix_identical_weights():
    um = u_matrix(SomModel(3, 3, np.full((9, 4), 0.3)))
    assert np.all(um.values == 0)


def test_u_matrix_pair():
    um = u_matrix(SomModel(1, 2, np.array([[0.0, 0.0, 0.0, 0.0], [0.3, 0.4, 0.0, 0.0]])))
    np.testing.assert_allclose(um.values, [0.5, 0.5])
    assert um.edge(0, 1) == pytest.approx(0.5)


def test_u_matrix_random_matches_direct():
    rng = np.random.default_rng(0)
    m = SomModel(5, 4, rng.uniform(size=(20, 4)))
    um = u_matrix(m)
    nbrs = hex_neighbors(5, 4)
    for i in range(20):
        direct = np.mean([np.sqrt(((m.weights[i] - m.weights[j]) ** 2).sum()) for j in nbrs[i]])
        assert um.values[i] == pytest.approx(direct, rel=1e-12)
    finite = ~np.isnan(um.edges)
    np.testing.assert_array_equal(finite, finite.T)
    np.testing.assert_array_equal(um.edges[finite], um.edges.T[finite])
    assert np.all(um.values >= 0)


def test_hit_histogram():
    rng = np.random.default_rng(1)
    m = SomModel(3, 3, rng.uniform(size=(9, 4)))
    np.testing.assert_array_equal(hit_histogram(m, m.weights), np.ones(9))
    data = rng.uniform(size=(300, 4))
    h = hit_histogram(m, data)
    assert h.sum() == 300 and np.all(h >= 0)
    with pytest.raises(ValueError):
        hit_histogram(m, np.empty((0, 4)))


def test_threshold_uniform_one_cluster():
    m = SomModel(3, 3, np.full((9, 4), 0.3))
    cmap = threshold_clusters(m, 1.0)
    assert cmap.n_clusters == 1
    assert cmap.assignment == [0] * 9


def test_threshold_two_plateaus():
    m = plateau_model()
    cmap = threshold_clusters(m, 0.5)
    assert cmap.n_clusters == 2
    a = np.array(cmap.assignment).reshape(4, 6)
    assert np.all(a[:, :3] == a[0, 0]) and np.all(a[:, 3:] == a[0, 5]) and a[0, 0] != a[0, 5]


def test_threshold_invalid():
    m = plateau_model()
    for frac in (0.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            threshold_clusters(m, frac)
    rng = np.random.default_rng(2)
    noisy = SomModel(3, 3, rng.uniform(size=(9, 4)))
    with pytest.raises(ClusteringError):
        threshold_clusters(noisy, 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**20))
def test_threshold_partition_properties(seed):
    rng = np.random.default_rng(seed)
    m = SomModel(6, 6, rng.uniform(size=(36, 4)))
    um = u_matrix(m)
    nbrs = hex_neighbors(6, 6)
    for frac in np.linspace(1.0, um.values.min() / um.values.max() + 1e-9, 12):
        cmap = threshold_clusters(m, float(frac), um)
        assert all(a >= 0 for a in cmap.assignment)
        for c in cmap.clusters:
            assert c.members and is_connected(c.members, nbrs)


@pytest.mark.parametrize("k", [3, 5])
def test_count_monotone_down_to_scheme_threshold(k, three_blob_fit, five_blob_fit):
    model, cmap = three_blob_fit if k == 3 else five_blob_fit
    um = u_matrix(model)
    fracs = [f for f in threshold_candidates(um) if f >= cmap.threshold]
    counts = [count_clusters(um, f) for f in fracs]
    assert fracs == sorted(fracs, reverse=True)
    assert counts[0] == 1 and counts[-1] == k
    assert counts == sorted(counts)


def test_find_threshold_exact_count(five_blob_fit):
    model, _ = five_blob_fit
    for k in (1, 2, 3, 5):
        frac = find_threshold(model, k)
        assert threshold_clusters(model, frac).n_clusters == k
    with pytest.raises(ClusteringError):
        find_threshold(model, 200)


def _cmap_for(assignment):
    ids = sorted(set(assignment))
    return ClusterMap(list(assignment), [Cluster(i, [j for j, a in enumerate(assignment) if a == i]) for i in ids], 0.5)


def _three_cluster_setup(avgs, perm=(0, 1, 2)):
    # 1x3 grid, neuron i at (i/4, ...), windows placed on each neuron
    w = np.array([[0.1] * 4, [0.4] * 4, [0.7] * 4])
    m = SomModel(1, 3, w, IDENTITY)
    cmap = _cmap_for([perm[0], perm[1], perm[2]])
    wins = []
    for i, avg in enumerate(avgs):
        for d in (-0.01, 0.0, 0.01):
            wins.append(win(w[i], avg + d))
    return m, cmap, wins


def test_label_three_scheme():
    m, cmap, wins = _three_cluster_setup([5.15, 2.76, 3.04])
    out = label_clusters(cmap, wins, m)
    assert out.labels == ("Very low", "Low", "Medium-High")
    assert [round(c.avg, 2) for c in out.clusters] == [2.76, 3.04, 5.15]
    assert out.label_of_neuron(0) == "Medium-High"
    assert out.label_of_neuron(1) == "Very low"
    c = out.cluster(0)
    assert c.var == pytest.approx(np.var([2.75, 2.76, 2.77]))
    assert c.max == pytest.approx(2.77) and c.n_windows == 3


def test_label_five_scheme():
    avgs = [2.75, 3.04, 4.44, 5.42, 7.81]
    w = np.linspace(0.05, 0.9, 5)[:, None] * np.ones((5, 4))
    m = SomModel(1, 5, w, IDENTITY)
    order = [3, 0, 4, 2, 1]
    wins = [win(w[i], avgs[order[i]]) for i in range(5)]
    out = label_clusters(_cmap_for(list(range(5))), wins, m)
    assert out.labels == ("Very low", "Low", "Medium", "High", "Very high")
    assert [c.avg for c in out.clusters] == avgs
    assert [out.label_of_neuron(i) for i in range(5)] == [out.labels[o] for o in order]


def test_label_permutation_invariant():
    results = set()
    for perm in itertools.permutations(range(3)):
        m, cmap, wins = _three_cluster_setup([3.04, 5.15, 2.76], perm)
        out = label_clusters(cmap, wins, m)
        results.add(tuple((out.label_of_neuron(i), round(out.cluster(out.assignment[i]).avg, 6)) for i in range(3)))
    assert len(results) == 1


def test_label_empty_cluster_error():
    m, cmap, wins = _three_cluster_setup([3.0, 4.0, 5.0])
    with pytest.raises(ClusteringError, match="no windows"):
        label_clusters(cmap, wins[:6], m)


def test_label_generic_for_other_counts():
    w = np.linspace(0.05, 0.9, 4)[:, None] * np.ones((4, 4))
    m = SomModel(1, 4, w, IDENTITY)
    out = label_clusters(_cmap_for([0, 1, 2, 3]), [win(w[i], 3.0 + i) for i in range(4)], m)
    assert out.labels == ("Cluster 1", "Cluster 2", "Cluster 3", "Cluster 4")


def test_driver_distribution():
    m, cmap, wins = _three_cluster_setup([2.0, 3.0, 4.0])
    out = label_clusters(cmap, wins, m)
    one = [win(m.weights[0], 0.0)] * 4
    assert driver_distribution(out, m, one) == {"Very low": 100.0, "Low": 0.0, "Medium-High": 0.0}
    half = [win(m.weights[0], 0.0)] * 5 + [win(m.weights[2], 0.0)] * 5
    assert driver_distribution(out, m, half) == {"Very low": 50.0, "Low": 0.0, "Medium-High": 50.0}
    with pytest.raises(ValueError):
        driver_distribution(out, m, [])


def test_distribution_sums_to_100(five_blob_set, five_blob_fit):
    model, cmap = five_blob_fit
    dist = driver_distribution(cmap, model, five_blob_set.windows[::7])
    assert sum(dist.values()) == pytest.approx(100.0)
    assert all(v >= 0 for v in dist.values())


def test_five_refines_three(five_blob_set, five_blob_fit):
    from ecosom.somanalysis import cluster_scheme
    model, c5 = five_blob_fit
    c3 = cluster_scheme(model, five_blob_set.windows, 3)
    assert c3.n_clusters == 3
    assert c5.threshold <= c3.threshold
    for i in range(2):
        a, b = set(c5.clusters[i].members), set(c3.clusters[i].members)
        assert len(a & b) / len(a | b) >= 0.8
    d5 = driver_distribution(c5, model, five_blob_set.windows)
    d3 = driver_distribution(c3, model, five_blob_set.windows)
    assert d3["Very low"] == pytest.approx(d5["Very low"])
    assert d3["Low"] == pytest.approx(d5["Low"])
    assert d3["Medium-High"] == pytest.approx(d5["Medium"] + d5["High"] + d5["Very high"])


def test_clusters_connected_on_trained_map(five_blob_fit):
    model, cmap = five_blob_fit
    nbrs = hex_neighbors(model.rows, model.cols)
    for c in cmap.clusters:
        assert is_connected(c.members, nbrs)
    avgs = [c.avg for c in cmap.clusters]
    assert avgs == sorted(avgs) and len(set(avgs)) == len(avgs)


def test_classify_windows_labels(three_blob_set, three_blob_fit):
    model, cmap = three_blob_fit
    labs = classify_windows(cmap, model, three_blob_set.windows[:5])
    assert labs == ["Very low"] * 5
    assert classify_windows(cmap, model, []) == []


def test_cluster_map_round_trip(tmp_path, three_blob_fit):
    _, cmap = three_blob_fit
    path = tmp_path / "c.json"
    cmap.save(path)
    back = ClusterMap.load(path)
    assert back.assignment == cmap.assignment
    assert back.labels == cmap.labels
    assert [c.members for c in back.clusters] == [c.members for c in cmap.clusters]
    assert [c.avg for c in back.clusters] == [c.avg for c in cmap.clusters]
