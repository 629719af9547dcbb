import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxflow.clustering import (
    ClusterAssignment, DbscanParams, cluster_loss_and_grad, cluster_means, dbscan,
)
from voxflow.errors import InvalidConfig
from voxflow.geometry import PointCloud

from oracles import canonical, central_diff, reference_dbscan, rel_err


def blobs(seed, k=4, n=60, spread=0.4):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 6, size=(k, 3))
    return np.concatenate([c + rng.normal(scale=spread, size=(n, 3)) for c in centers])


def test_two_blobs():
    g = np.stack(np.meshgrid([0, 0.1], [0, 0.1, 0.2, 0.3, 0.4], [0], indexing="ij"), -1).reshape(-1, 3)
    a = dbscan(PointCloud(np.vstack([g, g + [5, 0, 0]])), DbscanParams(0.5, 4))
    assert a.num_clusters == 2 and a.non_noise.all()
    assert len(set(a.cluster_id[:10])) == 1 and len(set(a.cluster_id[10:])) == 1


def test_sparse_line_is_noise():
    a = dbscan(PointCloud([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]]), DbscanParams(0.5, 4))
    assert a.num_clusters == 0 and np.all(a.cluster_id == -1)


def test_empty_and_params():
    assert dbscan(PointCloud(np.zeros((0, 3)))).num_clusters == 0
    with pytest.raises(InvalidConfig):
        DbscanParams(0.0, 4)
    with pytest.raises(InvalidConfig):
        DbscanParams(0.5, 0)
    assert DbscanParams() == DbscanParams(0.5, 4)


@pytest.mark.parametrize("seed", range(5))
def test_matches_reference(seed):
    pts = blobs(seed, n=75)
    a = dbscan(PointCloud(pts), DbscanParams(0.5, 4))
    np.testing.assert_array_equal(canonical(a.cluster_id), canonical(reference_dbscan(pts, 0.5, 4)))


@pytest.mark.parametrize("seed", range(3))
def test_permutation_invariance(seed):
    pts = blobs(seed, spread=0.2)
    perm = np.random.default_rng(seed).permutation(len(pts))
    a = dbscan(PointCloud(pts))
    b = dbscan(PointCloud(pts[perm]))
    core_a = np.array([len(nb) for nb in _nbrs(pts)]) >= 4
    # same partition of core points; border ties may move between clusters
    la, lb = a.cluster_id, np.empty_like(a.cluster_id)
    lb[perm] = b.cluster_id
    pairs = {(x, y) for x, y in zip(la[core_a], lb[core_a])}
    assert len(pairs) == len({x for x, _ in pairs}) == len({y for _, y in pairs})
    np.testing.assert_array_equal(la == -1, lb == -1)


def _nbrs(pts):
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    return [np.flatnonzero(r <= 0.5) for r in d]


def test_members_partition_and_sizes():
    a = dbscan(PointCloud(blobs(7)))
    members = a.members
    joined = np.sort(np.concatenate(members))
    np.testing.assert_array_equal(joined, np.flatnonzero(a.non_noise))
    np.testing.assert_array_equal(a.sizes(), [len(m) for m in members])
    assert np.all(a.sizes() >= 1)


def test_cluster_means_examples():
    a = ClusterAssignment(np.array([0, 0, -1]), 1)
    np.testing.assert_array_equal(cluster_means(np.array([[1, 0, 0], [0, 1, 0], [9, 9, 9]]), a),
                                  [[0.5, 0.5, 0]])
    b = ClusterAssignment(np.array([0, 0, 0]), 1)
    np.testing.assert_allclose(cluster_means(np.tile([0.2, 0.3, -1], (3, 1)), b), [[0.2, 0.3, -1]])


def test_cluster_means_oracle():
    rng = np.random.default_rng(8)
    ids = rng.integers(-1, 5, 200)
    ids[:5] = np.arange(5)
    flows = rng.normal(size=(200, 3))
    got = cluster_means(flows, ClusterAssignment(ids, 5))
    for c in range(5):
        acc = np.zeros(3)
        count = 0
        for i in range(200):
            if ids[i] == c:
                acc += flows[i]
                count += 1
        np.testing.assert_allclose(got[c], acc / count, atol=1e-12)


def test_cluster_loss_examples():
    a = ClusterAssignment(np.array([0, 0]), 1)
    loss, grad = cluster_loss_and_grad(np.array([[1.0, 0, 0], [0, 0, 0]]), a)
    assert loss == pytest.approx(0.5)
    loss, grad = cluster_loss_and_grad(np.tile([1.0, 2, 3], (2, 1)), a)
    assert loss == 0.0 and not grad.any()


def test_cluster_loss_noise_excluded():
    a = ClusterAssignment(np.array([0, 0, -1]), 1)
    loss, grad = cluster_loss_and_grad(np.array([[1.0, 0, 0], [0, 0, 0], [50, 50, 50]]), a)
    assert loss == pytest.approx(0.5)
    assert not grad[2].any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cluster_grad_fd_and_zero_sum(seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(-1, 4, 40)
    ids[:4] = np.arange(4)
    a = ClusterAssignment(ids, 4)
    flows = rng.normal(size=(40, 3))
    loss, grad = cluster_loss_and_grad(flows, a)
    fd = central_diff(lambda f: cluster_loss_and_grad(f, a)[0], flows)
    assert np.all(rel_err(grad, fd) < 1e-5)
    for c in range(4):
        assert np.all(np.abs(grad[ids == c].sum(axis=0)) < 1e-10)


def test_cluster_loss_zero_iff_identical():
    rng = np.random.default_rng(9)
    a = ClusterAssignment(np.array([0, 0, 1, 1, 1]), 2)
    same = np.array([[1, 1, 1], [1, 1, 1], [2, 0, 0], [2, 0, 0], [2, 0, 0]], float)
    assert cluster_loss_and_grad(same, a)[0] == 0.0
    assert cluster_loss_and_grad(same + rng.normal(scale=1e-3, size=same.shape), a)[0] > 0.0
