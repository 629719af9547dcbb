"""DBSCAN over the reference scan and the cluster-consistency loss."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig
from .geometry import KdTree, PointCloud

NOISE = -1


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.5
    min_points: int = 4

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidConfig(f"DBSCAN eps must be positive, got {self.eps}")
        if self.min_points < 1:
            raise InvalidConfig(f"DBSCAN min_points must be >= 1, got {self.min_points}")


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_id: np.ndarray
    num_clusters: int

    @property
    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.cluster_id, kind="stable")
        ids = self.cluster_id[order]
        cuts = np.searchsorted(ids, np.arange(self.num_clusters + 1))
        return [order[cuts[c]:cuts[c + 1]] for c in range(self.num_clusters)]

    @property
    def non_noise(self) -> np.ndarray:
        return self.cluster_id != NOISE

    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_id[self.non_noise], minlength=self.num_clusters)


def dbscan_from_neighborhoods(neighborhoods, min_points: int) -> ClusterAssignment:
    """Region growing over precomputed eps-neighborhoods (self included).

    Seeds are visited in ascending index order and expanded breadth-first, so
    a border point belongs to the first cluster that reaches it.
    """
    n = len(neighborhoods)
    labels = np.full(n, NOISE, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    core = np.array([len(nb) >= min_points for nb in neighborhoods], dtype=bool)
    cluster = 0
    for seed in range(n):
        if visited[seed] or not core[seed]:
            continue
        visited[seed] = True
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j in neighborhoods[i]:
                if labels[j] == NOISE:
                    labels[j] = cluster
                if core[j] and not visited[j]:
                    visited[j] = True
                    queue.append(j)
        cluster += 1
    return ClusterAssignment(labels, cluster)


def dbscan(c: PointCloud, params: DbscanParams = DbscanParams()) -> ClusterAssignment:
    if len(c) == 0:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), 0)
    tree = KdTree(c.points)
    return dbscan_from_neighborhoods(tree.radius_neighbors_all(params.eps), params.min_points)


def cluster_means(flows: np.ndarray, a: ClusterAssignment) -> np.ndarray:
    """(num_clusters, 3) arithmetic mean of member flows; noise ignored."""
    flows = np.asarray(flows, dtype=np.float64)
    if len(flows) != len(a.cluster_id):
        raise InvalidConfig("flows and cluster assignment differ in length")
    keep = a.non_noise
    ids = a.cluster_id[keep]
    sizes = np.bincount(ids, minlength=a.num_clusters).astype(np.float64)
    sums = np.stack(
        [np.bincount(ids, weights=flows[keep, d], minlength=a.num_clusters) for d in range(3)],
        axis=1,
    )
    return sums / np.maximum(sizes, 1.0)[:, None]


def cluster_loss_and_grad(flows: np.ndarray, a: ClusterAssignment):
    """Mean L2 deviation of each clustered point's flow from its cluster mean.

    The gradient differentiates through the mean:
    ``g_i = (u_i - mean_{j in C(i)} u_j) / N`` with ``u`` the unit residuals
    (zero for zero residuals). Noise points get zero loss and gradient and
    are left out of ``N``.
    """
    flows = np.asarray(flows, dtype=np.float64)
    grad = np.zeros_like(flows)
    keep = a.non_noise
    n = int(keep.sum())
    if n == 0:
        return 0.0, grad
    ids = a.cluster_id[keep]
    resid = flows[keep] - cluster_means(flows, a)[ids]
    norm = np.linalg.norm(resid, axis=1)
    unit = np.divide(resid, norm[:, None], out=np.zeros_like(resid), where=norm[:, None] > 0)
    mean_unit = cluster_means(_scatter_rows(unit, keep, len(flows)), a)
    grad[keep] = (unit - mean_unit[ids]) / n
    return float(norm.sum() / n), grad


def _scatter_rows(rows: np.ndarray, keep: np.ndarray, n: int) -> np.ndarray:
    full = np.zeros((n, rows.shape[1]))
    full[keep] = rows
    return full
