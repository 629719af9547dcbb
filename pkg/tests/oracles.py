"""Slow, obviously-correct reference implementations used only by tests."""

import numpy as np


def brute_dt(occupied_centers: np.ndarray, centers: np.ndarray, truncation: float) -> np.ndarray:
    """Min distance from every cell center to the occupied cell centers."""
    best = np.full(len(centers), np.inf)
    for c in occupied_centers:
        best = np.minimum(best, np.sqrt(((centers - c) ** 2).sum(axis=1)))
    return np.minimum(best, truncation)


def brute_neighbors(points: np.ndarray, r: float) -> list[np.ndarray]:
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    return [np.flatnonzero(row <= r) for row in d]


def reference_dbscan(points: np.ndarray, eps: float, min_points: int) -> np.ndarray:
    """Union-find over core points, border points to the earliest-discovered cluster.

    A cluster is discovered at its lowest-index core point, so a border point
    shared by several clusters goes to the one whose smallest core index is lowest.
    """
    n = len(points)
    nbrs = brute_neighbors(points, eps)
    core = np.array([len(nb) >= min_points for nb in nbrs], dtype=bool)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        if core[i]:
            for j in nbrs[i]:
                if core[j]:
                    a, b = find(i), find(j)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
    root_min = {}
    for i in range(n):
        if core[i]:
            r = find(i)
            root_min[r] = min(root_min.get(r, i), i)
    order = sorted(root_min, key=root_min.get)
    cid = {r: k for k, r in enumerate(order)}
    labels = np.full(n, -1)
    for i in range(n):
        if core[i]:
            labels[i] = cid[find(i)]
        else:
            owners = [cid[find(j)] for j in nbrs[i] if core[j]]
            if owners:
                labels[i] = min(owners)
    return labels


def canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by first appearance; noise stays -1."""
    out = np.full(len(labels), -1)
    mapping = {}
    for i, l in enumerate(labels):
        if l >= 0:
            out[i] = mapping.setdefault(l, len(mapping))
    return out


def central_diff(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar f over a flat copy of x."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = np.zeros_like(flat)
    for k in range(len(flat)):
        old = flat[k]
        flat[k] = old + h
        fp = f(x)
        flat[k] = old - h
        fm = f(x)
        flat[k] = old
        g[k] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def rel_err(a, f, floor: float = 1e-6) -> np.ndarray:
    a, f = np.asarray(a), np.asarray(f)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


def trilinear_oracle(origin, cell, dims, params, p):
    """Direct triple loop over the 8 corners of the enclosing cell."""
    u = (np.asarray(p, float) - origin) / cell
    u = np.clip(u, 0, np.asarray(dims) - 1)
    base = np.minimum(np.floor(u).astype(int), np.asarray(dims) - 2)
    t = u - base
    nx, ny, _ = dims
    out = np.zeros(3)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (t[0] if dx else 1 - t[0]) * (t[1] if dy else 1 - t[1]) * (t[2] if dz else 1 - t[2])
                i, j, k = base + (dx, dy, dz)
                out += w * params[i + nx * (j + ny * k)]
    return out
