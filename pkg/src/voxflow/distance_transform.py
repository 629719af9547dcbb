"""Truncated 3D Euclidean distance transforms of support scans.

Values live at cell centers ``origin + (idx + 0.5) * cell`` in a C-ordered
(nx, ny, nz) array. Distances are measured between cell centers (occupied
cell = at least one target point), computed exactly with three separable
lower-envelope passes over squared distances.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import InvalidConfig, IoError
from .geometry import Aabb, PointCloud

DEFAULT_DT_CELL = 0.2
DEFAULT_TRUNCATION = 5.0
EPS_TRUNC = 1e-6

_CORNERS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])


@dataclass(frozen=True)
class DistanceTransform:
    origin: np.ndarray
    cell: float
    dims: tuple[int, int, int]
    values: np.ndarray
    truncation: float

    @property
    def bounds(self) -> Aabb:
        return Aabb(self.origin, self.origin + self.cell * np.asarray(self.dims))

    def centers(self) -> np.ndarray:
        """(nx*ny*nz, 3) cell centers in C order, matching ``values.ravel()``."""
        axes = [self.origin[a] + (np.arange(n) + 0.5) * self.cell for a, n in enumerate(self.dims)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


@numba.njit(cache=True)
def _envelope_1d(f, out, v, z):
    # lower envelope of parabolas (q - p)^2 + f[p]; infinite f[p] never enter it
    n = f.shape[0]
    k = -1
    for q in range(n):
        if not np.isfinite(f[q]):
            continue
        fq = f[q] + q * q
        while k >= 0:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        if k == 0:
            z[k] = -np.inf
        else:
            p = v[k - 1]
            z[k] = (fq - (f[p] + p * p)) / (2.0 * (q - p))
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


@numba.njit(cache=True)
def _separable_sq_edt(grid):
    nx, ny, nz = grid.shape
    nmax = max(nx, max(ny, nz))
    f = np.empty(nmax)
    out = np.empty(nmax)
    v = np.empty(nmax, dtype=np.int64)
    z = np.empty(nmax + 1)
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = grid[i, j, k]
            _envelope_1d(f[:nx], out[:nx], v, z)
            for i in range(nx):
                grid[i, j, k] = out[i]
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = grid[i, j, k]
            _envelope_1d(f[:ny], out[:ny], v, z)
            for j in range(ny):
                grid[i, j, k] = out[j]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = grid[i, j, k]
            _envelope_1d(f[:nz], out[:nz], v, z)
            for k in range(nz):
                grid[i, j, k] = out[k]
    return grid


def occupancy(target: PointCloud, origin: np.ndarray, cell: float, dims) -> np.ndarray:
    idx = np.floor((target.points - origin) / cell).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    occ = np.zeros(dims, dtype=bool)
    idx = idx[inside]
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return occ


def build_dt(
    target: PointCloud,
    bounds: Aabb | None = None,
    cell: float = DEFAULT_DT_CELL,
    truncation: float = DEFAULT_TRUNCATION,
) -> DistanceTransform:
    """Distance field of ``target`` over ``bounds`` (default: its AABB grown by ``truncation``)."""
    if len(target) == 0:
        raise InvalidConfig("cannot build a distance transform of an empty cloud")
    if not cell > 0:
        raise InvalidConfig(f"DT cell must be positive, got {cell}")
    if not truncation > 0:
        raise InvalidConfig(f"truncation must be positive, got {truncation}")
    if bounds is None:
        bounds = target.aabb().expand(truncation)
    dims = tuple(int(d) for d in np.maximum(np.ceil(bounds.extent / cell - 1e-9), 2))
    origin = bounds.min.copy()
    occ = occupancy(target, origin, cell, dims)
    if not occ.any():
        raise InvalidConfig("no target point falls inside the DT bounds")
    sq = np.where(occ, 0.0, np.inf)
    sq = _separable_sq_edt(sq)
    values = np.minimum(np.sqrt(sq) * cell, truncation)
    values.setflags(write=False)
    return DistanceTransform(origin, float(cell), dims, values, float(truncation))


def sample_dt(dt: DistanceTransform, p, eps_trunc: float = EPS_TRUNC):
    """Trilinear sample of the field with its exact spatial gradient.

    Returns ``(distance, grad, valid)``. Points outside the DT box report
    ``distance = truncation``; any invalid sample (outside, or within
    ``eps_trunc`` of the truncation plateau) has zero gradient.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = p.reshape(-1, 3)
    dims = np.asarray(dt.dims)
    upper = dt.origin + dt.cell * dims
    inside = np.all((pts >= dt.origin) & (pts <= upper), axis=1)

    u = (pts - dt.origin) / dt.cell - 0.5
    uc = np.clip(u, 0.0, dims - 1)
    free_axis = uc == u
    base = np.minimum(np.floor(uc).astype(np.int64), dims - 2)
    frac = uc - base

    off = _CORNERS[None]
    corner = base[:, None, :] + off
    vals = dt.values[corner[..., 0], corner[..., 1], corner[..., 2]]        # (N, 8)
    w_axis = np.where(off == 1, frac[:, None, :], 1.0 - frac[:, None, :])    # (N, 8, 3)
    dist = np.einsum("nc,nc->n", w_axis.prod(axis=2), vals)

    grad = np.empty_like(pts)
    sign = np.where(off == 1, 1.0, -1.0)
    for a in range(3):
        dw = sign[..., a] * np.prod(np.delete(w_axis, a, axis=2), axis=2)
        grad[:, a] = np.einsum("nc,nc->n", dw, vals) / dt.cell
    grad *= free_axis

    valid = inside & (dist < dt.truncation - eps_trunc)
    dist = np.where(inside, dist, dt.truncation)
    grad[~valid] = 0.0
    if single:
        return float(dist[0]), grad[0], bool(valid[0])
    return dist, grad, valid


def write_slice_pgm(dt: DistanceTransform, z_index: int, path) -> None:
    """Axial slice as 16-bit binary PGM, millimeters, rows along y."""
    nx, ny, nz = dt.dims
    if not 0 <= z_index < nz:
        raise InvalidConfig(f"slice index {z_index} outside [0, {nz})")
    mm = np.clip(np.rint(dt.values[:, :, z_index].T * 1000.0), 0, 65535).astype(">u2")
    try:
        with open(Path(path), "wb") as fh:
            fh.write(f"P5\n{nx} {ny}\n65535\n".encode())
            fh.write(mm.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
