"""Trainable voxel lattice of flow vectors with trilinear lookup and its adjoint.

Corner (i, j, k) is stored at flat index ``i + nx * (j + ny * k)``; ``params``
has shape (nx * ny * nz, 3) and holds meters per frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, IoError, OnCellBoundary, ParseError
from .geometry import Aabb

DEFAULT_CELL_SIZE = 0.5
DEFAULT_MARGIN = 3.0

# corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1)
_CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])


@dataclass
class FlowGrid:
    origin: np.ndarray
    cell_size: float
    dims: tuple[int, int, int]
    params: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if not self.cell_size > 0:
            raise InvalidConfig(f"cell_size must be positive, got {self.cell_size}")
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise InvalidConfig(f"every grid dimension needs >= 2 corners, got {self.dims}")
        self.params = np.asarray(self.params, dtype=np.float64).reshape(self.num_corners, 3)

    @property
    def num_corners(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.cell_size * (np.asarray(self.dims) - 1)

    def corner_positions(self) -> np.ndarray:
        """World positions of every corner in flat storage order."""
        nx, ny, nz = self.dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        return self.origin + self.cell_size * ijk

    def flat_index(self, ijk: np.ndarray) -> np.ndarray:
        nx, ny, _ = self.dims
        ijk = np.asarray(ijk)
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    def copy(self) -> "FlowGrid":
        return FlowGrid(self.origin.copy(), self.cell_size, self.dims, self.params.copy())


def new_grid(scene_bounds: Aabb, cell_size: float = DEFAULT_CELL_SIZE,
             margin: float = DEFAULT_MARGIN) -> FlowGrid:
    """Zero-initialized grid spanning ``scene_bounds`` grown by ``margin``."""
    if not cell_size > 0:
        raise InvalidConfig(f"cell_size must be positive, got {cell_size}")
    if margin < 0:
        raise InvalidConfig("margin must be non-negative")
    box = scene_bounds.expand(margin)
    dims = np.maximum(np.ceil(box.extent / cell_size - 1e-9).astype(int) + 1, 2)
    n = int(np.prod(dims))
    return FlowGrid(box.min, float(cell_size), tuple(dims), np.zeros((n, 3)))


@dataclass(frozen=True)
class Stencil:
    """Trilinear corner indices and weights for a fixed set of query points.

    ``index`` and ``weight`` are (N, 8). Reused across epochs because the
    reference points never move.
    """

    index: np.ndarray
    weight: np.ndarray
    frac: np.ndarray
    clamped: np.ndarray
    num_corners: int

    def gather(self, params: np.ndarray) -> np.ndarray:
        """Interpolated (N, 3) flow."""
        return np.einsum("nc,ncd->nd", self.weight, params[self.index])

    def scatter(self, upstream: np.ndarray, grad_accum: np.ndarray) -> None:
        """Adjoint of :meth:`gather`: add ``w_c * upstream`` to each corner slot."""
        idx = self.index.ravel()
        for d in range(3):
            contrib = (self.weight * upstream[:, d:d + 1]).ravel()
            grad_accum[:, d] += np.bincount(idx, weights=contrib, minlength=self.num_corners)


def stencil(g: FlowGrid, points: np.ndarray) -> Stencil:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dims = np.asarray(g.dims)
    u = (pts - g.origin) / g.cell_size
    clamped_u = np.clip(u, 0.0, dims - 1)
    clamped = np.any(clamped_u != u, axis=1)
    base = np.minimum(np.floor(clamped_u).astype(np.int64), dims - 2)
    frac = clamped_u - base
    # per-corner weight = prod over axes of (frac if offset else 1 - frac)
    off = _CORNER_OFFSETS[None, :, :]
    w_axis = np.where(off == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    weight = w_axis.prod(axis=2)
    index = g.flat_index(base[:, None, :] + off)
    return Stencil(index, weight, frac, clamped, g.num_corners)


def query_flow(g: FlowGrid, p) -> np.ndarray:
    """Trilinearly interpolated flow at ``p``; (3,) in, (3,) out or (N, 3) in, (N, 3) out."""
    p = np.asarray(p, dtype=np.float64)
    out = stencil(g, p).gather(g.params)
    return out[0] if p.ndim == 1 else out


def scatter_grad(g: FlowGrid, p, upstream, grad_accum: np.ndarray) -> None:
    """Accumulate d(query_flow)/d(params)^T @ upstream into ``grad_accum`` in place."""
    if grad_accum.shape != g.params.shape:
        raise InvalidConfig(f"grad buffer shape {grad_accum.shape} != params {g.params.shape}")
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 3)
    stencil(g, p).scatter(up, grad_accum)


def query_flow_spatial_jacobian(g: FlowGrid, p) -> np.ndarray:
    """d(flow)/d(position) of the interpolant at ``p`` as a 3x3 matrix (rows: flow axes).

    Raises OnCellBoundary on cell faces and outside the grid, where the
    derivative is discontinuous.
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    st = stencil(g, p[None])
    frac = st.frac[0]
    if st.clamped[0] or np.any(frac <= 1e-12) or np.any(frac >= 1 - 1e-12):
        raise OnCellBoundary(f"point {p} lies on a cell face or outside the grid")
    vals = g.params[st.index[0]]                       # (8, 3)
    jac = np.zeros((3, 3))
    for axis in range(3):
        dw = np.ones(8)
        for other in range(3):
            sel = _CORNER_OFFSETS[:, other] == 1
            if other == axis:
                dw *= np.where(sel, 1.0, -1.0)
            else:
                dw *= np.where(sel, frac[other], 1.0 - frac[other])
        jac[:, axis] = dw @ vals / g.cell_size
    return jac


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "voxflow-grid-v1"


def save_checkpoint(g: FlowGrid, path) -> None:
    """One JSON header line, then the float32 little-endian parameter block."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "origin": [float(v) for v in g.origin],
        "cell_size": float(g.cell_size),
        "dims": list(g.dims),
    }
    try:
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n")
            fh.write(g.params.astype("<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> FlowGrid:
    try:
        with open(path, "rb") as fh:
            head = fh.readline()
            block = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        header = json.loads(head)
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        dims = tuple(int(d) for d in header["dims"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad checkpoint header") from exc
    n = int(np.prod(dims))
    if len(block) != n * 12:
        raise ParseError(f"{path}: expected {n * 12} parameter bytes, got {len(block)}")
    params = np.frombuffer(block, dtype="<f4").reshape(n, 3).astype(np.float64)
    return FlowGrid(np.array(header["origin"]), float(header["cell_size"]), dims, params)
