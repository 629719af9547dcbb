"""Point clouds, bounding boxes, file I/O and radius queries."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidConfig, IoError, ParseError

FORMATS = ("ply_ascii", "xyz_f32")


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional per-point evaluation channels.

    ``points`` is an (N, 3) float64 array. ``labels`` (int), ``gt_flow``
    (N, 3, meters/frame) and ``dynamic_mask`` (bool) are parallel arrays
    or None.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    gt_flow: Optional[np.ndarray] = None
    dynamic_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ParseError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(labels) != n:
                raise InvalidConfig(f"labels length {len(labels)} != {n} points")
            object.__setattr__(self, "labels", labels)
        if self.gt_flow is not None:
            flow = np.asarray(self.gt_flow, dtype=np.float64).reshape(-1, 3)
            if len(flow) != n:
                raise InvalidConfig(f"gt_flow length {len(flow)} != {n} points")
            if not np.all(np.isfinite(flow)):
                raise ParseError("gt_flow must be finite")
            object.__setattr__(self, "gt_flow", flow)
        if self.dynamic_mask is not None:
            mask = np.asarray(self.dynamic_mask, dtype=bool).reshape(-1)
            if len(mask) != n:
                raise InvalidConfig(f"dynamic_mask length {len(mask)} != {n} points")
            object.__setattr__(self, "dynamic_mask", mask)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, keep: np.ndarray) -> "PointCloud":
        """Select points (boolean mask or index array), keeping channels aligned."""
        return PointCloud(
            self.points[keep],
            labels=None if self.labels is None else self.labels[keep],
            gt_flow=None if self.gt_flow is None else self.gt_flow[keep],
            dynamic_mask=None if self.dynamic_mask is None else self.dynamic_mask[keep],
        )

    def aabb(self) -> "Aabb":
        if len(self) == 0:
            raise InvalidConfig("empty cloud has no bounding box")
        return Aabb(self.points.min(axis=0), self.points.max(axis=0))


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidConfig("bounding box corners must be finite")
        if np.any(lo > hi):
            raise InvalidConfig(f"empty bounding box: min {lo} > max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def expand(self, margin: float) -> "Aabb":
        return Aabb(self.min - margin, self.max + margin)

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def contains(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return np.all((p >= self.min) & (p <= self.max), axis=-1)


def union_aabb(clouds: Sequence[PointCloud]) -> Aabb:
    boxes = [c.aabb() for c in clouds if len(c)]
    if not boxes:
        raise InvalidConfig("all clouds are empty")
    box = boxes[0]
    for other in boxes[1:]:
        box = box.union(other)
    return box


class KdTree:
    """Immutable radius-query index over a snapshot of points.

    Backed by scipy's cKDTree; candidate hits are re-checked with the exact
    Euclidean norm so results match a brute-force scan bit for bit.
    """

    def __init__(self, points: np.ndarray):
        self.points = np.array(points, dtype=np.float64).reshape(-1, 3)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self) -> int:
        return len(self.points)

    def radius_neighbors(self, q, r: float) -> list[int]:
        """Indices of points within distance ``r`` of ``q`` (closed ball), ascending."""
        if r < 0:
            raise InvalidConfig("radius must be non-negative")
        if self._tree is None:
            return []
        q = np.asarray(q, dtype=np.float64).reshape(3)
        cand = self._tree.query_ball_point(q, r * (1.0 + 1e-9) + 1e-12)
        if not cand:
            return []
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        return cand[d <= r].tolist()

    def radius_neighbors_all(self, r: float) -> list[np.ndarray]:
        """Neighborhoods of every indexed point, each as a sorted index array."""
        if self._tree is None:
            return []
        cands = self._tree.query_ball_point(self.points, r * (1.0 + 1e-9) + 1e-12)
        out = []
        for i, cand in enumerate(cands):
            cand = np.sort(np.asarray(cand, dtype=np.int64))
            d = np.linalg.norm(self.points[cand] - self.points[i], axis=1)
            out.append(cand[d <= r])
        return out


def radius_neighbors(tree: KdTree, q, r: float) -> list[int]:
    return tree.radius_neighbors(q, r)


def filter_cloud(
    c: PointCloud,
    ego_radius: float = 3.0,
    max_height: float = 4.0,
    max_range: float = 50.0,
) -> PointCloud:
    """Drop the ego vehicle footprint, tall structures and far returns.

    The ego radius is measured in the XY plane; range is the full 3D norm.
    """
    if ego_radius < 0 or max_range < 0:
        raise InvalidConfig("filter radii must be non-negative")
    p = c.points
    keep = (
        (np.hypot(p[:, 0], p[:, 1]) > ego_radius)
        & (p[:, 2] <= max_height)
        & (np.linalg.norm(p, axis=1) <= max_range)
    )
    return c.subset(keep)


def ground_filter_z(c: PointCloud, z_threshold: float) -> PointCloud:
    """Flat-ground stand-in: keep points with z >= z_threshold."""
    return c.subset(c.points[:, 2] >= z_threshold)


# --- file I/O -------------------------------------------------------------


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _parse_ply_ascii(raw: bytes, path) -> PointCloud:
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not an ASCII PLY file") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' magic")

    elements: list[tuple[str, int, list[str]]] = []
    body_start = None
    for ln, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"{path}:{ln + 1}: malformed element line")
            try:
                elements.append((tok[1], int(tok[2]), []))
            except ValueError as exc:
                raise ParseError(f"{path}:{ln + 1}: bad element count") from exc
        elif tok[0] == "property":
            if not elements:
                raise ParseError(f"{path}:{ln + 1}: property before element")
            if tok[1] == "list":
                elements[-1][2].append("__list__")
            else:
                elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            body_start = ln + 1
            break
        else:
            raise ParseError(f"{path}:{ln + 1}: unexpected header line {line!r}")
    if body_start is None:
        raise ParseError(f"{path}: missing end_header")

    body = [ln for ln in lines[body_start:] if ln.strip()]
    cursor = 0
    vertex = None
    for name, count, props in elements:
        rows = body[cursor:cursor + count]
        if len(rows) != count:
            raise ParseError(f"{path}: element '{name}' expects {count} rows, got {len(rows)}")
        cursor += count
        if name == "vertex":
            vertex = (props, rows)
    if vertex is None:
        raise ParseError(f"{path}: no vertex element")

    props, rows = vertex
    if "__list__" in props:
        raise ParseError(f"{path}: list properties on vertices are unsupported")
    for axis in "xyz":
        if axis not in props:
            raise ParseError(f"{path}: vertex element lacks '{axis}'")
    if rows:
        try:
            table = np.array([[float(v) for v in r.split()] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric vertex value") from exc
        if table.ndim != 2 or table.shape[1] != len(props):
            raise ParseError(f"{path}: vertex rows must have {len(props)} values")
    else:
        table = np.zeros((0, len(props)))
    if not np.all(np.isfinite(table)):
        raise ParseError(f"{path}: non-finite vertex value")

    col = {name: table[:, i] for i, name in enumerate(props)}
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    gt = None
    if all(k in col for k in ("flow_x", "flow_y", "flow_z")):
        gt = np.stack([col["flow_x"], col["flow_y"], col["flow_z"]], axis=1)
    labels = col["label"].astype(np.int64) if "label" in col else None
    dyn = col["dynamic"] != 0 if "dynamic" in col else None
    return PointCloud(pts, labels=labels, gt_flow=gt, dynamic_mask=dyn)


def load_cloud(path, format: str = "ply_ascii") -> PointCloud:
    """Read a point cloud in one of ``FORMATS``."""
    if format not in FORMATS:
        raise InvalidConfig(f"unknown cloud format {format!r}; expected one of {FORMATS}")
    raw = _read_bytes(path)
    if format == "ply_ascii":
        return _parse_ply_ascii(raw, path)
    if len(raw) % 12:
        raise ParseError(f"{path}: size {len(raw)} is not a multiple of 12 bytes")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float64)
    if not np.all(np.isfinite(pts)):
        raise ParseError(f"{path}: non-finite coordinate")
    return PointCloud(pts)


def save_cloud(c: PointCloud, path, format: str = "ply_ascii") -> None:
    if format not in FORMATS:
        raise InvalidConfig(f"unknown cloud format {format!r}")
    try:
        if format == "xyz_f32":
            Path(path).write_bytes(c.points.astype("<f4").tobytes())
            return
        props = ["x", "y", "z"]
        cols = [c.points]
        if c.gt_flow is not None:
            props += ["flow_x", "flow_y", "flow_z"]
            cols.append(c.gt_flow)
        header = ["ply", "format ascii 1.0", f"element vertex {len(c)}"]
        header += [f"property double {p}" for p in props]
        if c.labels is not None:
            header.append("property uint label")
        if c.dynamic_mask is not None:
            header.append("property uchar dynamic")
        header.append("end_header")
        float_block = np.concatenate(cols, axis=1) if cols else np.zeros((len(c), 0))
        out = ["\n".join(header)]
        for i in range(len(c)):
            row = " ".join(repr(float(v)) for v in float_block[i])
            if c.labels is not None:
                row += f" {int(c.labels[i])}"
            if c.dynamic_mask is not None:
                row += f" {int(c.dynamic_mask[i])}"
            out.append(row)
        Path(path).write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --- sequence manifests -----------------------------------------------------


@dataclass
class Frame:
    path: str
    t: float


@dataclass
class SequenceManifest:
    frames: list[Frame]
    reference_index: int
    base_dir: Path = field(default_factory=lambda: Path("."))

    def __post_init__(self):
        if not self.frames:
            raise InvalidConfig("manifest has no frames")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidConfig("manifest frame times must be strictly increasing")
        if not 0 <= self.reference_index < len(self.frames):
            raise InvalidConfig(
                f"reference_index {self.reference_index} outside [0, {len(self.frames)})"
            )

    def frame_path(self, i: int) -> Path:
        p = Path(self.frames[i].path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def nominal_dt(self) -> float:
        if len(self.frames) < 2:
            return 0.1
        return float(np.median(np.diff([f.t for f in self.frames])))

    def to_json(self) -> dict:
        return {
            "frames": [{"path": f.path, "t": f.t} for f in self.frames],
            "reference_index": self.reference_index,
        }


def load_manifest(path) -> SequenceManifest:
    raw = _read_bytes(path)
    try:
        doc = json.loads(raw)
        frames = [Frame(str(f["path"]), float(f["t"])) for f in doc["frames"]]
        ref = int(doc["reference_index"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed manifest: {exc}") from exc
    return SequenceManifest(frames, ref, base_dir=Path(os.path.dirname(os.path.abspath(path))))


def save_manifest(m: SequenceManifest, path) -> None:
    try:
        Path(path).write_text(json.dumps(m.to_json(), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
